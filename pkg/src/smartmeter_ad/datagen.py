"""Synthetic multichannel smart-meter data with labelled anomalies.

Each household gets a per-channel consumption profile: a daily sinusoid
peaking at a channel-specific hour, a weekend factor, multiplicative scale
and phase jitter per household, and Gaussian noise, clipped at zero. Readings
land on the 15-minute grid.

Anomalies are placed independently at each (timestep, channel) position with
probability ``anomaly_rate``:

- ``spike``: the reading is raised to ``local_max + k * std`` where
  ``local_max`` is the clean maximum within one day either side and ``std``
  the household's clean channel standard deviation, ``k`` drawn from
  ``spike_range``. This is the "peak waveform" morphology.
- ``dip``: the reading is multiplied by ``dip_factor``.
- ``level_shift``: ``k * std`` is added over ``shift_length`` steps.

Random streams are keyed by ``(seed, household, stream)`` so households are
independent and a household's profile stays the same across periods
generated with different ``day_offset``.
"""

from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import NamedTuple

import numpy as np

from . import CHANNELS, STEP_SECONDS

STEPS_PER_DAY = 86400 // STEP_SECONDS
ANOMALY_TYPES = ("spike", "dip", "level_shift")


class RawReading(NamedTuple):
    timestamp: int  # seconds since the Unix epoch, UTC
    household_id: str
    channel: str
    value: float
    tag: int = 0


class AnomalyLabel(NamedTuple):
    timestamp: int
    household_id: str
    channel: str
    kind: str
    magnitude: float


@dataclass(frozen=True)
class ChannelProfile:
    level: float  # mean consumption per 15-minute step
    amplitude: float  # relative daily swing
    peak_hour: float
    weekend_factor: float


DEFAULT_PROFILES = {
    "electricity": ChannelProfile(0.25, 0.6, 19.0, 1.15),
    "water": ChannelProfile(0.015, 0.8, 8.0, 1.10),
    "heating": ChannelProfile(0.6, 0.4, 6.0, 1.05),
    "hot_water": ChannelProfile(0.01, 0.7, 7.0, 1.10),
}


def parse_time(text):
    """ISO-8601 UTC (``...Z`` or ``+00:00``) to epoch seconds."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_time(ts):
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class GenConfig:
    n_households: int = 20
    n_days: int = 30
    start: str = "2021-01-04T00:00:00Z"
    day_offset: int = 0
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    household_scale: tuple = (0.7, 1.3)
    phase_jitter_hours: float = 0.5
    noise_std: float = 0.05  # relative to the household's channel level
    anomaly_rate: float = 0.05
    anomaly_types: tuple = ("spike",)
    spike_range: tuple = (3.0, 6.0)  # multiples of channel std
    dip_factor: float = 0.1
    shift_length: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_households < 1 or self.n_days < 1:
            raise ValueError("n_households and n_days must be >= 1")
        if not 0.0 <= self.anomaly_rate < 0.5:
            raise ValueError("anomaly_rate must lie in [0, 0.5)")
        if not self.anomaly_types or set(self.anomaly_types) - set(ANOMALY_TYPES):
            raise ValueError(f"anomaly_types must be a nonempty subset of {ANOMALY_TYPES}")
        lo, hi = self.spike_range
        if not 0 < lo <= hi:
            raise ValueError("spike_range must satisfy 0 < low <= high")
        if not 0 < self.dip_factor < 1:
            raise ValueError("dip_factor must lie in (0, 1)")
        if set(self.profiles) != set(CHANNELS):
            raise ValueError(f"profiles must cover exactly {CHANNELS}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        parse_time(self.start)

    def to_dict(self):
        d = asdict(self)
        d["profiles"] = {k: asdict(v) for k, v in self.profiles.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "profiles" in d:
            d["profiles"] = {k: ChannelProfile(**v) for k, v in d["profiles"].items()}
        for k in ("household_scale", "anomaly_types", "spike_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class LabeledDataset:
    records: list
    truth: list


def household_id(index):
    return f"hh{index + 1:04d}"


def _clean_signal(cfg, h, n_steps):
    """Clean ``(n_steps, 4)`` series for household ``h``."""
    prof_rng = np.random.default_rng([cfg.seed, h, 0])
    noise_rng = np.random.default_rng([cfg.seed, h, 1, cfg.day_offset])
    step = np.arange(n_steps) + cfg.day_offset * STEPS_PER_DAY
    hour = (step % STEPS_PER_DAY) * (24.0 / STEPS_PER_DAY)
    start_dow = datetime.fromtimestamp(parse_time(cfg.start), tz=timezone.utc).weekday()
    weekend = ((start_dow + step // STEPS_PER_DAY) % 7) >= 5
    out = np.empty((n_steps, len(CHANNELS)))
    for c, name in enumerate(CHANNELS):
        p = cfg.profiles[name]
        scale = prof_rng.uniform(*cfg.household_scale)
        peak = p.peak_hour + prof_rng.normal(0.0, cfg.phase_jitter_hours)
        level = p.level * scale
        daily = 1.0 + p.amplitude * np.sin(2 * np.pi * (hour - peak + 6.0) / 24.0)
        week = np.where(weekend, p.weekend_factor, 1.0)
        noise = noise_rng.normal(0.0, cfg.noise_std * level, n_steps)
        out[:, c] = np.maximum(level * daily * week + noise, 0.0)
    return out


def _inject(cfg, h, clean):
    """Return ``(values, labels)`` with anomalies applied to a copy of ``clean``."""
    rng = np.random.default_rng([cfg.seed, h, 2, cfg.day_offset])
    values = clean.copy()
    n, C = clean.shape
    if cfg.anomaly_rate == 0:
        return values, []
    hits = rng.random((n, C)) < cfg.anomaly_rate
    kinds = rng.integers(0, len(cfg.anomaly_types), size=(n, C))
    mags = rng.uniform(*cfg.spike_range, size=(n, C))
    std = clean.std(axis=0)
    labelled = np.zeros((n, C), dtype=bool)
    labels = []
    day = STEPS_PER_DAY
    for t, c in zip(*np.nonzero(hits)):
        if labelled[t, c]:
            continue
        kind = cfg.anomaly_types[kinds[t, c]]
        k = float(mags[t, c])
        if kind == "spike":
            local = clean[max(0, t - day):t + day + 1, c].max()
            values[t, c] = local + k * std[c]
            span = [t]
        elif kind == "dip":
            values[t, c] = clean[t, c] * cfg.dip_factor
            k = cfg.dip_factor
            span = [t]
        else:
            span = [s for s in range(t, min(n, t + cfg.shift_length)) if not labelled[s, c]]
            values[span, c] += k * std[c]
        for s in span:
            labelled[s, c] = True
            labels.append((s, c, kind, k))
    return values, labels


def generate(cfg):
    """Build a :class:`LabeledDataset` for ``cfg``; deterministic given the seed."""
    n_steps = cfg.n_days * STEPS_PER_DAY
    t0 = parse_time(cfg.start) + cfg.day_offset * 86400
    stamps = t0 + STEP_SECONDS * np.arange(n_steps, dtype=np.int64)
    records, truth = [], []
    for h in range(cfg.n_households):
        hid = household_id(h)
        values, labels = _inject(cfg, h, _clean_signal(cfg, h, n_steps))
        for t in range(n_steps):
            ts = int(stamps[t])
            for c, name in enumerate(CHANNELS):
                records.append(RawReading(ts, hid, name, float(values[t, c]), 0))
        for s, c, kind, k in sorted(labels):
            truth.append(AnomalyLabel(int(stamps[s]), hid, CHANNELS[c], kind, float(k)))
    return LabeledDataset(records, truth)


def generate_split(cfg, contaminate_training=False):
    """``(train, evaluation)`` datasets over consecutive periods.

    The training period is anomaly-free unless ``contaminate_training``; the
    evaluation period follows it and carries anomalies at ``cfg.anomaly_rate``.
    """
    train_cfg = cfg if contaminate_training else replace(cfg, anomaly_rate=0.0)
    eval_cfg = replace(cfg, day_offset=cfg.day_offset + cfg.n_days)
    return generate(train_cfg), generate(eval_cfg)


def export_csv(ds, raw_path, truth_path):
    """Write the raw-reading and ground-truth CSV files; returns both paths."""
    from .formats import write_raw_csv, write_truth_csv

    return write_raw_csv(raw_path, ds.records), write_truth_csv(truth_path, ds.truth)


def ingest_csv(raw_path, truth_path):
    """Read files written by :func:`export_csv` back into a LabeledDataset."""
    from .formats import read_raw_csv, read_truth_csv

    return LabeledDataset(read_raw_csv(raw_path), read_truth_csv(truth_path))
