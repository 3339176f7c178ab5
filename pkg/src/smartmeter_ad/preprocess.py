"""Meter records to clean, regular, optionally denoised, normalised windows.

Pipeline: :func:`clean` (tag filter, dedupe, sort) -> :func:`resample_15min`
(sum per bin, short gaps interpolated) -> optional :func:`denoise_series`
(Haar DWT, soft universal threshold) -> :func:`windowize`. Normalisation
statistics are fitted on training windows only and travel with the model.
"""

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import CHANNELS, STEP_SECONDS
from .autoencoder import Window
from .datagen import RawReading, parse_time
from .errors import DegenerateChannelError, DimensionError, SchemaError

RAW_FIELDS = ("timestamp", "household_id", "channel", "value", "tag")


class Reject(NamedTuple):
    line: int
    field: str
    reason: str
    raw: str


def parse_reading(row, line=0, path="<records>"):
    """Turn one CSV row mapping into a :class:`RawReading` or raise SchemaError."""
    for name in RAW_FIELDS:
        if row.get(name) in (None, ""):
            raise SchemaError(path, line, name, "missing value")
    try:
        ts = parse_time(row["timestamp"])
    except ValueError:
        raise SchemaError(path, line, "timestamp", f"not ISO-8601: {row['timestamp']!r}") from None
    channel = row["channel"]
    if channel not in CHANNELS:
        raise SchemaError(path, line, "channel", f"unknown channel {channel!r}")
    try:
        value = float(row["value"])
    except ValueError:
        raise SchemaError(path, line, "value", f"not a number: {row['value']!r}") from None
    if not math.isfinite(value) or value < 0:
        raise SchemaError(path, line, "value", f"must be finite and non-negative, got {value!r}")
    try:
        tag = int(row["tag"])
    except ValueError:
        raise SchemaError(path, line, "tag", f"not an integer: {row['tag']!r}") from None
    return RawReading(ts, row["household_id"], channel, value, tag)


@dataclass
class CleanResult:
    groups: dict  # (household_id, channel) -> time-sorted list of RawReading
    rejects: list

    @property
    def records(self):
        return [r for key in sorted(self.groups) for r in self.groups[key]]

    def households(self):
        return sorted({h for h, _ in self.groups})


def clean(records, valid_tags=frozenset({0}), first_line=1):
    """Drop invalid tags and duplicate keys; group and sort by time.

    ``records`` may hold :class:`RawReading` objects or raw CSV row mappings
    (parsed here). Every dropped record lands in ``rejects`` with a reason:
    unparseable rows, tags outside ``valid_tags``, and later duplicates of a
    ``(timestamp, household, channel)`` key. Reject line numbers count
    from ``first_line`` (2 for rows read from a CSV file with a header).
    """
    seen = set()
    groups = defaultdict(list)
    rejects = []
    for line, rec in enumerate(records, start=first_line):
        if not isinstance(rec, RawReading):
            try:
                rec = parse_reading(rec, line)
            except SchemaError as e:
                rejects.append(Reject(line, e.field, str(e), repr(dict(rec))))
                continue
        if rec.tag not in valid_tags:
            rejects.append(Reject(line, "tag", f"tag {rec.tag} not in valid set", repr(tuple(rec))))
            continue
        key = (rec.timestamp, rec.household_id, rec.channel)
        if key in seen:
            rejects.append(Reject(line, "timestamp", "duplicate (timestamp, household, channel)", repr(tuple(rec))))
            continue
        seen.add(key)
        groups[(rec.household_id, rec.channel)].append(rec)
    for key in groups:
        groups[key].sort(key=lambda r: r.timestamp)
    return CleanResult(dict(groups), rejects)


@dataclass
class RegularSeries:
    """One household's channels on a 15-minute grid starting at ``start``.

    ``values``, ``missing`` and ``interpolated`` are ``(N, 4)``; missing
    entries hold NaN.
    """

    household_id: str
    start: int
    values: np.ndarray
    missing: np.ndarray
    interpolated: np.ndarray
    step: int = STEP_SECONDS

    def __len__(self):
        return self.values.shape[0]

    @property
    def timestamps(self):
        return self.start + self.step * np.arange(len(self), dtype=np.int64)


def _interpolate_short_gaps(values, missing, max_gap):
    """Linear fill of interior runs of at most ``max_gap`` missing bins, in place."""
    filled = np.zeros_like(missing)
    n = len(values)
    t = 0
    while t < n:
        if not missing[t]:
            t += 1
            continue
        end = t
        while end < n and missing[end]:
            end += 1
        if t > 0 and end < n and end - t <= max_gap:
            left, right = values[t - 1], values[end]
            span = end - t + 1
            for k in range(t, end):
                w = (k - t + 1) / span
                values[k] = left + (right - left) * w
            missing[t:end] = False
            filled[t:end] = True
        t = end
    return filled


def resample_15min(readings, start=None, n_bins=None, max_gap=4):
    """Sum one household's readings into 15-minute bins.

    ``readings`` are time-sorted :class:`RawReading` of a single household
    (any channels). The grid starts at ``start`` (default: the first reading
    floored to a bin boundary) and spans ``n_bins`` bins (default: through
    the last reading). Bins without readings are missing; interior gaps of at
    most ``max_gap`` bins are linearly interpolated, longer ones stay
    missing. Readings outside the grid are ignored.
    """
    readings = list(readings)
    households = {r.household_id for r in readings}
    if len(households) > 1:
        raise ValueError(f"resample_15min expects a single household, got {sorted(households)}")
    hid = households.pop() if households else ""
    if start is None:
        start = (min(r.timestamp for r in readings) // STEP_SECONDS) * STEP_SECONDS if readings else 0
    if start % STEP_SECONDS:
        raise ValueError("grid start must be aligned to a 15-minute boundary")
    if n_bins is None:
        n_bins = (max(r.timestamp for r in readings) - start) // STEP_SECONDS + 1 if readings else 0
    C = len(CHANNELS)
    col = {c: k for k, c in enumerate(CHANNELS)}
    sums = np.zeros((n_bins, C))
    counts = np.zeros((n_bins, C), dtype=np.int64)
    for r in readings:
        b = (r.timestamp - start) // STEP_SECONDS
        if 0 <= b < n_bins:
            sums[b, col[r.channel]] += r.value
            counts[b, col[r.channel]] += 1
    missing = counts == 0
    values = np.where(missing, np.nan, sums)
    interpolated = np.zeros_like(missing)
    for c in range(C):
        interpolated[:, c] = _interpolate_short_gaps(values[:, c], missing[:, c], max_gap)
    return RegularSeries(hid, int(start), values, missing, interpolated)


def haar_dwt(x, levels):
    """Orthonormal Haar analysis. Returns ``(approx, [d_1 (finest), ..., d_levels])``."""
    a = np.asarray(x, dtype=np.float64)
    if levels < 0 or len(a) % (1 << levels):
        raise DimensionError(f"length {len(a)} is not divisible by 2**{levels}")
    details = []
    r2 = math.sqrt(2.0)
    for _ in range(levels):
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) / r2)
        a = (even + odd) / r2
    return a, details


def haar_idwt(approx, details):
    """Inverse of :func:`haar_dwt`."""
    a = np.asarray(approx, dtype=np.float64)
    r2 = math.sqrt(2.0)
    for d in reversed(details):
        out = np.empty(2 * len(a))
        out[0::2] = (a + d) / r2
        out[1::2] = (a - d) / r2
        a = out
    return a


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def universal_threshold(finest, n):
    """``sigma * sqrt(2 ln n)`` with ``sigma = median(|finest|) / 0.6745``."""
    sigma = np.median(np.abs(finest)) / 0.6745
    return sigma * math.sqrt(2.0 * math.log(n)) if n > 1 else 0.0


def _haar_mean(x, levels):
    # pairwise means and half-differences; detail j equals the orthonormal
    # coefficient divided by 2**(j/2), but constants stay exact in floats
    a = x
    details = []
    for _ in range(levels):
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) / 2.0)
        a = (even + odd) / 2.0
    return a, details


def _haar_mean_inverse(a, details):
    for d in reversed(details):
        out = np.empty(2 * len(a))
        out[0::2] = a + d
        out[1::2] = a - d
        a = out
    return a


def dwt_denoise(series, levels=3, threshold_rule="universal"):
    """Haar wavelet shrinkage of a gap-free 1-d signal.

    ``threshold_rule`` is ``"universal"`` or a fixed non-negative number
    (``0`` disables shrinkage), applied to orthonormal Haar coefficients.
    Lengths that are not a multiple of ``2**levels`` are padded by symmetric
    reflection and cropped back.
    """
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    block = 1 << levels
    if n < block:
        raise DimensionError(f"series of length {n} is shorter than 2**levels = {block}")
    pad = (-n) % block
    xp = np.concatenate([x, x[::-1][:pad]]) if pad else x
    approx, details = _haar_mean(xp, levels)
    if threshold_rule == "universal":
        lam = universal_threshold(details[0] * math.sqrt(2.0), n)
    else:
        lam = float(threshold_rule)
        if lam < 0:
            raise ValueError("threshold must be non-negative")
    if lam > 0:
        # shrinking c = 2**(j/2) d by lam is shrinking d by lam / 2**(j/2)
        details = [soft_threshold(d, lam / 2.0 ** ((j + 1) / 2)) for j, d in enumerate(details)]
    return _haar_mean_inverse(approx, details)[:n]


def denoise_series(series, levels=3, threshold_rule="universal"):
    """Denoise each channel of a RegularSeries over its gap-free runs.

    Runs shorter than ``2**levels`` are left untouched.
    """
    values = series.values.copy()
    for c in range(values.shape[1]):
        miss = series.missing[:, c]
        t, n = 0, len(values)
        while t < n:
            if miss[t]:
                t += 1
                continue
            end = t
            while end < n and not miss[end]:
                end += 1
            if end - t >= (1 << levels):
                values[t:end, c] = dwt_denoise(values[t:end, c], levels, threshold_rule)
            t = end
    return RegularSeries(series.household_id, series.start, values, series.missing.copy(),
                         series.interpolated.copy(), series.step)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(train_values):
    """Per-channel mean and population std over everything but the last axis."""
    x = np.asarray(train_values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot fit normalisation on empty data")
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    bad = [CHANNELS[c] if c < len(CHANNELS) else str(c) for c in np.nonzero(~(std > 0))[0]]
    if bad:
        raise DegenerateChannelError(f"zero-variance channel(s): {', '.join(bad)}")
    return NormalizationStats(mean, std)


def apply_normalizer(x, stats):
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


def invert_normalizer(z, stats):
    return np.asarray(z, dtype=np.float64) * stats.std + stats.mean


def windowize(series, window_length, stride):
    """Sliding windows over ``series`` that contain no missing entries."""
    if window_length < 1 or stride < 1:
        raise ValueError("window_length and stride must be >= 1")
    n = len(series)
    if n < window_length:
        return []
    bad = series.missing.any(axis=1).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(bad)])
    out = []
    for s in range(0, n - window_length + 1, stride):
        if csum[s + window_length] - csum[s]:
            continue
        out.append(Window(series.values[s:s + window_length].copy(),
                          origin=int(series.start + s * series.step),
                          household_id=series.household_id, step=series.step))
    return out


@dataclass(frozen=True)
class PreprocessConfig:
    valid_tags: tuple = (0,)
    max_gap: int = 4
    denoise: bool = False
    dwt_levels: int = 3
    threshold_rule: object = "universal"
    window_length: int = 96
    stride: int = 96

    def __post_init__(self):
        if self.max_gap < 0 or self.dwt_levels < 1:
            raise ValueError("max_gap must be >= 0 and dwt_levels >= 1")
        if self.window_length < 1 or self.stride < 1:
            raise ValueError("window_length and stride must be >= 1")
        if self.threshold_rule != "universal":
            if isinstance(self.threshold_rule, bool) or not isinstance(self.threshold_rule, (int, float)) \
                    or self.threshold_rule < 0:
                raise ValueError("threshold_rule must be 'universal' or a non-negative number")


def build_series(cleaned, cfg=PreprocessConfig()):
    """One RegularSeries per household from :func:`clean` output, on a shared grid.

    The grid covers the first to the last reading over all households so
    windows from different households align in time.
    """
    by_house = defaultdict(list)
    for (hid, _), recs in cleaned.groups.items():
        by_house[hid].extend(recs)
    if not by_house:
        return []
    t_min = min(r.timestamp for recs in by_house.values() for r in recs)
    t_max = max(r.timestamp for recs in by_house.values() for r in recs)
    start = (t_min // STEP_SECONDS) * STEP_SECONDS
    n_bins = (t_max - start) // STEP_SECONDS + 1
    out = []
    for hid in sorted(by_house):
        recs = sorted(by_house[hid], key=lambda r: (r.timestamp, r.channel))
        s = resample_15min(recs, start, n_bins, cfg.max_gap)
        if cfg.denoise:
            s = denoise_series(s, cfg.dwt_levels, cfg.threshold_rule)
        out.append(s)
    return out


def preprocess(records, cfg=PreprocessConfig(), first_line=1):
    """Full pipeline. Returns ``(windows, series, rejects)``."""
    cleaned = clean(records, frozenset(cfg.valid_tags), first_line)
    series = build_series(cleaned, cfg)
    windows = [w for s in series for w in windowize(s, cfg.window_length, cfg.stride)]
    return windows, series, cleaned.rejects
