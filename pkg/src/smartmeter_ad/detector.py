"""Per-timestep anomaly scores and threshold classification.

The score at step ``t`` is the squared Euclidean distance between the
4-channel input and its reconstruction, in normalised space:
``e_t = ||x_t - x̂_t||^2``. A step is normal (+1) when ``e_t <= theta`` and
abnormal (0) otherwise.
"""

from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .autoencoder import reconstruct
from .errors import DimensionError
from .preprocess import invert_normalizer

NORMAL = 1
ABNORMAL = 0
STRATEGIES = ("manual", "quantile", "mean_plus_k_std")


@dataclass(frozen=True)
class DetectorConfig:
    strategy: str = "quantile"
    theta: float = None
    q: float = 0.99
    k: float = 3.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == "manual" and (self.theta is None or self.theta < 0):
            raise ValueError("manual strategy needs theta >= 0")
        if not 0.0 < self.q < 1.0:
            raise ValueError("quantile q must lie in (0, 1)")
        if not self.k > 0:
            raise ValueError("k must be > 0")

    def to_dict(self):
        return asdict(self)


def reconstruction_error(x_t, xhat_t):
    x_t = np.asarray(x_t, dtype=np.float64)
    xhat_t = np.asarray(xhat_t, dtype=np.float64)
    if x_t.shape != xhat_t.shape:
        raise DimensionError(f"input length {x_t.shape} != reconstruction length {xhat_t.shape}")
    d = x_t - xhat_t
    return float(d @ d)


def step_errors(x, xhat):
    """``e_t`` for every step of ``(..., C)`` arrays."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(xhat, dtype=np.float64)
    return np.einsum("...c,...c->...", d, d)


def classify(e_t, theta):
    """+1 (normal) iff ``e_t <= theta``, else 0 (abnormal). Vectorises over arrays."""
    out = np.where(np.asarray(e_t) <= theta, NORMAL, ABNORMAL)
    return int(out) if out.ndim == 0 else out


def fit_threshold(validation_errors, cfg):
    """Choose theta from errors on normal data according to ``cfg.strategy``."""
    if cfg.strategy == "manual":
        return float(cfg.theta)
    e = np.asarray(validation_errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError(f"{cfg.strategy} threshold needs at least one validation error")
    if cfg.strategy == "quantile":
        return float(np.quantile(e, cfg.q, method="linear"))
    return float(e.mean() + cfg.k * e.std())


@dataclass
class AnomalyReport:
    """Columnar per-timestep report, ordered by household then time.

    ``inputs`` and ``reconstruction`` are de-normalised when statistics were
    supplied to :func:`score_series`; ``channel_errors`` (squared error per
    channel) and ``e_t`` stay in normalised space.
    """

    timestamps: np.ndarray
    household_ids: list
    e_t: np.ndarray
    labels: np.ndarray
    inputs: np.ndarray
    reconstruction: np.ndarray
    channel_errors: np.ndarray
    theta: float
    model: str = "bilstm"

    def __len__(self):
        return len(self.e_t)

    def sorted_view(self):
        """Row indices by descending score; ties keep report order."""
        return np.argsort(-self.e_t, kind="stable")

    def with_threshold(self, theta):
        return AnomalyReport(self.timestamps, self.household_ids, self.e_t, classify(self.e_t, theta),
                             self.inputs, self.reconstruction, self.channel_errors, float(theta), self.model)


def window_errors(model, windows, chunk=512):
    """``(reconstructions (B, T, C), e_t (B, T))`` for normalised windows."""
    X = np.stack([w.values for w in windows])
    R = np.empty_like(X)
    for s in range(0, len(X), chunk):
        R[s:s + chunk] = reconstruct(model, X[s:s + chunk])
    return R, step_errors(X, R)


def score_series(model, windows, theta, stats=None):
    """Score and label every timestep covered by ``windows``.

    Steps covered by several windows (stride shorter than the window) get
    the mean of their errors and reconstructions.
    """
    if not windows:
        raise ValueError("no windows to score")
    cfg = model.config
    for w in windows:
        if w.values.shape != (cfg.window_length, cfg.channels):
            raise DimensionError(f"window shape {w.values.shape} does not match model "
                                 f"({cfg.window_length}, {cfg.channels})")
    R, E = window_errors(model, windows)
    acc = defaultdict(lambda: [0, 0.0, 0.0, 0.0, 0.0])
    for w, r, e in zip(windows, R, E):
        for k, ts in enumerate(w.timestamps):
            slot = acc[(w.household_id, int(ts))]
            if slot[0] == 0:
                slot[4] = w.values[k]
            slot[0] += 1
            slot[1] += e[k]
            slot[2] = slot[2] + r[k]
            slot[3] = slot[3] + (w.values[k] - r[k]) ** 2
    keys = sorted(acc)
    n = np.array([acc[k][0] for k in keys], dtype=np.float64)
    e_t = np.array([acc[k][1] for k in keys]) / n
    recon = np.stack([acc[k][2] for k in keys]) / n[:, None]
    ch_err = np.stack([acc[k][3] for k in keys]) / n[:, None]
    inputs = np.stack([acc[k][4] for k in keys])
    if stats is not None:
        inputs = invert_normalizer(inputs, stats)
        recon = invert_normalizer(recon, stats)
    return AnomalyReport(
        timestamps=np.array([k[1] for k in keys], dtype=np.int64),
        household_ids=[k[0] for k in keys],
        e_t=e_t,
        labels=classify(e_t, theta),
        inputs=inputs,
        reconstruction=recon,
        channel_errors=ch_err,
        theta=float(theta),
        model=model.name,
    )
