"""Mini-batch training: Adam, inverted dropout, global-norm clipping.

Dropout acts on the encoder output (the latent vector) and only while
training. Per-epoch losses are recomputed after each epoch with dropout off,
so every reported number is a plain MSE of one parameter snapshot.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autoencoder import loss_and_grads, reconstruct
from .errors import DimensionError, DivergenceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    dropout_rate: float = 0.1
    clip_norm: float = 5.0
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    @property
    def epochs(self):
        return len(self.train_loss)

    def rows(self):
        """``(epoch, train_loss, val_loss)`` tuples, epochs counted from 1."""
        return [(e + 1, tr, va) for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss))]


def split_dataset(windows, fraction, seed):
    """Shuffle deterministically and split into ``(train, validation)``.

    The training part has ``ceil(n * fraction)`` items, kept within
    ``[1, n - 1]`` so neither side ends up empty.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(windows)
    if n < 2:
        raise ValueError("need at least two windows to split")
    # round first: 0.8 * 15 is 12.000000000000002 in binary floating point
    n_train = min(max(math.ceil(round(n * fraction, 9)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return [windows[i] for i in order[:n_train]], [windows[i] for i in order[n_train:]]


def global_norm(grads):
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_gradients(grads, max_norm):
    """Scale all gradients by ``max_norm / norm`` when the global L2 norm exceeds it."""
    if not max_norm > 0:
        raise ValueError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}


def dropout_mask(shape, rate, rng):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def apply_dropout(h, rate, rng, training):
    """Inverted dropout; identity at inference or for ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    h = np.asarray(h, dtype=np.float64)
    if not training or rate == 0.0:
        return h
    return h * dropout_mask(h.shape, rate, rng)


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience.
    """
    if set(params) != set(grads):
        raise DimensionError("parameter and gradient names differ")
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def stack_values(windows):
    if isinstance(windows, np.ndarray):
        return windows
    return np.stack([w.values for w in windows])


def mean_loss(model, windows, chunk=1024):
    """Mean MSE over windows of equal length, evaluated in inference mode."""
    X = stack_values(windows)
    total = 0.0
    for s in range(0, len(X), chunk):
        part = X[s:s + chunk]
        total += float(np.sum((reconstruct(model, part) - part) ** 2))
    return total / X.size


def train(model, windows, cfg, validation=None):
    """Fit ``model`` (in place) and return ``(model, TrainReport)``.

    Without ``validation`` the windows are split by ``cfg.train_fraction``.
    Each epoch shuffles the training windows with a generator seeded by
    ``(cfg.seed, epoch)``; the last partial batch is kept. Batch gradients
    are the mean over windows.
    """
    if len(windows) == 0:
        raise ValueError("no training windows")
    if validation is None:
        windows, validation = split_dataset(windows, cfg.train_fraction, cfg.seed)
    X = stack_values(windows)
    V = stack_values(validation)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    report = TrainReport()
    latent = model.config.latent_size
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(X))
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        for b, s in enumerate(range(0, len(X), cfg.batch_size), start=1):
            batch = X[order[s:s + cfg.batch_size]]
            mask = None
            if cfg.dropout_rate > 0:
                mask = dropout_mask((len(batch), latent), cfg.dropout_rate, drop_rng)
            loss, grads = loss_and_grads(model, batch, dropout_mask=mask)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            if math.isfinite(cfg.clip_norm):
                grads = clip_gradients(grads, cfg.clip_norm)
            adam_step(params, grads, state, cfg)
        tr = mean_loss(model, X)
        va = mean_loss(model, V) if len(V) else float("nan")
        if not math.isfinite(tr):
            raise DivergenceError(epoch, b, tr)
        report.train_loss.append(tr)
        report.val_loss.append(va)
        report.wall_time.append(time.perf_counter() - t0)
        log.info("epoch %d/%d train %.6f val %.6f (%.1fs)", epoch, cfg.epochs, tr, va, report.wall_time[-1])
    return model, report
