"""Recurrent sequence autoencoder.

The encoder is a bidirectional LSTM whose two final hidden states are
concatenated into the latent vector. The decoder is a uni-directional LSTM
fed that latent vector at every step (repeat-vector decoding) from a zero
initial state, and a linear projection maps each decoder hidden state back
to the channel space. With ``bidirectional=False`` the encoder's backward
half is dropped and the latent shrinks to ``encoder_hidden``; that is the
uni-directional baseline.

Windows are ``(T, C)`` arrays, batches ``(B, T, C)``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError
from .linalg import DTYPE, xavier_init
from .recurrent import LstmParams, lstm_backward, lstm_sequence_forward


@dataclass(frozen=True)
class ModelConfig:
    window_length: int = 96
    channels: int = 4
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    bidirectional: bool = True

    def __post_init__(self):
        for name in ("window_length", "channels", "encoder_hidden", "decoder_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def latent_size(self):
        return self.encoder_hidden * (2 if self.bidirectional else 1)

    def to_dict(self):
        return asdict(self)


@dataclass
class Window:
    """A gap-free ``window_length x channels`` slice of one household's series."""

    values: np.ndarray
    origin: int = 0
    household_id: str = ""
    step: int = 900

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=DTYPE)
        if self.values.ndim != 2:
            raise DimensionError(f"window values must be (T, C), got shape {self.values.shape}")

    @property
    def timestamps(self):
        return self.origin + self.step * np.arange(self.values.shape[0], dtype=np.int64)


@dataclass
class AutoencoderModel:
    config: ModelConfig
    encoder_fwd: LstmParams
    decoder: LstmParams
    W_out: np.ndarray
    b_out: np.ndarray
    encoder_bwd: LstmParams = None
    name: str = field(default="bilstm")

    def __post_init__(self):
        cfg = self.config
        if self.encoder_fwd.input_size != cfg.channels or self.encoder_fwd.hidden_size != cfg.encoder_hidden:
            raise DimensionError("encoder shape disagrees with config")
        if cfg.bidirectional:
            if self.encoder_bwd is None:
                raise DimensionError("bidirectional model needs a backward encoder")
            if (self.encoder_bwd.input_size, self.encoder_bwd.hidden_size) != (cfg.channels, cfg.encoder_hidden):
                raise DimensionError("backward encoder shape disagrees with config")
        elif self.encoder_bwd is not None:
            raise DimensionError("uni-directional model must not carry a backward encoder")
        if self.decoder.input_size != cfg.latent_size or self.decoder.hidden_size != cfg.decoder_hidden:
            raise DimensionError("decoder shape disagrees with config")
        self.W_out = np.asarray(self.W_out, dtype=DTYPE)
        self.b_out = np.asarray(self.b_out, dtype=DTYPE)
        if self.W_out.shape != (cfg.channels, cfg.decoder_hidden) or self.b_out.shape != (cfg.channels,):
            raise DimensionError("output projection shape disagrees with config")

    @classmethod
    def init(cls, config, rng, name=None):
        cfg = config
        enc_f = LstmParams.init(cfg.channels, cfg.encoder_hidden, rng)
        enc_b = LstmParams.init(cfg.channels, cfg.encoder_hidden, rng) if cfg.bidirectional else None
        dec = LstmParams.init(cfg.latent_size, cfg.decoder_hidden, rng)
        W_out = xavier_init(cfg.channels, cfg.decoder_hidden, rng)
        return cls(cfg, enc_f, dec, W_out, np.zeros(cfg.channels), enc_b,
                   name=name or ("bilstm" if cfg.bidirectional else "lstm"))

    @classmethod
    def zeros(cls, config, name=None):
        cfg = config
        return cls(
            cfg,
            LstmParams.zeros(cfg.channels, cfg.encoder_hidden),
            LstmParams.zeros(cfg.latent_size, cfg.decoder_hidden),
            np.zeros((cfg.channels, cfg.decoder_hidden)),
            np.zeros(cfg.channels),
            LstmParams.zeros(cfg.channels, cfg.encoder_hidden) if cfg.bidirectional else None,
            name=name or ("bilstm" if cfg.bidirectional else "lstm"),
        )

    def parameters(self):
        """Flat, ordered ``name -> array`` mapping sharing storage with the model."""
        out = {}
        parts = [("encoder.forward", self.encoder_fwd)]
        if self.encoder_bwd is not None:
            parts.append(("encoder.backward", self.encoder_bwd))
        parts.append(("decoder", self.decoder))
        for prefix, lstm in parts:
            for n, a in lstm.tensors().items():
                out[f"{prefix}.{n}"] = a
        out["projection.W"] = self.W_out
        out["projection.b"] = self.b_out
        return out

    def load_parameters(self, params):
        """Overwrite every parameter in place from a mapping like :meth:`parameters`."""
        mine = self.parameters()
        if set(params) != set(mine):
            raise DimensionError("parameter names differ from the model's")
        for k, a in mine.items():
            src = np.asarray(params[k], dtype=DTYPE)
            if src.shape != a.shape:
                raise DimensionError(f"{k}: shape {src.shape} != {a.shape}")
            a[...] = src

    def copy(self):
        return type(self)(
            self.config, self.encoder_fwd.copy(), self.decoder.copy(), self.W_out.copy(),
            self.b_out.copy(), None if self.encoder_bwd is None else self.encoder_bwd.copy(),
            name=self.name,
        )


def _window_batch(m, windows):
    """Coerce Windows / arrays to a time-major ``(T, B, C)`` batch."""
    if isinstance(windows, Window):
        arr, single = windows.values[None], True
    elif isinstance(windows, (list, tuple)) and windows and isinstance(windows[0], Window):
        arr, single = np.stack([w.values for w in windows]), False
    else:
        arr = np.asarray(windows, dtype=DTYPE)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
    cfg = m.config
    if arr.ndim != 3 or arr.shape[1:] != (cfg.window_length, cfg.channels):
        raise DimensionError(
            f"windows of shape {arr.shape[-2:] if arr.ndim >= 2 else arr.shape} do not match "
            f"model ({cfg.window_length}, {cfg.channels})"
        )
    return np.ascontiguousarray(arr.transpose(1, 0, 2)), single


def _encode_batch(m, X):
    _, cf = lstm_sequence_forward(m.encoder_fwd, X)
    parts = [cf.h[-1]]
    caches = [cf]
    if m.encoder_bwd is not None:
        _, cb = lstm_sequence_forward(m.encoder_bwd, X[::-1])
        parts.append(cb.h[-1])
        caches.append(cb)
    latent = np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0]
    return latent, caches


def _decode_batch(m, latent, length):
    B = latent.shape[0]
    xs = np.broadcast_to(latent, (length, B, latent.shape[-1]))
    hs, cache = lstm_sequence_forward(m.decoder, xs)
    Y = hs @ m.W_out.T + m.b_out
    return Y, cache


def encode(m, w):
    """Latent vector(s) for a window or batch of windows."""
    X, single = _window_batch(m, w)
    latent, _ = _encode_batch(m, X)
    return latent[0] if single else latent


def decode(m, latent, length=None):
    """Reconstruction ``(T, C)`` (or ``(B, T, C)``) from latent vector(s)."""
    cfg = m.config
    length = cfg.window_length if length is None else length
    if length != cfg.window_length:
        raise DimensionError(f"decode length {length} != window_length {cfg.window_length}")
    latent = np.asarray(latent, dtype=DTYPE)
    single = latent.ndim == 1
    latent = latent[None] if single else latent
    if latent.shape[-1] != cfg.latent_size:
        raise DimensionError(f"latent width {latent.shape[-1]} != {cfg.latent_size}")
    Y, _ = _decode_batch(m, latent, length)
    Y = Y.transpose(1, 0, 2)
    return Y[0] if single else Y


def reconstruct(m, w):
    X, single = _window_batch(m, w)
    latent, _ = _encode_batch(m, X)
    Y, _ = _decode_batch(m, latent, X.shape[0])
    Y = Y.transpose(1, 0, 2)
    return Y[0] if single else Y


def mse_loss(w, r):
    """Mean squared difference over every entry of the window."""
    a = w.values if isinstance(w, Window) else np.asarray(w, dtype=DTYPE)
    b = np.asarray(r, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimensionError(f"window shape {a.shape} != reconstruction shape {b.shape}")
    return float(np.mean((a - b) ** 2))


def loss_and_grads(m, windows, dropout_mask=None, scale=1.0):
    """Forward and reverse pass over a batch.

    Returns ``(loss, grads)`` where ``loss`` is the batch MSE (mean over
    windows, steps and channels) times ``scale`` and ``grads`` maps every
    parameter name to ``dloss/dparam``. ``dropout_mask``, if given, multiplies
    the latent vector (shape ``(B, latent)``) and stands for inverted dropout
    on the encoder output.
    """
    X, _ = _window_batch(m, windows)
    T, B, C = X.shape
    latent, enc_caches = _encode_batch(m, X)
    z = latent if dropout_mask is None else latent * dropout_mask
    Y, dec_cache = _decode_batch(m, z, T)
    diff = Y - X
    loss = scale * float(np.mean(diff * diff))

    dY = (2.0 * scale / diff.size) * diff
    H_d = m.config.decoder_hidden
    dW_out = dY.reshape(-1, C).T @ dec_cache.h.reshape(-1, H_d)
    db_out = dY.sum(axis=(0, 1))
    dH = dY @ m.W_out
    g_dec, dz = lstm_backward(dec_cache, m.decoder, dH, input_grads="sum")
    dlatent = dz if dropout_mask is None else dz * dropout_mask

    H_e = m.config.encoder_hidden
    grads = {}
    up = np.zeros((T, B, H_e))
    up[-1] = dlatent[:, :H_e]
    g_f, _ = lstm_backward(enc_caches[0], m.encoder_fwd, up, input_grads="none")
    for n, a in g_f.tensors().items():
        grads[f"encoder.forward.{n}"] = a
    if m.encoder_bwd is not None:
        up = np.zeros((T, B, H_e))
        up[-1] = dlatent[:, H_e:]
        g_b, _ = lstm_backward(enc_caches[1], m.encoder_bwd, up, input_grads="none")
        for n, a in g_b.tensors().items():
            grads[f"encoder.backward.{n}"] = a
    for n, a in g_dec.tensors().items():
        grads[f"decoder.{n}"] = a
    grads["projection.W"] = dW_out
    grads["projection.b"] = db_out
    return loss, grads


def loss_backward(m, w, scale=1.0):
    """Gradients of ``scale * mse_loss(w, reconstruct(m, w))`` for every parameter."""
    return loss_and_grads(m, w, scale=scale)[1]
