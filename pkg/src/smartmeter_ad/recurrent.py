"""LSTM cell, sequence unrolling, bidirectional layer and BPTT.

Gate equations for one step, with ``σ`` the logistic function and ``*`` the
elementwise product::

    i_t = σ(W_ii x_t + b_ii + W_hi h_{t-1} + b_hi)
    f_t = σ(W_if x_t + b_if + W_hf h_{t-1} + b_hf)
    g_t = tanh(W_ig x_t + b_ig + W_hg h_{t-1} + b_hg)
    o_t = σ(W_io x_t + b_io + W_ho h_{t-1} + b_ho)
    c_t = f_t * c_{t-1} + i_t * g_t
    h_t = o_t * tanh(c_t)

Sequences are arrays with time on the leading axis: ``(T, D)`` for a single
sequence or ``(T, B, D)`` for a batch of ``B`` sequences of equal length.
Internally everything runs batched with the gates stacked as ``i, f, o, g``,
which keeps the three sigmoid gates contiguous. The sigmoids are evaluated
as ``0.5 + 0.5 * tanh(z / 2)`` so one ``tanh`` call covers all four gates.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import DimensionError
from .linalg import DTYPE, sigmoid, tanh_act, xavier_init

GATES = ("i", "f", "g", "o")
_STACK = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Input weights ``(H, D)``, recurrent weights ``(H, H)`` and both bias sets."""

    W_ii: np.ndarray
    W_if: np.ndarray
    W_ig: np.ndarray
    W_io: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hg: np.ndarray
    W_ho: np.ndarray
    b_ii: np.ndarray
    b_if: np.ndarray
    b_ig: np.ndarray
    b_io: np.ndarray
    b_hi: np.ndarray
    b_hf: np.ndarray
    b_hg: np.ndarray
    b_ho: np.ndarray

    def __post_init__(self):
        H, D = np.shape(self.W_ii)
        for name in self.names():
            arr = np.asarray(getattr(self, name), dtype=DTYPE)
            expected = {"W_i": (H, D), "W_h": (H, H)}.get(name[:3], (H,))
            if arr.shape != expected:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {expected}")
            setattr(self, name, arr)

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    @property
    def input_size(self):
        return self.W_ii.shape[1]

    @property
    def hidden_size(self):
        return self.W_ii.shape[0]

    @classmethod
    def zeros(cls, input_size, hidden_size):
        H, D = hidden_size, input_size
        shapes = {"W_i": (H, D), "W_h": (H, H)}
        return cls(**{n: np.zeros(shapes.get(n[:3], (H,))) for n in cls.names()})

    @classmethod
    def init(cls, input_size, hidden_size, rng, forget_bias=1.0):
        """Xavier weights, zero biases except ``b_if = forget_bias``."""
        p = cls.zeros(input_size, hidden_size)
        for gate in GATES:
            setattr(p, f"W_i{gate}", xavier_init(hidden_size, input_size, rng))
            setattr(p, f"W_h{gate}", xavier_init(hidden_size, hidden_size, rng))
        p.b_if = np.full(hidden_size, float(forget_bias))
        return p

    def tensors(self):
        """Ordered ``name -> array`` view (arrays are shared, not copied)."""
        return {n: getattr(self, n) for n in self.names()}

    def copy(self):
        return type(self)(**{n: a.copy() for n, a in self.tensors().items()})

    def stacked(self):
        """``(W_x (4H, D), W_h (4H, H), b (4H,))`` with gate blocks ordered i, f, o, g."""
        W_x = np.concatenate([getattr(self, f"W_i{g}") for g in _STACK])
        W_h = np.concatenate([getattr(self, f"W_h{g}") for g in _STACK])
        b = np.concatenate([getattr(self, f"b_i{g}") + getattr(self, f"b_h{g}") for g in _STACK])
        return W_x, W_h, b

    @classmethod
    def from_stacked(cls, dW_x, dW_h, db):
        """Split stacked gradients back into the sixteen named tensors.

        Input and recurrent biases enter the pre-activation as a sum, so both
        receive the same gradient.
        """
        H = dW_h.shape[1]
        kw = {}
        for k, g in enumerate(_STACK):
            rows = slice(k * H, (k + 1) * H)
            kw[f"W_i{g}"] = dW_x[rows]
            kw[f"W_h{g}"] = dW_h[rows]
            kw[f"b_i{g}"] = db[rows].copy()
            kw[f"b_h{g}"] = db[rows].copy()
        return cls(**kw)


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    def __post_init__(self):
        f, b = self.forward, self.backward
        if (f.input_size, f.hidden_size) != (b.input_size, b.hidden_size):
            raise DimensionError("forward and backward LSTMs must share input and hidden sizes")

    @property
    def input_size(self):
        return self.forward.input_size

    @property
    def hidden_size(self):
        return self.forward.hidden_size


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class GateCache:
    """Activations of one step: input, the four gates, and both states."""

    x: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    c_prev: np.ndarray
    h_prev: np.ndarray


class SequenceCache:
    """Stacked per-step activations of one unrolled run.

    Arrays are ``(T, B, ·)``. ``len(cache)`` is the number of steps and
    ``cache[t]`` the :class:`GateCache` of step ``t`` (unbatched if the run
    was). A time-constant input, such as a repeated decoder latent, is kept
    as a zero-stride view and flagged ``x_repeated``.
    """

    def __init__(self, x, gates, c, h, c0, h0, tanh_c, batched, x_repeated=False):
        self.x = x
        self.gates = gates
        self.c = c
        self.h = h
        self.c0 = c0
        self.h0 = h0
        self.tanh_c = tanh_c
        self.batched = batched
        self.x_repeated = x_repeated

    def __len__(self):
        return self.x.shape[0]

    @property
    def hidden_size(self):
        return self.h.shape[-1]

    @property
    def h_prev(self):
        return np.concatenate([self.h0[None], self.h[:-1]])

    @property
    def c_prev(self):
        return np.concatenate([self.c0[None], self.c[:-1]])

    def gate(self, name):
        k = _STACK.index(name)
        H = self.hidden_size
        return self.gates[..., k * H:(k + 1) * H]

    def _sq(self, a):
        return a if self.batched else a[0]

    def __getitem__(self, t):
        T = len(self)
        if not -T <= t < T:
            raise IndexError(t)
        t %= T
        h_prev = self.h0 if t == 0 else self.h[t - 1]
        c_prev = self.c0 if t == 0 else self.c[t - 1]
        return GateCache(
            x=self._sq(self.x[t]), c=self._sq(self.c[t]), h=self._sq(self.h[t]),
            c_prev=self._sq(c_prev), h_prev=self._sq(h_prev),
            **{g: self._sq(self.gate(g)[t]) for g in GATES},
        )

    def states(self):
        return [LstmState(self._sq(self.h[t]), self._sq(self.c[t])) for t in range(len(self))]

    def final_state(self):
        return LstmState(h=self._sq(self.h[-1]), c=self._sq(self.c[-1]))


def _as_batched_sequence(xs, input_size):
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim == 2:
        xs, batched = xs[:, None, :], False
    elif xs.ndim == 3:
        batched = True
    else:
        raise DimensionError(f"sequence must be (T, D) or (T, B, D), got shape {xs.shape}")
    if xs.shape[0] == 0:
        raise DimensionError("empty sequence")
    if xs.shape[-1] != input_size:
        raise DimensionError(f"inputs have width {xs.shape[-1]}, LSTM expects {input_size}")
    return xs, batched


def _half_scale(H):
    # pre-activation scale turning tanh into the sigmoid identity on i, f, o
    s = np.full(4 * H, 0.5)
    s[3 * H:] = 1.0
    return s


def lstm_cell_forward(p, x_t, prev=None):
    """One step of the gate equations, evaluated directly gate by gate.

    ``x_t`` is ``(D,)`` or ``(B, D)``; ``prev`` defaults to zero state.
    Returns ``(LstmState, GateCache)``.
    """
    H = p.hidden_size
    x_t = np.asarray(x_t, dtype=DTYPE)
    if x_t.shape[-1] != p.input_size:
        raise DimensionError(f"x_t has width {x_t.shape[-1]}, LSTM expects {p.input_size}")
    lead = x_t.shape[:-1]
    if prev is None:
        prev = LstmState(np.zeros(lead + (H,)), np.zeros(lead + (H,)))
    h_prev = np.asarray(prev.h, dtype=DTYPE)
    c_prev = np.asarray(prev.c, dtype=DTYPE)
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise DimensionError(f"previous state must have width {H}")

    def pre(g):
        return (x_t @ getattr(p, f"W_i{g}").T + getattr(p, f"b_i{g}")
                + h_prev @ getattr(p, f"W_h{g}").T + getattr(p, f"b_h{g}"))

    i = sigmoid(pre("i"))
    f = sigmoid(pre("f"))
    g = tanh_act(pre("g"))
    o = sigmoid(pre("o"))
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return LstmState(h, c), GateCache(x=x_t, i=i, f=f, g=g, o=o, c=c, h=h, c_prev=c_prev, h_prev=h_prev)


def lstm_sequence_forward(p, xs, init=None):
    """Unroll the cell over ``xs`` starting from ``init`` (zeros by default).

    Returns ``(hs, cache)``; ``hs`` has the shape of ``xs`` with the feature
    axis replaced by the hidden width.
    """
    xs, batched = _as_batched_sequence(xs, p.input_size)
    T, B, _ = xs.shape
    H = p.hidden_size
    if init is None:
        h = np.zeros((B, H))
        c = np.zeros((B, H))
    else:
        h = np.broadcast_to(np.asarray(init.h, dtype=DTYPE), (B, H)).copy()
        c = np.broadcast_to(np.asarray(init.c, dtype=DTYPE), (B, H)).copy()
    h0, c0 = h, c

    W_x, W_h, b = p.stacked()
    scale = _half_scale(H)
    repeated = T > 1 and xs.strides[0] == 0
    if repeated:
        zx = np.broadcast_to((xs[0] @ W_x.T + b) * scale, (T, B, 4 * H))
    else:
        zx = (xs @ W_x.T + b) * scale
    W_hT = (W_h * scale[:, None]).T

    gates = np.empty((T, B, 4 * H))
    cs = np.empty((T, B, H))
    hs = np.empty((T, B, H))
    tcs = np.empty((T, B, H))
    for t in range(T):
        a = gates[t]
        np.tanh(zx[t] + h @ W_hT, out=a)
        s = a[:, :3 * H]
        s *= 0.5
        s += 0.5
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c, out=tcs[t])
        h = np.multiply(a[:, 2 * H:3 * H], tc, out=hs[t])
        cs[t] = c
    cache = SequenceCache(xs, gates, cs, hs, c0, h0, tcs, batched, repeated)
    return (hs if batched else hs[:, 0]), cache


def lstm_backward(cache, p, upstream, input_grads="sequence"):
    """Backpropagation through time over a full cached run.

    ``upstream`` holds ``dLoss/dh_t`` for every step, shaped like the hidden
    states. Returns ``(grads, dxs)``: an :class:`LstmParams` of parameter
    gradients and the input gradients. ``input_grads`` selects the latter:
    ``"sequence"`` gives ``dLoss/dx_t`` shaped like the inputs, ``"sum"``
    their sum over time and ``"none"`` skips them (``dxs`` is then None).
    """
    up = np.asarray(upstream, dtype=DTYPE)
    if not cache.batched and up.ndim == 2:
        up = up[:, None, :]
    T, B, H = cache.h.shape
    if up.shape != (T, B, H):
        raise DimensionError(f"upstream gradient shape {up.shape} does not match cache {(T, B, H)}")
    W_x, W_h, _ = p.stacked()

    a = cache.gates
    i, f, o, g = (a[..., k * H:(k + 1) * H] for k in range(4))
    tc = cache.tanh_c
    # local derivatives, vectorised over every step; dz_o depends on dh, the rest on dc
    dc_from_dh = o * (1.0 - tc * tc)
    mult = np.empty((T, B, 4, H))
    mult[:, :, 0] = g * i * (1.0 - i)
    mult[:, :, 1] = cache.c_prev * f * (1.0 - f)
    mult[:, :, 3] = i * (1.0 - g * g)
    do_dh = tc * o * (1.0 - o)

    dz = np.empty((T, B, 4, H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = up[t] + dh_next
        dc = dc_next + dh * dc_from_dh[t]
        dz_t = dz[t]
        np.multiply(dc[:, None, :], mult[t], out=dz_t)
        np.multiply(dh, do_dh[t], out=dz_t[:, 2])
        dc_next = dc * f[t]
        dh_next = dz_t.reshape(B, 4 * H) @ W_h
    flat = dz.reshape(T * B, 4 * H)
    if cache.x_repeated:
        dW_x = dz.sum(axis=0).reshape(B, 4 * H).T @ cache.x[0]
    else:
        dW_x = flat.T @ cache.x.reshape(T * B, -1)
    dW_h = flat.T @ cache.h_prev.reshape(T * B, H)
    db = flat.sum(axis=0)
    grads = LstmParams.from_stacked(dW_x, dW_h, db)

    if input_grads == "none":
        return grads, None
    if input_grads == "sum":
        dxs = dz.sum(axis=0).reshape(B, 4 * H) @ W_x
        return grads, (dxs if cache.batched else dxs[0])
    if input_grads != "sequence":
        raise ValueError(f"unknown input_grads mode {input_grads!r}")
    dxs = dz.reshape(T, B, 4 * H) @ W_x
    return grads, (dxs if cache.batched else dxs[:, 0])


def bilstm_forward(p, xs):
    """Run ``p.forward`` over ``xs`` and ``p.backward`` over ``xs[::-1]``.

    Returns ``(outputs, (fwd_cache, bwd_cache))``. ``outputs[t]`` is
    ``[h_fwd_t ; h_bwd_t]`` with the backward half re-aligned to original
    time order, so the feature width is ``2 * hidden_size``.
    """
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim < 2 or xs.shape[0] == 0:
        raise DimensionError("bilstm_forward needs a nonempty (T, D) or (T, B, D) sequence")
    h_fwd, c_fwd = lstm_sequence_forward(p.forward, xs)
    h_bwd, c_bwd = lstm_sequence_forward(p.backward, xs[::-1])
    return np.concatenate([h_fwd, h_bwd[::-1]], axis=-1), (c_fwd, c_bwd)


def bilstm_backward(caches, p, upstream):
    """Reverse pass of :func:`bilstm_forward`; returns ``(BiLstmParams, dxs)``."""
    c_fwd, c_bwd = caches
    up = np.asarray(upstream, dtype=DTYPE)
    H = p.hidden_size
    g_fwd, dx_fwd = lstm_backward(c_fwd, p.forward, up[..., :H])
    g_bwd, dx_bwd = lstm_backward(c_bwd, p.backward, up[..., H:][::-1])
    return BiLstmParams(g_fwd, g_bwd), dx_fwd + dx_bwd[::-1]
