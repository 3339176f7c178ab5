"""Dense linear algebra primitives and activations.

Matrices and vectors are plain float64 numpy arrays (row-major). The helpers
here add the shape checking the recurrent code relies on and keep every
source of randomness behind an explicit ``numpy.random.Generator``.
"""

import numpy as np

from .errors import DimensionError

DTYPE = np.float64


def make_rng(seed):
    """Return a PCG64 generator for ``seed`` (an int or a SeedSequence)."""
    return np.random.default_rng(seed)


def sigmoid(x):
    """Logistic function, stable for arbitrarily large ``|x|``.

    Works elementwise on scalars and arrays. Only ``exp`` of non-positive
    numbers is ever evaluated, so nothing overflows.
    """
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out if out.ndim else float(out)


def tanh_act(x):
    """Hyperbolic tangent, elementwise."""
    out = np.tanh(np.asarray(x, dtype=DTYPE))
    return out if out.ndim else float(out)


def as_matrix(m):
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def as_vector(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def matvec(m, v):
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by length-{v.shape[0]} vector")
    return m @ v


def hadamard(a, b):
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard of lengths {a.shape[0]} and {b.shape[0]}")
    return a * b


def xavier_init(rows, cols, rng):
    """Glorot-uniform ``rows x cols`` matrix drawn from ``rng``."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"matrix dimensions must be positive, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))
