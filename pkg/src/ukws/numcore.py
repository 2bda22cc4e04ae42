"""Small, stable numeric helpers shared by the rest of the package."""

import numpy as np


def as_vector(values, name="vector"):
    """Coerce ``values`` to a finite 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_matrix(values, name="matrix"):
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def norm(v):
    return float(np.sqrt(np.dot(v, v)))


def cosine(a, b):
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Raises ``ValueError`` on a dimension mismatch or a zero-norm input.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    c = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, c))


def cosine_matrix(a, b):
    """Row-wise cosine similarities between ``a`` (n, d) and ``b`` (k, d)."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cosine of a zero-norm vector is undefined")
    return np.clip((a / na[:, None]) @ (b / nb[:, None]).T, -1.0, 1.0)


def logsumexp(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    mx = np.max(x, axis=axis, keepdims=True)
    out = mx + np.log(np.sum(np.exp(x - mx), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def log_softmax(logits, axis=-1):
    """Log-softmax with max subtraction; works on vectors and row batches."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise ValueError("log_softmax of an empty input")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits contain non-finite entries")
    mx = np.max(x, axis=axis, keepdims=True)
    shifted = x - mx
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    return np.exp(log_softmax(logits, axis=axis))


def l2_normalize(v):
    """Scale ``v`` to unit Euclidean norm. Zero vectors are rejected."""
    v = as_vector(v)
    n = norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero-norm vector")
    return v / n


def l2_normalize_rows(m):
    """Normalize each row; returns ``(unit_rows, norms)``."""
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m, axis=-1)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero-norm row")
    return m / n[..., None], n


def normalize_backward(grad_unit, unit, norms):
    """Pull a gradient w.r.t. ``x / |x|`` back to ``x`` (row-wise)."""
    proj = np.sum(grad_unit * unit, axis=-1, keepdims=True)
    return (grad_unit - unit * proj) / norms[..., None]
