"""Dense/sparse kernels and the finite-difference gradient checker.

Matrices are plain float64 ndarrays. Every kernel is a pure function,
validates shapes and finiteness at its boundary, and accumulates in a fixed
order so identical inputs give bit-identical outputs across runs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .graph import NormalizedAdjacency

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "identity")


def _check_matrix(m, name):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise InputError(f"{name} contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with shape/finiteness validation."""
    a = _check_matrix(a, "a")
    b = _check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise InputError(f"shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum `values` within the contiguous segments delimited by `offsets`.

    values may be 1-D (length nnz) or 2-D (nnz, d); the result has one row
    per segment, with empty segments summing to zero. Accumulation is
    left-to-right within each segment.
    """
    values = np.asarray(values)
    n = len(offsets) - 1
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    starts = np.asarray(offsets[:-1])
    nonempty = starts < np.asarray(offsets[1:])
    if values.shape[0] and nonempty.any():
        out[nonempty] = np.add.reduceat(values, starts[nonempty], axis=0)
    return out


def spmm(adj: NormalizedAdjacency, h: np.ndarray) -> np.ndarray:
    """Sparse-dense product: row i of the result is sum_j value(i,j) * h[j]."""
    h = _check_matrix(h, "h")
    if adj.num_nodes != h.shape[0]:
        raise InputError(
            f"adjacency has {adj.num_nodes} nodes but h has {h.shape[0]} rows"
        )
    contrib = adj.values[:, None] * h[adj.col_indices]
    return segment_sum(contrib, adj.row_offsets)


def segment_softmax(logits: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Softmax computed independently within each contiguous segment.

    The per-segment maximum is subtracted before exponentiation, so large
    logits cannot overflow. Segments must be nonempty and cover the sequence.
    """
    logits = np.asarray(logits, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if logits.ndim != 1:
        raise InputError("logits must be 1-D")
    if offsets[0] != 0 or offsets[-1] != len(logits) or (np.diff(offsets) < 0).any():
        raise InputError("offsets must be monotone and cover the logits")
    widths = np.diff(offsets)
    if (widths == 0).any():
        raise InputError(f"empty segment at index {int(np.flatnonzero(widths == 0)[0])}")
    if len(widths) == 0:
        return np.zeros(0)
    starts = offsets[:-1]
    seg = np.repeat(np.arange(len(widths)), widths)
    shifted = logits - np.maximum.reduceat(logits, starts)[seg]
    e = np.exp(shifted)
    return e / np.add.reduceat(e, starts)[seg]


def activate(m: np.ndarray, kind: str, slope: float = 0.2) -> np.ndarray:
    """Elementwise activation: relu, leaky_relu (negative slope), sigmoid, identity."""
    m = np.asarray(m, dtype=np.float64)
    if kind == "relu":
        return np.maximum(m, 0.0)
    if kind == "leaky_relu":
        return np.where(m > 0, m, slope * m)
    if kind == "sigmoid":
        return sigmoid(m)
    if kind == "identity":
        return m
    raise InputError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_grad(pre: np.ndarray, kind: str, slope: float = 0.2) -> np.ndarray:
    """d(activate)/d(pre), elementwise; relu/leaky take the negative branch at 0."""
    pre = np.asarray(pre, dtype=np.float64)
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(pre > 0, 1.0, slope)
    if kind == "sigmoid":
        s = sigmoid(pre)
        return s * (1.0 - s)
    if kind == "identity":
        return np.ones_like(pre)
    raise InputError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class GradCheckReport:
    """Worst-coordinate comparison between an analytic and a numeric gradient."""

    max_rel_error: float
    worst_coordinate: tuple
    analytic: float
    numeric: float


def grad_check(f, at: np.ndarray, analytic: np.ndarray, h: float = 1e-5) -> GradCheckReport:
    """Compare `analytic` to central differences of the scalar function `f`.

    f is evaluated at ``at`` perturbed by +/- h in every coordinate; the
    relative error at a coordinate is |a - n| / max(|a|, |n|, 1e-8) and the
    report carries the worst one.

    Raises NumericalError if f returns a non-finite value.
    """
    at = np.asarray(at, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != at.shape:
        raise InputError(f"analytic gradient shape {analytic.shape} != {at.shape}")
    worst = GradCheckReport(0.0, (0,) * max(at.ndim, 1), 0.0, 0.0)
    x = at.copy()
    for idx in np.ndindex(*at.shape) if at.ndim else [()]:
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value near coordinate {idx}")
        numeric = (fp - fm) / (2.0 * h)
        a = float(analytic[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        if rel > worst.max_rel_error:
            worst = GradCheckReport(rel, idx, a, numeric)
    return worst
