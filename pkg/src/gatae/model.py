"""Graph autoencoder: encoder stack, inner-product decoder, loss assembly.

The encoder maps node features X to embeddings Z through a stack of GAT or
GCN layers; the decoder reconstructs edge probabilities as
``sigmoid(z_i . z_j)``. Training minimizes the squared reconstruction error
of the full adjacency (target excludes self-loops, diagonal target is 0)
plus ``reg_weight * sum(Z**2)``. For graphs too large to densify, a sampled
loss keeps every edge and rescales a uniform sample of non-edges so its
expectation matches the dense value.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from .errors import InputError
from .graph import (
    SparseGraph,
    add_self_loops,
    dense_adjacency,
    symmetric_normalize,
)
from .layers import (
    GATLayerParams,
    GCNLayerParams,
    layer_backward,
    layer_forward,
)
from .numerics import sigmoid

logger = logging.getLogger(__name__)

DENSE_LIMIT_DEFAULT = 5000

ENCODER_KINDS = ("gat", "gcn")


@dataclass
class GAEModel:
    """Encoder stack plus decoder configuration.

    layer_dims is (d_in, hidden..., d_embed) and must chain through the
    per-layer weight shapes. ``self_loops`` is the propagation policy applied
    to the input graph before encoding; it never alters the reconstruction
    target.
    """

    encoder_kind: str
    layer_dims: tuple
    layers: list
    reg_weight: float = 1e-4
    self_loops: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise InputError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.reg_weight < 0:
            raise InputError("reg_weight must be nonnegative")
        dims = tuple(self.layer_dims)
        for p, (d_in, d_out) in zip(self.layers, zip(dims, dims[1:])):
            if p.weight.shape != (d_in, d_out):
                raise InputError(
                    f"layer weight shape {p.weight.shape} != ({d_in}, {d_out})"
                )

    def param_arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: per layer, weight then attn."""
        out = []
        for p in self.layers:
            out.append(p.weight)
            if isinstance(p, GATLayerParams):
                out.append(p.attn)
        return out

    def set_param_arrays(self, arrays) -> None:
        it = iter(arrays)
        for p in self.layers:
            p.weight = next(it)
            if isinstance(p, GATLayerParams):
                p.attn = next(it)


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    reg: float
    total: float


def prepare_propagation(model: GAEModel, g: SparseGraph):
    """Precompute the propagation structure the encoder runs on.

    GAT attends over the raw neighbor lists (with self-loops per policy);
    GCN propagates through the normalized adjacency of the same pattern.
    """
    if model.encoder_kind == "gat":
        return add_self_loops(g) if model.self_loops else g
    return symmetric_normalize(g, add_loops=model.self_loops)


def encode(model: GAEModel, g: SparseGraph, x: np.ndarray, prep=None):
    """Run the encoder; returns (Z, caches) with one cache per layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != g.num_nodes:
        raise InputError(f"features have {x.shape[0]} rows for {g.num_nodes} nodes")
    if x.shape[1] != model.layer_dims[0]:
        raise InputError(
            f"features have {x.shape[1]} columns, model expects {model.layer_dims[0]}"
        )
    if prep is None:
        prep = prepare_propagation(model, g)
    h = x
    caches = []
    for p in model.layers:
        h, cache = layer_forward(prep, h, p)
        caches.append(cache)
    return h, caches


def decode_dense(z: np.ndarray, dense_limit: int = DENSE_LIMIT_DEFAULT) -> np.ndarray:
    """Reconstruct the full probability matrix sigmoid(Z Z^T).

    The upper triangle is computed and mirrored, so the result is exactly
    symmetric. Refuses to densify beyond dense_limit nodes; use
    decode_entries for a sampled view instead.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n > dense_limit:
        raise InputError(
            f"{n} nodes exceeds dense_limit={dense_limit}; use decode_entries"
        )
    gram = z @ z.T
    gram = np.triu(gram) + np.triu(gram, 1).T
    return sigmoid(gram)


def decode_entries(z: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Edge probabilities sigmoid(z_i . z_j) at the given (i, j) pairs."""
    z = np.asarray(z, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
    if idx.size and (idx.min() < 0 or idx.max() >= z.shape[0]):
        raise InputError(f"index out of range for {z.shape[0]} nodes")
    if idx.size == 0:
        return np.zeros(0)
    i, j = idx[:, 0], idx[:, 1]
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    # dot via the smaller-index row first, matching the mirrored dense decoder
    return sigmoid(np.einsum("ed,ed->e", z[lo], z[hi]))


def _positive_entries(g: SparseGraph) -> np.ndarray:
    """Directed off-diagonal stored entries: the target-1 cells of the loss."""
    rows = g.row_ids()
    keep = rows != g.col_indices
    return np.column_stack([rows[keep], g.col_indices[keep]])


def loss_dense(g: SparseGraph, z: np.ndarray, reg_weight: float,
               dense_limit: int = DENSE_LIMIT_DEFAULT) -> LossBreakdown:
    """Full squared reconstruction error plus embedding regularizer.

    recon sums (A_ij - Ahat_ij)^2 over all N^2 cells: both directions of
    every edge, and every non-edge including the diagonal (target 0).
    """
    a = dense_adjacency(g)
    ahat = decode_dense(z, dense_limit)
    recon = float(((a - ahat) ** 2).sum())
    reg = float((np.asarray(z) ** 2).sum())
    return LossBreakdown(recon, reg, recon + reg_weight * reg)


@dataclass(frozen=True)
class NegativeSample:
    """A without-replacement draw of target-0 cells and its rescaling factor."""

    cells: np.ndarray       # (k, 2) int64
    scale: float            # (#target-0 cells) / k; recon term multiplier
    pool_size: int


def sample_negative_cells(g: SparseGraph, count: int, rng) -> NegativeSample:
    """Sample `count` distinct target-0 cells uniformly.

    The pool is every (i, j) cell that is not a stored off-diagonal entry,
    diagonal included (its target is 0 regardless of stored self-loops).
    `count` is capped at the pool size, where the sample becomes exhaustive
    and the scale factor is exactly 1.
    """
    n = g.num_nodes
    pos = _positive_entries(g)
    pool = n * n - len(pos)
    count = min(count, pool)
    if count <= 0:
        return NegativeSample(np.zeros((0, 2), dtype=np.int64), 1.0, pool)
    if n <= 8192:
        mask = np.ones((n, n), dtype=bool)
        mask[pos[:, 0], pos[:, 1]] = False
        flat = np.flatnonzero(mask.ravel())
        picked = rng.choice(flat, size=count, replace=False)
        picked.sort()
        cells = np.column_stack([picked // n, picked % n])
    else:
        taken = set(map(tuple, pos))
        chosen = set()
        while len(chosen) < count:
            i = int(rng.integers(n))
            j = int(rng.integers(n))
            if (i, j) not in taken and (i, j) not in chosen:
                chosen.add((i, j))
        cells = np.array(sorted(chosen), dtype=np.int64)
    return NegativeSample(cells, pool / count, pool)


def loss_sampled(g: SparseGraph, z: np.ndarray, reg_weight: float,
                 neg_ratio: float, rng) -> LossBreakdown:
    """Sampled surrogate of the dense loss for graphs too large to densify.

    Every edge cell contributes exactly; ceil(neg_ratio * |E|) uniformly
    sampled target-0 cells stand in for the rest, rescaled so the estimator
    is unbiased. When the sample covers the whole pool the value equals the
    dense loss.
    """
    if neg_ratio <= 0:
        raise InputError("neg_ratio must be positive")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    sample = sample_negative_cells(g, math.ceil(neg_ratio * g.edge_count), rng)
    breakdown, _ = _loss_and_grad_z_sampled(g, z, reg_weight, sample, want_grad=False)
    return breakdown


def _loss_and_grad_z_dense(g, z, reg_weight, dense_limit=DENSE_LIMIT_DEFAULT):
    z = np.asarray(z, dtype=np.float64)
    a = dense_adjacency(g)
    ahat = decode_dense(z, dense_limit)
    diff = ahat - a
    recon = float((diff ** 2).sum())
    reg = float((z ** 2).sum())
    # d recon / d gram, symmetric because a and ahat are
    g_gram = 2.0 * diff * ahat * (1.0 - ahat)
    grad_z = 2.0 * (g_gram @ z) + 2.0 * reg_weight * z
    return LossBreakdown(recon, reg, recon + reg_weight * reg), grad_z


def _loss_and_grad_z_sampled(g, z, reg_weight, sample: NegativeSample,
                             want_grad=True):
    z = np.asarray(z, dtype=np.float64)
    pos = _positive_entries(g)
    if sample.pool_size == 0:
        logger.warning("graph has no target-0 cells; sampled loss is positive-only")
    p_pos = decode_entries(z, pos)
    p_neg = decode_entries(z, sample.cells)
    recon = float(((1.0 - p_pos) ** 2).sum() + sample.scale * (p_neg ** 2).sum())
    reg = float((z ** 2).sum())
    breakdown = LossBreakdown(recon, reg, recon + reg_weight * reg)
    if not want_grad:
        return breakdown, None
    cells = np.concatenate([pos, sample.cells]) if len(sample.cells) else pos
    p = np.concatenate([p_pos, p_neg])
    target = np.zeros(len(p))
    target[:len(pos)] = 1.0
    coeff = 2.0 * (p - target) * p * (1.0 - p)
    coeff[len(pos):] *= sample.scale
    grad_z = 2.0 * reg_weight * z.copy()
    np.add.at(grad_z, cells[:, 0], coeff[:, None] * z[cells[:, 1]])
    np.add.at(grad_z, cells[:, 1], coeff[:, None] * z[cells[:, 0]])
    return breakdown, grad_z


def loss_backward(model: GAEModel, g: SparseGraph, caches, z: np.ndarray,
                  neg_ratio: float = 1.0, rng=None,
                  dense_limit: int = DENSE_LIMIT_DEFAULT):
    """Gradients of the total loss for every parameter.

    Uses the dense loss when the graph fits under dense_limit, the sampled
    surrogate (which then needs rng) otherwise. The regularizer's gradient
    2 * reg_weight * Z enters at the embedding and flows back through the
    encoder with everything else. Returns (LossBreakdown, grads) where grads
    is one {param name: array} dict per layer.
    """
    if g.num_nodes <= dense_limit:
        breakdown, grad_z = _loss_and_grad_z_dense(g, z, model.reg_weight, dense_limit)
    else:
        if rng is None:
            raise InputError("sampled loss needs an rng for negative sampling")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        sample = sample_negative_cells(g, math.ceil(neg_ratio * g.edge_count), rng)
        breakdown, grad_z = _loss_and_grad_z_sampled(g, z, model.reg_weight, sample)
    grads = backprop_encoder(caches, grad_z)
    return breakdown, grads


def backprop_encoder(caches, grad_embedding: np.ndarray) -> list[dict]:
    """Chain an embedding gradient back through the encoder caches."""
    grads = [None] * len(caches)
    upstream = grad_embedding
    for i in range(len(caches) - 1, -1, -1):
        grads[i], upstream = layer_backward(caches[i], upstream)
    return grads


def grad_arrays(model: GAEModel, grads: list[dict]) -> list[np.ndarray]:
    """Flatten per-layer gradient dicts in the same order as param_arrays."""
    out = []
    for p, gd in zip(model.layers, grads):
        out.append(gd["weight"])
        if isinstance(p, GATLayerParams):
            out.append(gd["attn"])
    return out
