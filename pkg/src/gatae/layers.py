"""Attention and convolutional graph layers with hand-written backward passes.

A GAT layer scores each stored entry (i, j) of the graph with
``e_ij = leaky_relu(a_src . Wh_i + a_dst . Wh_j)``, normalizes the scores per
target node with a segment softmax, and outputs
``act(sum_j alpha_ij * Wh_j)``. A GCN layer outputs ``act(A' H W)`` where A'
is the symmetrically normalized adjacency. Both forwards return a cache that
their backward consumes; every backward is validated against central
differences in the test suite.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .graph import NormalizedAdjacency, SparseGraph
from .numerics import (
    activate,
    activation_grad,
    matmul,
    segment_softmax,
    segment_sum,
    spmm,
)


@dataclass
class GATLayerParams:
    """Weights of one attention layer.

    ``attn`` has length 2*d_out and is split as [a_src | a_dst], matching the
    concatenation order of the score formula. ``leaky_slope`` is the negative
    slope of the attention nonlinearity; 1.0 turns it into the identity
    (plain linear scores).
    """

    weight: np.ndarray
    attn: np.ndarray
    leaky_slope: float = 0.2
    out_activation: str = "relu"


@dataclass
class GCNLayerParams:
    weight: np.ndarray
    out_activation: str = "relu"


@dataclass
class LayerCache:
    """Activations retained by a forward pass for the matching backward.

    Attention fields are None for GCN layers; ``adj``/``aggregated`` are None
    for GAT layers.
    """

    params: object
    inputs: np.ndarray
    pre_activation: np.ndarray
    wh: np.ndarray | None = None
    attn_logits: np.ndarray | None = None   # raw scores, before the leaky gate
    attn_weights: np.ndarray | None = None  # alpha, one per stored entry
    row_offsets: np.ndarray | None = None
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    col_perm: np.ndarray | None = field(default=None, repr=False)
    adj: NormalizedAdjacency | None = None
    aggregated: np.ndarray | None = None


def gat_forward(g: SparseGraph, h: np.ndarray, p: GATLayerParams):
    """Run one attention layer; returns (output, cache).

    Every node must have at least one stored neighbor (add self-loops
    upstream otherwise); a neighborless node has no softmax segment.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] != g.num_nodes:
        raise InputError(f"h has {h.shape[0]} rows for a {g.num_nodes}-node graph")
    widths = np.diff(g.row_offsets)
    if (widths == 0).any():
        bad = int(np.flatnonzero(widths == 0)[0])
        raise ConfigError(
            f"node {bad} has no neighbors; enable self-loops so every node "
            "can attend to itself"
        )
    d_out = p.weight.shape[1]
    if p.attn.shape != (2 * d_out,):
        raise InputError(f"attention vector must have length {2 * d_out}")
    rows = g.row_ids()
    cols = g.col_indices
    wh = matmul(h, p.weight)
    a_src, a_dst = p.attn[:d_out], p.attn[d_out:]
    logits = wh[rows] @ a_src + wh[cols] @ a_dst
    scores = activate(logits[:, None], "leaky_relu", p.leaky_slope)[:, 0]
    alpha = segment_softmax(scores, g.row_offsets)
    pre = segment_sum(alpha[:, None] * wh[cols], g.row_offsets)
    out = activate(pre, p.out_activation)
    cache = LayerCache(
        params=p, inputs=h, pre_activation=pre, wh=wh, attn_logits=logits,
        attn_weights=alpha, row_offsets=g.row_offsets, rows=rows, cols=cols,
        col_perm=np.lexsort((rows, cols)),
    )
    return out, cache


def gat_backward(cache: LayerCache, upstream: np.ndarray):
    """Gradients of a GAT forward; returns (grad_weight, grad_attn, grad_input).

    The by-neighbor scatter reuses the row offsets on column-sorted entries,
    which is valid because the stored pattern is symmetric.
    """
    p = cache.params
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.pre_activation.shape:
        raise InputError(
            f"upstream shape {upstream.shape} != {cache.pre_activation.shape}"
        )
    wh, rows, cols = cache.wh, cache.rows, cache.cols
    offsets, alpha = cache.row_offsets, cache.attn_weights
    d_out = p.weight.shape[1]
    a_src, a_dst = p.attn[:d_out], p.attn[d_out:]

    d_pre = upstream * activation_grad(cache.pre_activation, p.out_activation)
    d_alpha = np.einsum("ed,ed->e", d_pre[rows], wh[cols])
    # softmax Jacobian, rowwise: de = alpha * (dalpha - <alpha, dalpha>_row)
    row_dot = segment_sum(alpha * d_alpha, offsets)
    d_scores = alpha * (d_alpha - row_dot[rows])
    gate = np.where(cache.attn_logits > 0, 1.0, p.leaky_slope)
    d_logits = d_scores * gate

    grad_attn = np.concatenate([d_logits @ wh[rows], d_logits @ wh[cols]])
    d_wh = np.outer(segment_sum(d_logits, offsets), a_src)
    by_col = alpha[:, None] * d_pre[rows] + np.outer(d_logits, a_dst)
    d_wh += segment_sum(by_col[cache.col_perm], offsets)

    grad_weight = matmul(cache.inputs.T, d_wh)
    grad_input = matmul(d_wh, p.weight.T)
    return grad_weight, grad_attn, grad_input


def gcn_forward(adj: NormalizedAdjacency, h: np.ndarray, p: GCNLayerParams):
    """Run one convolution layer act(A' H W); returns (output, cache)."""
    aggregated = spmm(adj, h)
    pre = matmul(aggregated, p.weight)
    out = activate(pre, p.out_activation)
    cache = LayerCache(
        params=p, inputs=np.asarray(h, dtype=np.float64), pre_activation=pre,
        adj=adj, aggregated=aggregated,
    )
    return out, cache


def gcn_backward(cache: LayerCache, upstream: np.ndarray):
    """Gradients of a GCN forward; returns (grad_weight, grad_input)."""
    p = cache.params
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.pre_activation.shape:
        raise InputError(
            f"upstream shape {upstream.shape} != {cache.pre_activation.shape}"
        )
    d_pre = upstream * activation_grad(cache.pre_activation, p.out_activation)
    grad_weight = matmul(cache.aggregated.T, d_pre)
    # A' is symmetric, so the adjoint of spmm is spmm itself
    grad_input = spmm(cache.adj, matmul(d_pre, p.weight.T))
    return grad_weight, grad_input


def layer_forward(prep, h, p):
    """Dispatch on parameter type; prep is the graph (GAT) or adjacency (GCN)."""
    if isinstance(p, GATLayerParams):
        return gat_forward(prep, h, p)
    return gcn_forward(prep, h, p)


def layer_backward(cache: LayerCache, upstream: np.ndarray):
    """Dispatch wrapper; returns ({param name: grad}, grad_input)."""
    if isinstance(cache.params, GATLayerParams):
        g_w, g_a, g_in = gat_backward(cache, upstream)
        return {"weight": g_w, "attn": g_a}, g_in
    g_w, g_in = gcn_backward(cache, upstream)
    return {"weight": g_w}, g_in
