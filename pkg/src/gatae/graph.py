"""Sparse undirected graphs in compressed-row (CSR) form.

The graph is stored once per direction: an undirected edge {i, j} appears in
row i and in row j; a self-loop (i, i) appears once. Neighbor lists are
sorted ascending and free of duplicates, so two graphs are equal iff their
arrays are equal. All structures are immutable after construction.
"""

from dataclasses import dataclass
import logging

import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseGraph:
    """Undirected graph with N nodes in compressed-row form.

    Attributes
    ----------
    num_nodes : int
        Number of nodes N; valid node ids are 0..N-1.
    row_offsets : np.ndarray
        int64 array of length N+1; row i's neighbors live in
        ``col_indices[row_offsets[i]:row_offsets[i+1]]``.
    col_indices : np.ndarray
        int64 array of neighbor ids, sorted ascending within each row.
    edge_count : int
        Number of undirected non-loop edges, each counted once.
        ``row_offsets[N] == 2 * edge_count + self_loop_count``.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    edge_count: int

    @property
    def nnz(self) -> int:
        """Number of stored (directed) entries."""
        return int(self.row_offsets[-1])

    @property
    def self_loop_count(self) -> int:
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        return int(np.count_nonzero(rows == self.col_indices))

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (the per-entry companion of col_indices)."""
        return np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency D^(-1/2) A D^(-1/2) on a CSR pattern.

    Shares the sparsity layout of the source graph (optionally augmented with
    self-loops); ``values[k]`` is 1/sqrt(d_i * d_j) for the k-th stored entry.
    Used as the message-passing operator of convolutional layers.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_nodes, self.num_nodes))
        out[self.row_ids(), self.col_indices] = self.values
        return out


def _from_directed_entries(rows, cols, num_nodes, dedup=True):
    """Build CSR arrays from directed (row, col) entries; sorts and dedups."""
    keys = rows.astype(np.int64) * num_nodes + cols.astype(np.int64)
    if dedup:
        keys = np.unique(keys)  # sorted by (row, col)
    else:
        keys = np.sort(keys)
    rows = keys // num_nodes
    cols = keys % num_nodes
    counts = np.bincount(rows, minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, cols.astype(np.int64)


def build_from_edges(edges, num_nodes: int) -> SparseGraph:
    """Build a SparseGraph from (i, j) pairs.

    Duplicate pairs and reversed duplicates collapse to a single undirected
    edge stored in both rows; (i, i) pairs are kept as self-loops. The result
    is independent of input order.

    Raises InputError if any id falls outside 0..num_nodes-1.
    """
    if num_nodes < 0:
        raise InputError(f"num_nodes must be nonnegative, got {num_nodes}")
    pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= num_nodes).any(axis=1)][0]
        raise InputError(
            f"edge ({bad[0]}, {bad[1]}) out of range for num_nodes={num_nodes}"
        )
    if pairs.size == 0:
        return SparseGraph(num_nodes, np.zeros(num_nodes + 1, dtype=np.int64),
                           np.zeros(0, dtype=np.int64), 0)
    directed = np.concatenate([pairs, pairs[:, ::-1]])
    offsets, cols = _from_directed_entries(directed[:, 0], directed[:, 1], num_nodes)
    rows = np.repeat(np.arange(num_nodes), np.diff(offsets))
    loops = int(np.count_nonzero(rows == cols))
    edge_count = (len(cols) - loops) // 2
    return SparseGraph(num_nodes, offsets, cols, edge_count)


def compute_degrees(g: SparseGraph) -> np.ndarray:
    """Per-node degree (stored row length; a self-loop counts once)."""
    return np.diff(g.row_offsets)


def add_self_loops(g: SparseGraph) -> SparseGraph:
    """Return a copy of g whose pattern includes every (i, i) entry."""
    diag = np.arange(g.num_nodes, dtype=np.int64)
    rows = np.concatenate([g.row_ids(), diag])
    cols = np.concatenate([g.col_indices, diag])
    offsets, cols = _from_directed_entries(rows, cols, g.num_nodes)
    return SparseGraph(g.num_nodes, offsets, cols, g.edge_count)


def symmetric_normalize(g: SparseGraph, add_loops: bool = True) -> NormalizedAdjacency:
    """Compute the message-passing operator D^(-1/2) A D^(-1/2).

    When ``add_loops`` is true the pattern is first augmented with self-loops
    and degrees are recomputed on the augmented pattern. A node left without
    any incident entry gets an empty row (it receives no messages); this is
    logged as a warning rather than raised.
    """
    gg = add_self_loops(g) if add_loops else g
    deg = compute_degrees(gg)
    if not add_loops and (deg == 0).any():
        isolated = np.flatnonzero(deg == 0)
        logger.warning(
            "%d isolated node(s) (e.g. %d) have empty rows in the normalized "
            "adjacency and will receive no messages; consider self-loops",
            len(isolated), isolated[0],
        )
    rows = gg.row_ids()
    cols = gg.col_indices
    values = 1.0 / np.sqrt(deg[rows] * deg[cols].astype(np.float64))
    return NormalizedAdjacency(gg.num_nodes, gg.row_offsets.copy(), cols.copy(), values)


def undirected_edges(g: SparseGraph) -> np.ndarray:
    """All undirected edges as an (E + L, 2) array with i <= j, sorted.

    Self-loops appear as (i, i). Feeding the result back through
    build_from_edges reproduces g exactly.
    """
    rows = g.row_ids()
    keep = rows <= g.col_indices
    return np.column_stack([rows[keep], g.col_indices[keep]])


def dense_adjacency(g: SparseGraph, include_self_loops: bool = False) -> np.ndarray:
    """Materialize the 0/1 adjacency matrix (float64).

    By default the diagonal is zeroed even when the graph stores self-loops:
    reconstruction targets treat loops as a propagation device, not data.
    """
    a = np.zeros((g.num_nodes, g.num_nodes))
    a[g.row_ids(), g.col_indices] = 1.0
    if not include_self_loops:
        np.fill_diagonal(a, 0.0)
    return a
