"""Per-node anomaly scoring, thresholding, and evaluation metrics.

A node's score is the row mean of its squared reconstruction error: nodes
whose incident edges (and non-edges) the decoder gets wrong rank high. The
sampled mode estimates the same quantity from the node's edges plus a few
sampled non-neighbors when densifying is too expensive.
"""

from dataclasses import dataclass
import logging

import numpy as np

from .errors import InputError
from .graph import SparseGraph, compute_degrees, dense_adjacency
from .model import DENSE_LIMIT_DEFAULT, decode_dense, decode_entries

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Either a fixed cutoff or a contamination quantile.

    contamination(rate) flags (approximately) the top `rate` fraction of
    scores: the threshold is the (1 - rate) quantile, and flags use a
    strictly-greater comparison.
    """

    kind: str                 # "fixed" | "contamination"
    value: float = 0.0        # cutoff for fixed
    rate: float = 0.05        # fraction for contamination

    def __post_init__(self):
        if self.kind not in ("fixed", "contamination"):
            raise InputError(f"unknown threshold kind {self.kind!r}")
        if self.kind == "fixed" and self.value < 0:
            raise InputError("fixed threshold must be nonnegative")
        if self.kind == "contamination" and not 0.0 < self.rate < 1.0:
            raise InputError("contamination rate must be in (0, 1)")


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    zero_division: tuple = ()   # metrics whose denominator was zero

    def to_dict(self) -> dict:
        return {
            "auc": self.auc, "f1": self.f1, "precision": self.precision,
            "recall": self.recall, "tp": self.tp, "fp": self.fp,
            "tn": self.tn, "fn": self.fn,
            "zero_division": list(self.zero_division),
        }


def node_scores(g: SparseGraph, z: np.ndarray, mode: str = "dense",
                rng=None, dense_limit: int = DENSE_LIMIT_DEFAULT) -> np.ndarray:
    """Per-node reconstruction error.

    dense: score(i) = (1/N) * sum_j (A_ij - Ahat_ij)^2 over the full row
    (diagonal included, target 0). sampled: mean squared error over node i's
    edges plus k = max(deg(i), 16) uniformly sampled non-neighbors,
    deterministic given the rng seed.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != g.num_nodes:
        raise InputError(f"z has {z.shape[0]} rows for {g.num_nodes} nodes")
    if mode == "dense":
        a = dense_adjacency(g)
        ahat = decode_dense(z, dense_limit)
        return ((a - ahat) ** 2).sum(axis=1) / g.num_nodes
    if mode != "sampled":
        raise InputError(f"unknown score mode {mode!r}")
    rng = np.random.default_rng(0 if rng is None else rng) \
        if not isinstance(rng, np.random.Generator) else rng
    n = g.num_nodes
    rows = g.row_ids()
    offdiag = rows != g.col_indices
    deg = np.bincount(rows[offdiag], minlength=n)
    pairs = []
    seg_sizes = np.zeros(n, dtype=np.int64)
    for i in range(n):
        nbrs = g.neighbors(i)
        nbrs = nbrs[nbrs != i]
        k = min(max(int(deg[i]), 16), n - 1 - len(nbrs))
        banned = set(nbrs.tolist())
        banned.add(i)
        picked = set()
        while len(picked) < k:
            j = int(rng.integers(n))
            if j not in banned and j not in picked:
                picked.add(j)
        sampled = np.fromiter(sorted(picked), dtype=np.int64, count=len(picked))
        col = np.concatenate([nbrs, sampled])
        pairs.append(np.column_stack([np.full(len(col), i, dtype=np.int64), col]))
        seg_sizes[i] = len(col)
    allpairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    p = decode_entries(z, allpairs)
    target = np.zeros(len(p))
    bounds = np.concatenate([[0], np.cumsum(seg_sizes)])
    for i in range(n):
        target[bounds[i]:bounds[i] + deg[i]] = 1.0
    err = (target - p) ** 2
    scores = np.zeros(n)
    nonempty = seg_sizes > 0
    scores[nonempty] = np.add.reduceat(err, bounds[:-1][nonempty]) / seg_sizes[nonempty]
    return scores


def select_threshold(scores: np.ndarray, policy: ThresholdPolicy) -> float:
    """Resolve a policy to a cutoff value on these scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InputError("cannot select a threshold on empty scores")
    if policy.kind == "fixed":
        return float(policy.value)
    thr = float(np.quantile(scores, 1.0 - policy.rate))
    if scores.min() == scores.max():
        logger.warning("all %d scores are equal (%g); nothing will be flagged",
                       scores.size, scores.min())
    return thr


def classify(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Binary flags: score strictly greater than the threshold."""
    return np.asarray(scores, dtype=np.float64) > threshold


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative.

    Ties count one half (midrank method), so all-equal scores give exactly
    0.5. Raises InputError unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InputError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be binary 0/1")
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise InputError("AUC undefined: labels contain a single class")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    midranks = starts + (counts + 1) / 2.0
    ranks = midranks[inverse]
    return float((ranks[labels == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def precision_recall_f1(flags: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """Confusion counts and threshold metrics for binary flags.

    Zero-denominator metrics come back as 0.0 and are named in
    zero_division. The auc field is NaN here; evaluate_scores fills it.
    """
    flags = np.asarray(flags).astype(bool)
    labels = np.asarray(labels)
    if flags.shape != labels.shape:
        raise InputError(f"flags shape {flags.shape} != labels shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be binary 0/1")
    truth = labels == 1
    tp = int((flags & truth).sum())
    fp = int((flags & ~truth).sum())
    fn = int((~flags & truth).sum())
    tn = int((~flags & ~truth).sum())
    degenerate = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, degenerate + ["precision"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, degenerate + ["recall"]
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, degenerate + ["f1"]
    return MetricsReport(float("nan"), f1, precision, recall,
                         tp, fp, tn, fn, tuple(degenerate))


def evaluate_scores(scores: np.ndarray, labels: np.ndarray,
                    policy: ThresholdPolicy) -> tuple[MetricsReport, float]:
    """Threshold, classify, and compute the full metric suite.

    Returns (report, threshold).
    """
    threshold = select_threshold(scores, policy)
    flags = classify(scores, threshold)
    report = precision_recall_f1(flags, labels)
    auc = roc_auc(scores, labels)
    return (MetricsReport(auc, report.f1, report.precision, report.recall,
                          report.tp, report.fp, report.tn, report.fn,
                          report.zero_division), threshold)
