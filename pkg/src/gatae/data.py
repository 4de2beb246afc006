"""Dataset ingestion, synthetic generation, anomaly injection, persistence.

Edge files are CSV with header ``id_1,id_2``; original ids are remapped to
dense 0..N-1 in first-appearance order and the map is kept for round trips.
Feature files are JSON objects mapping original-id strings to lists of
feature indices (multi-hot). Model files are versioned JSON documents with
base64-encoded float64 parameter blobs, so save/load is bit-exact.
"""

import base64
from dataclasses import dataclass
import json
import logging
import math

import numpy as np

from .errors import DataError, InputError, ModelFormatError
from .graph import SparseGraph, build_from_edges, compute_degrees, undirected_edges
from .layers import GATLayerParams, GCNLayerParams
from .model import GAEModel

logger = logging.getLogger(__name__)

MODEL_FORMAT = "gatae-model"
MODEL_FORMAT_VERSION = 1


@dataclass
class Dataset:
    graph: SparseGraph
    features: np.ndarray               # (N, d) float64 multi-hot
    labels: np.ndarray | None          # (N,) int 0/1 anomaly ground truth
    id_map: dict                       # original id -> dense id

    def inverse_ids(self) -> np.ndarray:
        """original_ids[dense_id], as an int64 array."""
        out = np.zeros(self.graph.num_nodes, dtype=np.int64)
        for orig, dense in self.id_map.items():
            out[dense] = orig
        return out


@dataclass(frozen=True)
class InjectionConfig:
    num_cliques: int
    clique_size: int
    feature_swap_fraction: float
    seed: int = 0

    def __post_init__(self):
        if self.clique_size < 2:
            raise InputError("clique_size must be >= 2")
        if self.num_cliques < 1:
            raise InputError("num_cliques must be >= 1")
        if not 0.0 <= self.feature_swap_fraction <= 1.0:
            raise InputError("feature_swap_fraction must be in [0, 1]")


def load_edges_csv(path):
    """Parse an `id_1,id_2` edge CSV; returns (edges, id_map).

    edges is an (M, 2) int64 array of dense ids in file order (duplicates
    preserved; the graph builder dedups). Raises DataError on a malformed
    header or row (with its line number) and on a file without edges.
    """
    id_map = {}
    edges = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = f.readline().strip().rstrip("\r")
        if header != "id_1,id_2":
            raise DataError(f"{path}: expected header 'id_1,id_2', got {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected two comma-separated ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer id in {line!r}") from None
            if u < 0 or v < 0:
                raise DataError(f"{path}:{lineno}: negative id in {line!r}")
            for orig in (u, v):
                if orig not in id_map:
                    id_map[orig] = len(id_map)
            edges.append((id_map[u], id_map[v]))
    if not edges:
        raise DataError(f"{path}: no edges found")
    return np.asarray(edges, dtype=np.int64), id_map


def load_features_json(path, id_map, normalize: bool = False) -> np.ndarray:
    """Multi-hot feature matrix from a JSON {original id: [indices]} object.

    The width is max index + 1 across the whole file. Nodes missing from the
    file get zero rows (warned); file entries for unknown ids are ignored
    (warned). With normalize=True, nonzero rows are scaled to unit L2 norm.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: expected a JSON object at top level")
    n = len(id_map)
    width = 0
    parsed = {}
    for key, val in raw.items():
        try:
            orig = int(key)
            idxs = [int(i) for i in val]
        except (TypeError, ValueError):
            raise DataError(f"{path}: malformed entry for key {key!r}") from None
        if any(i < 0 for i in idxs):
            raise DataError(f"{path}: negative feature index for key {key!r}")
        parsed[orig] = idxs
        if idxs:
            width = max(width, max(idxs) + 1)
    x = np.zeros((n, max(width, 1)))
    missing = 0
    unknown = 0
    for orig, idxs in parsed.items():
        dense = id_map.get(orig)
        if dense is None:
            unknown += 1
            continue
        x[dense, idxs] = 1.0
    for orig, dense in id_map.items():
        if orig not in parsed:
            missing += 1
    if missing:
        logger.warning("%s: %d node(s) missing from feature file; zero rows used",
                       path, missing)
    if unknown:
        logger.warning("%s: %d feature entr(ies) for ids not in the edge file; ignored",
                       path, unknown)
    if normalize:
        norms = np.sqrt((x ** 2).sum(axis=1))
        nz = norms > 0
        x[nz] /= norms[nz, None]
    return x


def load_labels_csv(path, id_map) -> np.ndarray:
    """Binary labels from a `node_id,label` CSV keyed by original ids."""
    labels = np.zeros(len(id_map), dtype=np.int64)
    seen = np.zeros(len(id_map), dtype=bool)
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = f.readline().strip().rstrip("\r")
        if header != "node_id,label":
            raise DataError(f"{path}: expected header 'node_id,label', got {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                orig, lab = int(parts[0]), int(parts[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {line!r}") from None
            if lab not in (0, 1):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1")
            dense = id_map.get(orig)
            if dense is None:
                raise DataError(f"{path}:{lineno}: unknown node id {orig}")
            labels[dense] = lab
            seen[dense] = True
    if not seen.all():
        logger.warning("%s: %d node(s) without a label; defaulting to 0",
                       path, int((~seen).sum()))
    return labels


def load_dataset(edges_path, features_path, labels_path=None,
                 normalize_features: bool = False) -> Dataset:
    """Ingest edge/feature (and optional label) files into a Dataset."""
    edges, id_map = load_edges_csv(edges_path)
    graph = build_from_edges(edges, len(id_map))
    features = load_features_json(features_path, id_map, normalize=normalize_features)
    labels = load_labels_csv(labels_path, id_map) if labels_path else None
    return Dataset(graph, features, labels, id_map)


def _emission_order(pairs: np.ndarray) -> np.ndarray:
    """Order (i, j) pairs (i <= j) so first appearances follow dense ids.

    Sorting by (j ascending, i descending) guarantees that scanning the rows
    introduces node 0, then 1, then 2, ... which makes ingest(emit(d))
    reproduce d's id numbering exactly.
    """
    return np.lexsort((-pairs[:, 0], pairs[:, 1]))


def save_edges_csv(path, dataset: Dataset) -> None:
    """Emit the graph as an `id_1,id_2` CSV in canonical order, original ids."""
    pairs = undirected_edges(dataset.graph)
    inv = dataset.inverse_ids()
    order = _emission_order(pairs)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("id_1,id_2\n")
        for i, j in pairs[order]:
            f.write(f"{inv[i]},{inv[j]}\n")


def save_features_json(path, dataset: Dataset) -> None:
    """Emit features as {original id: [active indices]}, keys in dense order."""
    inv = dataset.inverse_ids()
    out = {}
    for dense in range(dataset.graph.num_nodes):
        idxs = np.flatnonzero(dataset.features[dense] != 0)
        out[str(inv[dense])] = [int(i) for i in idxs]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(out, f, separators=(",", ":"))
        f.write("\n")


def save_labels_csv(path, dataset: Dataset) -> None:
    if dataset.labels is None:
        raise InputError("dataset has no labels to save")
    inv = dataset.inverse_ids()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("node_id,label\n")
        for dense in range(dataset.graph.num_nodes):
            f.write(f"{inv[dense]},{int(dataset.labels[dense])}\n")


def generate_synthetic(n: int, avg_degree: float, feat_dim: int, seed: int) -> Dataset:
    """Random test dataset: ER-style graph plus degree-correlated features.

    Each unordered pair is an edge with probability avg_degree/(n-1). Half
    the feature columns thermometer-code the node's degree (so attributes
    genuinely predict connectivity); the rest carry a few random identity
    bits. Labels start all zero; the id map is the identity.
    """
    if n < 10:
        raise InputError("synthetic datasets need n >= 10")
    if avg_degree < 0 or avg_degree > n - 1:
        raise InputError(f"avg_degree must be in [0, {n - 1}]")
    if feat_dim < 4:
        raise InputError("feat_dim must be >= 4")
    rng = np.random.default_rng(seed)
    p = avg_degree / (n - 1)
    if n <= 4000:
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(len(iu)) < p
        pairs = np.column_stack([iu[keep], ju[keep]])
    else:
        total = n * (n - 1) // 2
        m = rng.binomial(total, p)
        chosen = set()
        while len(chosen) < m:
            i = int(rng.integers(n))
            j = int(rng.integers(n))
            if i != j:
                chosen.add((min(i, j), max(i, j)))
        pairs = np.array(sorted(chosen), dtype=np.int64)
    graph = build_from_edges(pairs, n)
    deg = compute_degrees(graph)
    d_thermo = feat_dim // 2
    cap = max(2.0 * avg_degree, 1.0)
    level = np.rint(d_thermo * np.minimum(deg, cap) / cap).astype(np.int64)
    x = np.zeros((n, feat_dim))
    for i in range(n):
        x[i, :level[i]] = 1.0
        extra = rng.choice(feat_dim - d_thermo, size=min(3, feat_dim - d_thermo),
                           replace=False)
        x[i, d_thermo + extra] = 1.0
    labels = np.zeros(n, dtype=np.int64)
    return Dataset(graph, x, labels, {i: i for i in range(n)})


def _distance_over_two(g: SparseGraph, source: int) -> np.ndarray:
    """Boolean mask of nodes at graph distance > 2 from source (or unreachable)."""
    near = {source}
    for j in g.neighbors(source):
        near.add(int(j))
        near.update(int(k) for k in g.neighbors(j))
    mask = np.ones(g.num_nodes, dtype=bool)
    mask[list(near)] = False
    return mask


def inject_anomalies(d: Dataset, cfg: InjectionConfig) -> Dataset:
    """Plant labeled anomalies: cliques plus feature swaps.

    Picks num_cliques disjoint groups of clique_size nodes, adds every
    missing within-group edge, and for ceil(fraction * size) members per
    group replaces the feature row with that of a uniformly chosen node at
    graph distance > 2 (any other node if none qualifies). Every group
    member is labeled 1; nothing else changes.
    """
    n = d.graph.num_nodes
    total = cfg.num_cliques * cfg.clique_size
    if total > n:
        raise InputError(
            f"{cfg.num_cliques} cliques of {cfg.clique_size} need {total} nodes, "
            f"graph has {n}")
    rng = np.random.default_rng(cfg.seed)
    members = rng.choice(n, size=total, replace=False).reshape(
        cfg.num_cliques, cfg.clique_size)
    new_edges = []
    for clique in members:
        clique = np.sort(clique)
        for a in range(cfg.clique_size):
            for b in range(a + 1, cfg.clique_size):
                new_edges.append((clique[a], clique[b]))
    base = undirected_edges(d.graph)
    all_pairs = np.concatenate([base, np.asarray(new_edges, dtype=np.int64)])
    graph = build_from_edges(all_pairs, n)

    features = d.features.copy()
    swaps = math.ceil(cfg.feature_swap_fraction * cfg.clique_size)
    for clique in members:
        targets = rng.choice(clique, size=swaps, replace=False) if swaps else []
        for t in targets:
            far = _distance_over_two(d.graph, int(t))
            candidates = np.flatnonzero(far)
            if len(candidates) == 0:
                candidates = np.setdiff1d(np.arange(n), [t])
            donor = int(rng.choice(candidates))
            features[t] = d.features[donor]

    labels = np.zeros(n, dtype=np.int64)
    labels[members.ravel()] = 1
    return Dataset(graph, features, labels, dict(d.id_map))


def _encode_blob(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _decode_blob(text: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode(), validate=True)
    except Exception:
        raise ModelFormatError("corrupt parameter blob") from None
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise ModelFormatError(
            f"parameter blob has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_model(path, model: GAEModel) -> None:
    """Persist a model as a versioned JSON document (canonical bytes)."""
    layers = []
    for p in model.layers:
        entry = {"weight": _encode_blob(p.weight),
                 "activation": p.out_activation}
        if isinstance(p, GATLayerParams):
            entry["attn"] = _encode_blob(p.attn)
        layers.append(entry)
    doc = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "encoder_kind": model.encoder_kind,
        "layer_dims": [int(x) for x in model.layer_dims],
        "reg_weight": model.reg_weight,
        "self_loops": model.self_loops,
        "leaky_slope": model.leaky_slope,
        "layers": layers,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_model(path) -> GAEModel:
    """Load a model saved by save_model; bit-exact inverse.

    Raises ModelFormatError on a corrupt document or a version this code
    does not understand.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError:
        raise ModelFormatError(f"{path}: truncated or corrupt model file") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: format version {doc.get('format_version')} is not "
            f"supported (expected {MODEL_FORMAT_VERSION})")
    try:
        dims = tuple(int(x) for x in doc["layer_dims"])
        kind = doc["encoder_kind"]
        layers = []
        for (d_in, d_out), entry in zip(zip(dims, dims[1:]), doc["layers"]):
            w = _decode_blob(entry["weight"], (d_in, d_out))
            act = entry["activation"]
            if kind == "gat":
                a = _decode_blob(entry["attn"], (2 * d_out,))
                layers.append(GATLayerParams(w, a, leaky_slope=doc["leaky_slope"],
                                             out_activation=act))
            else:
                layers.append(GCNLayerParams(w, out_activation=act))
        if len(layers) != len(dims) - 1:
            raise ModelFormatError(f"{path}: wrong number of layers")
        return GAEModel(kind, dims, layers, reg_weight=doc["reg_weight"],
                        self_loops=doc["self_loops"], leaky_slope=doc["leaky_slope"])
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: malformed model document ({err})") from None
