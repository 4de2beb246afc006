"""Graph anomaly detection with an attention-based graph autoencoder.

Learn node embeddings on an undirected attributed graph, reconstruct the
adjacency with an inner-product decoder, and flag nodes whose reconstruction
error exceeds a threshold.
"""

from .anomaly import (
    MetricsReport,
    ThresholdPolicy,
    classify,
    evaluate_scores,
    node_scores,
    precision_recall_f1,
    roc_auc,
    select_threshold,
)
from .data import (
    Dataset,
    InjectionConfig,
    generate_synthetic,
    inject_anomalies,
    load_dataset,
    load_edges_csv,
    load_features_json,
    load_model,
    save_model,
)
from .graph import (
    NormalizedAdjacency,
    SparseGraph,
    add_self_loops,
    build_from_edges,
    compute_degrees,
    symmetric_normalize,
)
from .model import (
    GAEModel,
    LossBreakdown,
    decode_dense,
    decode_entries,
    encode,
    loss_backward,
    loss_dense,
    loss_sampled,
)
from .training import AdamState, TrainConfig, TrainLog, adam_step, init_params, train

__version__ = "0.1.0"
