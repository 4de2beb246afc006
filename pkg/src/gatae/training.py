"""Parameter initialization, Adam, and the full-graph training loop.

One training step is one forward/backward/update over the whole graph.
Everything is driven by a single seed: parameter draws and per-epoch
negative sampling consume one Generator sequentially, so a config reruns to
bit-identical parameters and logs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .graph import SparseGraph
from .layers import GATLayerParams, GCNLayerParams
from .model import (
    DENSE_LIMIT_DEFAULT,
    ENCODER_KINDS,
    GAEModel,
    encode,
    grad_arrays,
    loss_backward,
    prepare_propagation,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    lr: float
    m: list
    v: list
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_adam(params: list, lr: float) -> AdamState:
    return AdamState(lr=lr,
                     m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """One bias-corrected Adam update; mutates state, returns new parameters.

    Raises TrainingDivergedError if any gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("params/grads/state length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ConfigError(f"grad shape {g.shape} != param shape {p.shape} at {i}")
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"non-finite gradient in parameter {i}",
                                        last_good_epoch=state.t)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def glorot_uniform(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform draw with the Glorot limit sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(dims, kind: str, rng, leaky_slope: float = 0.2) -> list:
    """Fresh layer parameters for the given dimension chain.

    Hidden layers use relu; the final layer is linear so embeddings keep
    both signs for the inner-product decoder. Attention vectors are drawn
    with Glorot fan (2 * d_out, 1).
    """
    if kind not in ENCODER_KINDS:
        raise ConfigError(f"encoder kind must be one of {ENCODER_KINDS}")
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"layer dims must be >= 2 positive sizes, got {dims}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    layers = []
    for li, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = "identity" if li == len(dims) - 2 else "relu"
        w = glorot_uniform(rng, d_in, d_out, (d_in, d_out))
        if kind == "gat":
            a = glorot_uniform(rng, 2 * d_out, 1, 2 * d_out)
            layers.append(GATLayerParams(w, a, leaky_slope=leaky_slope,
                                         out_activation=act))
        else:
            layers.append(GCNLayerParams(w, out_activation=act))
    return layers


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    reg_weight: float = 1e-4
    seed: int = 0
    neg_ratio: float = 1.0
    dense_limit: int = DENSE_LIMIT_DEFAULT
    encoder_kind: str = "gat"
    layer_dims: tuple | None = None   # (d_in, hidden..., d_embed); None = (d_in, 64, 32)
    self_loops: bool = True
    leaky_slope: float = 0.2
    log_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.neg_ratio <= 0:
            raise ConfigError("neg_ratio must be positive")


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    recon: float
    reg: float
    total: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        """Emit `epoch,recon,reg,total` rows with 17 significant digits."""
        with open(path, "w", newline="\n") as f:
            f.write("epoch,recon,reg,total\n")
            for r in self.records:
                f.write(f"{r.epoch},{r.recon:.17g},{r.reg:.17g},{r.total:.17g}\n")


def build_model(cfg: TrainConfig, d_in: int, rng) -> GAEModel:
    """Instantiate a model for cfg on data with d_in feature columns."""
    dims = cfg.layer_dims if cfg.layer_dims is not None else (d_in, 64, 32)
    dims = tuple(int(d) for d in dims)
    if dims[0] != d_in:
        raise ConfigError(f"layer_dims[0]={dims[0]} but data has {d_in} features")
    layers = init_params(dims, cfg.encoder_kind, rng, leaky_slope=cfg.leaky_slope)
    return GAEModel(cfg.encoder_kind, dims, layers, reg_weight=cfg.reg_weight,
                    self_loops=cfg.self_loops, leaky_slope=cfg.leaky_slope)


def train(g: SparseGraph, x: np.ndarray, cfg: TrainConfig):
    """Train a fresh model on (g, x); returns (model, TrainLog).

    The loss of each epoch is evaluated before that epoch's update. Logs are
    written for epoch 1, every log_every-th epoch, and the final epoch.
    Raises TrainingDivergedError on a non-finite loss, gradient, or
    parameter, reporting the last epoch that completed cleanly.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, x.shape[1], rng)
    prep = prepare_propagation(model, g)
    state = init_adam(model.param_arrays(), cfg.lr)
    log = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        z, caches = encode(model, g, x, prep=prep)
        breakdown, grads = loss_backward(
            model, g, caches, z,
            neg_ratio=cfg.neg_ratio, rng=rng, dense_limit=cfg.dense_limit,
        )
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch}", last_good_epoch=epoch - 1)
        try:
            new_params = adam_step(state, model.param_arrays(),
                                   grad_arrays(model, grads))
        except TrainingDivergedError as err:
            raise TrainingDivergedError(
                f"non-finite gradient at epoch {epoch}",
                last_good_epoch=epoch - 1) from err
        model.set_param_arrays(new_params)
        for p in new_params:
            if not np.isfinite(p).all():
                raise TrainingDivergedError(
                    f"non-finite parameter after epoch {epoch}",
                    last_good_epoch=epoch - 1)
        if epoch == 1 or epoch == cfg.epochs or epoch % cfg.log_every == 0:
            log.records.append(TrainRecord(epoch, breakdown.recon,
                                           breakdown.reg, breakdown.total))
    return model, log
