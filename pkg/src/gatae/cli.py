"""Config-driven command line: train, score, eval, inject.

Each command is a pure function of its config and input files, so reruns
produce bit-identical artifacts (manifests additionally record wall time,
which is excluded from that guarantee). Exit codes: 0 success, 1 bad
configuration, 2 bad data or inputs, 3 training divergence; failures print
one machine-parsable JSON line on stderr.
"""

import argparse
import copy
import json
from pathlib import Path
import sys
import time

import numpy as np

from . import data as dio
from .anomaly import ThresholdPolicy, classify, node_scores, precision_recall_f1, roc_auc, select_threshold
from .errors import ConfigError, DataError, InputError, TrainingDivergedError
from .model import encode
from .training import TrainConfig, train

_DEFAULTS = {
    "data": {
        "edges": None,
        "features": None,
        "labels": None,
        "normalize_features": False,
        "synthetic": None,
    },
    "model": {
        "encoder_kind": "gat",
        "dims": [64, 32],          # hidden..., embedding; input dim comes from data
        "reg_weight": 1e-4,
        "self_loops": True,
        "leaky_slope": 0.2,
    },
    "train": {
        "lr": 0.01,
        "epochs": 200,
        "seed": 0,
        "neg_ratio": 1.0,
        "dense_limit": 5000,
        "log_every": 1,
    },
    "anomaly": {
        "threshold": {"kind": "contamination", "rate": 0.05},
        "score_mode": "dense",
        "seed": 0,
    },
    "inject": None,
    "output": {"dir": "runs/out"},
}

_SYNTHETIC_DEFAULTS = {"n": 500, "avg_degree": 8.0, "feat_dim": 32, "seed": 0}
_INJECT_DEFAULTS = {"num_cliques": 5, "clique_size": 5,
                    "feature_swap_fraction": 1.0, "seed": 0}
_THRESHOLD_DEFAULTS = {"fixed": {"kind": "fixed", "value": 0.0},
                       "contamination": {"kind": "contamination", "rate": 0.05}}


def _merge_section(name, defaults, given):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    merged = copy.deepcopy(defaults)
    merged.update(given)
    return merged


def load_config(path) -> dict:
    """Read and validate a run config, materializing every default."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    cfg = {}
    for name, defaults in _DEFAULTS.items():
        if name == "inject":
            cfg[name] = (_merge_section(name, _INJECT_DEFAULTS, raw[name])
                         if raw.get(name) is not None else None)
        else:
            cfg[name] = _merge_section(name, defaults, raw.get(name))
    if cfg["data"]["synthetic"] is not None:
        cfg["data"]["synthetic"] = _merge_section(
            "data.synthetic", _SYNTHETIC_DEFAULTS, cfg["data"]["synthetic"])
    thr = cfg["anomaly"]["threshold"]
    if not isinstance(thr, dict) or thr.get("kind") not in _THRESHOLD_DEFAULTS:
        raise ConfigError("anomaly.threshold.kind must be 'fixed' or 'contamination'")
    cfg["anomaly"]["threshold"] = _merge_section(
        "anomaly.threshold", _THRESHOLD_DEFAULTS[thr["kind"]], thr)
    return cfg


def _resolve_dataset(cfg, apply_inject=True) -> dio.Dataset:
    d = cfg["data"]
    if d["synthetic"] is not None and d["edges"] is not None:
        raise ConfigError("data: give either file paths or synthetic params, not both")
    if d["synthetic"] is not None:
        s = d["synthetic"]
        ds = dio.generate_synthetic(int(s["n"]), float(s["avg_degree"]),
                                    int(s["feat_dim"]), int(s["seed"]))
    elif d["edges"] is not None and d["features"] is not None:
        ds = dio.load_dataset(d["edges"], d["features"], d["labels"],
                              normalize_features=bool(d["normalize_features"]))
    else:
        raise ConfigError("data: needs either edges+features paths or synthetic params")
    if apply_inject and cfg["inject"] is not None:
        ds = dio.inject_anomalies(ds, _injection_config(cfg["inject"]))
    return ds


def _injection_config(section) -> dio.InjectionConfig:
    return dio.InjectionConfig(
        num_cliques=int(section["num_cliques"]),
        clique_size=int(section["clique_size"]),
        feature_swap_fraction=float(section["feature_swap_fraction"]),
        seed=int(section["seed"]),
    )


def _threshold_policy(section) -> ThresholdPolicy:
    if section["kind"] == "fixed":
        return ThresholdPolicy("fixed", value=float(section["value"]))
    return ThresholdPolicy("contamination", rate=float(section["rate"]))


def _dataset_stats(ds: dio.Dataset) -> dict:
    return {
        "num_nodes": ds.graph.num_nodes,
        "num_edges": ds.graph.edge_count,
        "feature_dim": int(ds.features.shape[1]),
        "num_labeled_anomalies": int(ds.labels.sum()) if ds.labels is not None else None,
    }


def _write_manifest(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _write_scores_csv(path, ds: dio.Dataset, scores, flags) -> None:
    inv = ds.inverse_ids()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("node_id,score,flag\n")
        for dense in range(ds.graph.num_nodes):
            f.write(f"{inv[dense]},{scores[dense]:.17g},{int(flags[dense])}\n")


def cmd_train(config_path, out_override=None, seed_override=None) -> int:
    started = time.monotonic()
    cfg = load_config(config_path)
    if seed_override is not None:
        cfg["train"]["seed"] = seed_override
    out = Path(out_override or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _resolve_dataset(cfg)
    m = cfg["model"]
    t = cfg["train"]
    tc = TrainConfig(
        epochs=int(t["epochs"]), lr=float(t["lr"]),
        reg_weight=float(m["reg_weight"]), seed=int(t["seed"]),
        neg_ratio=float(t["neg_ratio"]), dense_limit=int(t["dense_limit"]),
        encoder_kind=m["encoder_kind"],
        layer_dims=(ds.features.shape[1], *[int(x) for x in m["dims"]]),
        self_loops=bool(m["self_loops"]), leaky_slope=float(m["leaky_slope"]),
        log_every=int(t["log_every"]),
    )
    model, log = train(ds.graph, ds.features, tc)
    dio.save_model(out / "model.json", model)
    log.write_csv(out / "training_log.csv")
    _write_manifest(out / "train_manifest.json", {
        "command": "train",
        "config": cfg,
        "dataset": _dataset_stats(ds),
        "final_loss": log.records[-1].total,
        "wall_time_s": time.monotonic() - started,
    })
    return 0


def cmd_score(config_path, model_path, out_override=None) -> int:
    started = time.monotonic()
    cfg = load_config(config_path)
    out = Path(out_override or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _resolve_dataset(cfg)
    model = dio.load_model(model_path)
    if model.layer_dims[0] != ds.features.shape[1]:
        raise DataError(
            f"model expects {model.layer_dims[0]} feature columns, data has "
            f"{ds.features.shape[1]}")
    z, _ = encode(model, ds.graph, ds.features)
    an = cfg["anomaly"]
    scores = node_scores(ds.graph, z, mode=an["score_mode"],
                         rng=int(an["seed"]),
                         dense_limit=int(cfg["train"]["dense_limit"]))
    threshold = select_threshold(scores, _threshold_policy(an["threshold"]))
    flags = classify(scores, threshold)
    _write_scores_csv(out / "scores.csv", ds, scores, flags)
    _write_manifest(out / "score_manifest.json", {
        "command": "score",
        "config": cfg,
        "model_path": str(model_path),
        "dataset": _dataset_stats(ds),
        "threshold": threshold,
        "num_flagged": int(flags.sum()),
        "wall_time_s": time.monotonic() - started,
    })
    return 0


def _read_scores_csv(path):
    ids, scores, flags = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = f.readline().strip().rstrip("\r")
        if header != "node_id,score,flag":
            raise DataError(f"{path}: expected header 'node_id,score,flag'")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                ids.append(int(parts[0]))
                scores.append(float(parts[1]))
                flags.append(int(parts[2]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {line!r}") from None
    if not ids:
        raise DataError(f"{path}: no score rows")
    return np.asarray(ids), np.asarray(scores), np.asarray(flags, dtype=bool)


def _read_labels_csv(path):
    ids, labels = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = f.readline().strip().rstrip("\r")
        if header != "node_id,label":
            raise DataError(f"{path}: expected header 'node_id,label'")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                ids.append(int(parts[0]))
                labels.append(int(parts[1]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {line!r}") from None
    return np.asarray(ids), np.asarray(labels)


def cmd_eval(config_path, scores_path, labels_path, out_override=None) -> int:
    started = time.monotonic()
    cfg = load_config(config_path)
    out = Path(out_override or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    sid, scores, flags = _read_scores_csv(scores_path)
    lid, labels = _read_labels_csv(labels_path)
    if sorted(sid.tolist()) != sorted(lid.tolist()):
        raise DataError("scores and labels cover different node sets")
    order = {node: k for k, node in enumerate(sid.tolist())}
    perm = np.asarray([order[node] for node in lid.tolist()])
    scores, flags = scores[perm], flags[perm]
    report = precision_recall_f1(flags, labels)
    auc = roc_auc(scores, labels)
    payload = report.to_dict()
    payload["auc"] = auc
    with open(out / "metrics.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    _write_manifest(out / "eval_manifest.json", {
        "command": "eval",
        "config": cfg,
        "scores_path": str(scores_path),
        "labels_path": str(labels_path),
        "wall_time_s": time.monotonic() - started,
    })
    return 0


def cmd_inject(config_path, out_override=None, seed_override=None) -> int:
    started = time.monotonic()
    cfg = load_config(config_path)
    if cfg["inject"] is None:
        raise ConfigError("inject command needs an 'inject' section")
    if seed_override is not None:
        cfg["inject"]["seed"] = seed_override
    out = Path(out_override or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _resolve_dataset(cfg, apply_inject=False)
    injected = dio.inject_anomalies(ds, _injection_config(cfg["inject"]))
    dio.save_edges_csv(out / "edges.csv", injected)
    dio.save_features_json(out / "features.json", injected)
    dio.save_labels_csv(out / "labels.csv", injected)
    _write_manifest(out / "inject_manifest.json", {
        "command": "inject",
        "config": cfg,
        "dataset": _dataset_stats(injected),
        "wall_time_s": time.monotonic() - started,
    })
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatae",
        description="Graph-autoencoder anomaly detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a model and write model/log/manifest artifacts"),
        ("score", "score nodes with a trained model"),
        ("eval", "compute metrics from scores and labels files"),
        ("inject", "write an anomaly-injected copy of a dataset"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a run config JSON")
        p.add_argument("--out", help="override output.dir")
        if name in ("train", "inject"):
            p.add_argument("--seed", type=int, help=f"override {name} seed")
        if name == "score":
            p.add_argument("--model", required=True, help="trained model file")
        if name == "eval":
            p.add_argument("--scores", required=True, help="scores CSV from `score`")
            p.add_argument("--labels", required=True, help="node_id,label CSV")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "score":
            return cmd_score(args.config, args.model, args.out)
        if args.command == "eval":
            return cmd_eval(args.config, args.scores, args.labels, args.out)
        return cmd_inject(args.config, args.out, args.seed)
    except ConfigError as err:
        _fail(1, err)
        return 1
    except (DataError, InputError, FileNotFoundError) as err:
        _fail(2, err)
        return 2
    except TrainingDivergedError as err:
        _fail(3, err)
        return 3


def _fail(code, err) -> None:
    print(json.dumps({"code": code, "error": type(err).__name__,
                      "reason": str(err)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
