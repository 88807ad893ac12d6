"""Command-line entry point: declarative JSON configs, one run per process.

Subcommands: ``synth`` writes a synthetic dataset, ``train`` fits a model and
writes a checkpoint plus history, ``evaluate`` recomputes split RMSEs from a
checkpoint, ``predict`` emits one prediction vector, and ``analyze`` exports
drift, feature-independence, modality-relationship, and graph statistics.
Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import layers as L
from . import metrics as M
from . import training as T
from .graphs import CHEBYSHEV_BASIS, POWER_BASIS, compare_graphs, graph_bases, graph_density
from .numerics import NumericalFailure
from .regularization import RegularizerConfig

WINDOW_LENGTH = len(D.WINDOW_OFFSETS)

VARIANTS = {
    "MGCN": {"lower": L.MRGCN, "higher": L.MRGCN, "frozen": ["I", "O", "C", "M"],
             "use_group_lasso": False, "use_tensor_normal": False},
    "GGCN_only": {"lower": L.GGCN, "higher": L.GGCN, "frozen": ["I", "O", "C", "M"],
                  "use_group_lasso": True, "use_tensor_normal": False},
    "MRGCN_only": {"lower": L.MRGCN, "higher": L.MRGCN, "frozen": ["I", "O"],
                   "use_group_lasso": False, "use_tensor_normal": True},
    "GGCN_plus_MRGCN_2S": {"lower": L.GGCN, "higher": L.MRGCN, "frozen": ["I", "O"],
                           "use_group_lasso": True, "use_tensor_normal": True},
    "GGCN_plus_MRGCN_4S": {"lower": L.GGCN, "higher": L.MRGCN, "frozen": [],
                           "use_group_lasso": True, "use_tensor_normal": True},
}

_RUN_DEFAULTS = {
    "manifest": None,
    "variant": "GGCN_plus_MRGCN_2S",
    "network": {
        "output_dims": [32, 64, 32, 1],
        "cheb_degree": 4,
        "basis": POWER_BASIS,
        "per_vertex_bias": False,
    },
    "train": {
        "learning_rate": 5e-4,
        "batch_size": 32,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "max_epochs": 100,
        "patience": 10,
        "cov_update_every": 1,
        "seed": 0,
        "reg": {
            "alpha_intra": 0.1,
            "alpha_low": 1e-4,
            "alpha_high": 1e-4,
            "epsilon": 1e-6,
            "flip_flop_form": "literal",
            "normalize_covariance": True,
        },
    },
    "analysis": {"edge_threshold": 0.0, "include_diagonal": True, "max_samples": 256},
}

_SYNTH_DEFAULTS = {
    "grid_rows": None,
    "grid_cols": None,
    "weeks": None,
    "poi_categories": 13,
    "drift_rate": 0.0,
    "noise_scale": 0.0,
    "seed": 0,
    "interval_minutes": 30,
    "val_weeks": 1,
    "test_weeks": 1,
}


def _merge_defaults(config: dict, defaults: dict, context: str) -> dict:
    resolved = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            resolved[key] = _merge_defaults(config.get(key, {}), default, f"{context}.{key}")
        else:
            resolved[key] = config.get(key, default)
    unknown = set(config) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config field {context}.{sorted(unknown)[0]}")
    for key, value in resolved.items():
        if value is None and defaults[key] is None:
            raise ValueError(f"missing required config field {context}.{key}")
    return resolved


def _read_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file {path} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc


def _load_config(path, defaults) -> dict:
    return _merge_defaults(_read_config(path), defaults, "config")


def _resolve_run_config(path) -> dict:
    raw = _read_config(path)
    # derived fields are recomputed from the variant, so a previously written
    # run.json can be fed back in as a config
    raw.get("network", {}).pop("layer_kinds", None)
    raw.get("train", {}).get("reg", {}).pop("frozen_modes", None)
    config = _merge_defaults(raw, _RUN_DEFAULTS, "config")
    if config["variant"] not in VARIANTS:
        raise ValueError(
            f"unknown config field value variant={config['variant']!r}; "
            f"expected one of {sorted(VARIANTS)}"
        )
    if config["network"]["basis"] not in (POWER_BASIS, CHEBYSHEV_BASIS):
        raise ValueError(f"unknown basis {config['network']['basis']!r}")
    manifest = Path(config["manifest"])
    if not manifest.is_absolute():
        manifest = (Path(path).parent / manifest).resolve()
    config["manifest"] = str(manifest)
    variant = VARIANTS[config["variant"]]
    reg = config["train"]["reg"]
    reg["frozen_modes"] = list(variant["frozen"])
    if not variant["use_group_lasso"]:
        reg["alpha_low"] = 0.0
    if not variant["use_tensor_normal"]:
        reg["alpha_high"] = 0.0
    dims = config["network"]["output_dims"]
    lower = len(dims) // 2
    config["network"]["layer_kinds"] = [
        variant["lower"] if i < lower else variant["higher"] for i in range(len(dims))
    ]
    return config


def _build_net_config(config: dict, vertex_count: int) -> L.NetworkConfig:
    net = config["network"]
    specs = L.make_layer_specs(net["layer_kinds"], WINDOW_LENGTH, net["output_dims"])
    return L.NetworkConfig(
        modalities=3,
        cheb_degree=net["cheb_degree"],
        layer_specs=specs,
        per_vertex_bias=net["per_vertex_bias"],
        vertex_count=vertex_count,
    )


def _train_config(config: dict) -> T.TrainConfig:
    section = dict(config["train"])
    reg = RegularizerConfig(**section.pop("reg"))
    return T.TrainConfig(reg=reg, **section)


def _load_split_samples(config: dict):
    dataset = D.load_dataset(config["manifest"])
    samples = D.make_windows(dataset.series)
    train, val, test = D.split_dataset(
        samples, dataset.splits["train"], dataset.splits["val"], dataset.splits["test"]
    )
    return dataset, {"train": train, "val": val, "test": test}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _format_float(x: float) -> str:
    return repr(float(x))


def _cmd_synth(config_path, out_dir) -> int:
    config = _load_config(config_path, _SYNTH_DEFAULTS)
    val_weeks = config.pop("val_weeks")
    test_weeks = config.pop("test_weeks")
    synth_cfg = D.SynthConfig(**config)
    dataset = D.generate_synthetic(synth_cfg)
    splits = D.default_splits(synth_cfg, val_weeks, test_weeks)
    manifest_path = D.save_dataset(dataset, out_dir, splits)
    _write_json(Path(out_dir) / "synth_config.json", {**config,
                "val_weeks": val_weeks, "test_weeks": test_weeks})
    print(f"wrote dataset manifest {manifest_path}")
    return 0


def _cmd_train(config_path, out_dir) -> int:
    config = _resolve_run_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset, splits = _load_split_samples(config)
    net_config = _build_net_config(config, dataset.series.vertex_count)
    train_cfg = _train_config(config)
    result = T.train(splits, dataset.graphs, net_config, train_cfg,
                     config["network"]["basis"])
    _write_json(out / "run.json", config)
    with (out / "history.csv").open("w") as fh:
        fh.write("epoch,train_rmse,val_rmse\n")
        for row in result.history:
            fh.write(
                f"{row.epoch},{_format_float(row.train_rmse)},"
                f"{_format_float(row.val_rmse)}\n"
            )
    T.save_checkpoint(out, result.state, train_cfg.reg.frozen_modes)
    print(
        f"trained {config['variant']} for {len(result.history)} epochs; "
        f"best val RMSE {result.state.best_val_rmse:.6f} at epoch {result.state.best_epoch}"
    )
    return 0


def _load_run(config_path, out_dir):
    config = _resolve_run_config(config_path)
    dataset, splits = _load_split_samples(config)
    state = T.load_checkpoint(out_dir)
    bases = graph_bases(
        dataset.graphs, state.params.config.cheb_degree, config["network"]["basis"]
    )
    return config, dataset, splits, state, bases


def _cmd_evaluate(config_path, out_dir) -> int:
    config, _, splits, state, bases = _load_run(config_path, out_dir)
    report = {}
    for name, samples in splits.items():
        if samples:
            predictions = L.predict_batches(samples, bases, state.params, T.EVAL_CHUNK)
            report[f"{name}_rmse"] = M.rmse(predictions, M.stack_targets(samples))
        else:
            report[f"{name}_rmse"] = None
    report["recorded_best_val_rmse"] = state.best_val_rmse
    report["best_epoch"] = state.best_epoch
    _write_json(Path(out_dir) / "evaluation.json", report)
    shown = {k: v for k, v in report.items() if isinstance(v, float)}
    print("; ".join(f"{k}={v:.6f}" for k, v in sorted(shown.items())))
    return 0


def _cmd_predict(config_path, out_dir, target_index: int) -> int:
    config, dataset, _, state, bases = _load_run(config_path, out_dir)
    samples = {s.target_index: s for s in D.make_windows(dataset.series)}
    if target_index not in samples:
        raise ValueError(
            f"target index {target_index} has no sample (valid range "
            f"[{min(samples)}, {max(samples)}])"
        )
    prediction = L.network_forward(samples[target_index].input, bases, state.params)
    path = Path(out_dir) / f"prediction_{target_index}.csv"
    np.savetxt(path, prediction, delimiter=",", fmt="%.9g")
    print(f"wrote {path}")
    return 0


def _weekly_test_rmse(splits, state, bases, week: int, test_lo: int, n_weeks: int):
    values = []
    for k in range(n_weeks):
        lo, hi = test_lo + k * week, test_lo + (k + 1) * week
        picked = [s for s in splits["test"] if lo <= s.target_index < hi]
        predictions = L.predict_batches(picked, bases, state.params, T.EVAL_CHUNK)
        values.append(M.rmse(predictions, M.stack_targets(picked)))
    return values


def _cmd_analyze(config_path, out_dir) -> int:
    config, dataset, splits, state, bases = _load_run(config_path, out_dir)
    out = Path(out_dir)
    threshold = config["analysis"]["edge_threshold"]

    names = [g.modality_id for g in dataset.graphs]
    stats = {"density": {}, "pairs": {}}
    for graph, name in zip(dataset.graphs, names):
        stats["density"][name] = graph_density(graph, threshold)
    for a in range(len(dataset.graphs)):
        for b in range(a + 1, len(dataset.graphs)):
            cmp = compare_graphs(dataset.graphs[a], dataset.graphs[b], threshold)
            stats["pairs"][f"{names[a]}__{names[b]}"] = {
                "f_measure": cmp.f_measure,
                "edit_distance": cmp.edit_distance,
            }
    _write_json(out / "graph_stats.json", stats)

    week = dataset.series.week_intervals
    train_hi = dataset.splits["train"][1]
    test_lo, test_hi = dataset.splits["test"]
    n_weeks = (test_hi - test_lo) // week
    if train_hi < week or n_weeks < 1:
        raise ValueError("drift analysis needs at least one whole week in train and test")
    report = M.kl_temporal_drift(
        dataset.series.values[:, train_hi - week : train_hi],
        dataset.series.values[:, test_lo : test_lo + n_weeks * week],
        dataset.series.interval_minutes,
    )
    report = M.with_rmse(
        report, _weekly_test_rmse(splits, state, bases, week, test_lo, n_weeks)
    )
    with (out / "drift.csv").open("w") as fh:
        fh.write("week_index,kl_divergence,test_rmse\n")
        for entry in report.weeks:
            fh.write(
                f"{entry.week_index},{_format_float(entry.kl_divergence)},"
                f"{_format_float(entry.test_rmse)}\n"
            )
    _write_json(out / "drift.json", {
        "weeks": [
            {"week_index": e.week_index, "kl_divergence": e.kl_divergence,
             "test_rmse": e.test_rmse}
            for e in report.weeks
        ]
    })

    eval_samples = (splits["test"] or splits["val"])[: config["analysis"]["max_samples"]]
    if not eval_samples:
        raise ValueError("analysis needs a nonempty test or validation split")
    x_batch = np.stack([s.input for s in eval_samples])
    _, hidden = L.network_forward_hidden(x_batch, bases, state.params)
    include_diag = config["analysis"]["include_diagonal"]
    independence = []
    for idx, h in enumerate(hidden):
        if h.shape[3] < 2:
            continue
        per_modality = {
            names[j]: M.feature_independence(
                h[j].reshape(-1, h.shape[3]), include_diag
            )
            for j in range(h.shape[0])
        }
        independence.append(
            {
                "layer": idx + 1,
                "per_modality": per_modality,
                "mean": float(np.mean(list(per_modality.values()))),
            }
        )
    _write_json(out / "feature_independence.json", {"layers": independence})
    with (out / "feature_independence.csv").open("w") as fh:
        fh.write("layer,modality,independence\n")
        for entry in independence:
            for name, value in entry["per_modality"].items():
                fh.write(f"{entry['layer']},{name},{_format_float(value)}\n")

    for idx, (spec, layer) in enumerate(
        zip(state.params.config.layer_specs, state.params.layers)
    ):
        if spec.kind != L.MRGCN:
            continue
        rel = M.modality_relationship(layer.covariances, idx + 1, tuple(names))
        with (out / f"relationship_layer{idx + 1}.csv").open("w") as fh:
            fh.write("row,col,correlation,raw_covariance\n")
            for a in range(len(rel.labels)):
                for b in range(len(rel.labels)):
                    fh.write(
                        f"{rel.labels[a]},{rel.labels[b]},"
                        f"{_format_float(rel.matrix[a, b])},"
                        f"{_format_float(rel.raw[a, b])}\n"
                    )
        _write_json(out / f"relationship_layer{idx + 1}.json", {
            "layer": rel.layer_id,
            "labels": list(rel.labels),
            "correlation": rel.matrix.tolist(),
            "raw_covariance": rel.raw.tolist(),
        })
    print(f"wrote analysis artifacts to {out}")
    return 0


def dispatch(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="mmgcn",
        description="Multi-modal multi-graph convolution forecasting runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, txt in (
        ("synth", "generate a synthetic dataset"),
        ("train", "train a model and write checkpoint + history"),
        ("evaluate", "compute split RMSEs from a checkpoint"),
        ("predict", "emit predictions for one target index"),
        ("analyze", "export drift, independence, relationship, and graph stats"),
    ):
        cmd = sub.add_parser(name, help=txt)
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--out", required=True, help="output (run) directory")
        if name == "predict":
            cmd.add_argument("--index", required=True, type=int,
                             help="target interval index to predict")
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args.config, args.out)
        if args.command == "train":
            return _cmd_train(args.config, args.out)
        if args.command == "evaluate":
            return _cmd_evaluate(args.config, args.out)
        if args.command == "predict":
            return _cmd_predict(args.config, args.out, args.index)
        return _cmd_analyze(args.config, args.out)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
