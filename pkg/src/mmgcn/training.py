"""Adam training loop alternating weight updates with flip-flop covariance
re-estimation, plus checkpointing that restores bit-exactly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .graphs import POWER_BASIS, graph_bases
from .metrics import rmse, stack_targets
from .numerics import MODE_NAMES, NumericalFailure
from .regularization import RegularizerConfig, flip_flop_update, normalize_trace

CHECKPOINT_VERSION = 1
EVAL_CHUNK = 256


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    cov_update_every: int = 1
    seed: int = 0
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.cov_update_every < 1:
            raise ValueError("cov_update_every must be >= 1")


@dataclass
class TrainState:
    params: L.NetworkParams
    first_moment: list
    second_moment: list
    step: int = 0
    best_val_rmse: float = float("inf")
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    rng: np.random.Generator | None = None


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    train_rmse: float
    val_rmse: float


@dataclass
class TrainResult:
    state: TrainState
    history: list
    cov_snapshots: list  # per epoch: one CovarianceSet copy per high layer


def init_train_state(params: L.NetworkParams, seed: int) -> TrainState:
    arrays = [arr for _, arr in L.named_param_arrays(params)]
    return TrainState(
        params,
        [np.zeros_like(a) for a in arrays],
        [np.zeros_like(a) for a in arrays],
        rng=np.random.default_rng(seed + 1),
    )


def total_loss(batch, params: L.NetworkParams, bases, reg: RegularizerConfig) -> float:
    """Smoothed batch RMSE plus the group-lasso and tensor-normal terms."""
    if not batch:
        raise ValueError("batch must be nonempty")
    x_batch = np.stack([np.asarray(x, dtype=float) for x, _ in batch])
    y_batch = np.stack([np.asarray(y, dtype=float).reshape(-1) for _, y in batch])
    loss, _ = L.batch_loss(x_batch, y_batch, bases, params, reg, with_grads=False)
    return loss


def adam_step(state: TrainState, grads, cfg: TrainConfig) -> TrainState:
    """Standard bias-corrected Adam, in place; rejects non-finite gradients."""
    named = L.named_param_arrays(state.params)
    flat_grads = []
    for layer_grads in grads:
        flat_grads.extend([layer_grads.weights, layer_grads.biases])
    state.step += 1
    t = state.step
    for (name, param), grad, m, v in zip(named, flat_grads, state.first_moment,
                                         state.second_moment):
        if not np.isfinite(grad).all():
            raise NumericalFailure(f"non-finite gradient in {name}")
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * grad
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * grad**2
        m_hat = m / (1.0 - cfg.adam_beta1**t)
        v_hat = v / (1.0 - cfg.adam_beta2**t)
        param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return state


def _update_covariances(params: L.NetworkParams, reg: RegularizerConfig) -> None:
    """Flip-flop pass over the non-frozen modes of every high layer, using the
    post-step weights; optional unit trace-average rescale fixes the gauge."""
    for spec, layer in zip(params.config.layer_specs, params.layers):
        if spec.kind != L.MRGCN:
            continue
        cov = layer.covariances
        for mode in range(4):
            if cov.frozen[mode]:
                continue
            sigma = flip_flop_update(
                layer.weights, cov, mode, reg.epsilon, reg.flip_flop_form
            )
            if reg.normalize_covariance:
                sigma = normalize_trace(sigma, reg.epsilon)
            cov.replace(mode, sigma)


def _evaluate(samples, bases, params: L.NetworkParams) -> float:
    predictions = L.predict_batches(samples, bases, params, EVAL_CHUNK)
    return rmse(predictions, stack_targets(samples))


def _snapshot_optimizer(state: TrainState):
    return (
        L.copy_network_params(state.params),
        [m.copy() for m in state.first_moment],
        [v.copy() for v in state.second_moment],
        state.step,
        json.loads(json.dumps(state.rng.bit_generator.state)),
    )


def _restore_optimizer(state: TrainState, snapshot) -> None:
    params, first, second, step, rng_state = snapshot
    state.params = params
    state.first_moment = first
    state.second_moment = second
    state.step = step
    state.rng.bit_generator.state = rng_state


def train(dataset_splits, graphs, net_config: L.NetworkConfig, cfg: TrainConfig,
          basis_kind: str = POWER_BASIS) -> TrainResult:
    """Mini-batch loop: seeded shuffle per epoch, Adam on the total objective,
    covariance re-estimation every ``cov_update_every`` batches, and early
    stopping that returns the parameters with the best validation RMSE."""
    train_samples, val_samples = dataset_splits["train"], dataset_splits["val"]
    if not train_samples or not val_samples:
        raise ValueError("train and validation splits must be nonempty")
    bases = graph_bases(graphs, net_config.cheb_degree, basis_kind)
    params = L.init_network_params(net_config, cfg.seed, cfg.reg.frozen_modes)
    state = init_train_state(params, cfg.seed)
    history = []
    snapshots = []
    best = _snapshot_optimizer(state)

    targets = stack_targets(train_samples)
    inputs = np.stack([s.input for s in train_samples])
    batch_counter = 0
    for epoch in range(cfg.max_epochs):
        order = state.rng.permutation(len(train_samples))
        for start in range(0, len(train_samples), cfg.batch_size):
            picked = order[start : start + cfg.batch_size]
            try:
                _, grads = L.batch_loss(
                    inputs[picked], targets[picked], bases, state.params, cfg.reg,
                    with_grads=True,
                )
                adam_step(state, grads, cfg)
                batch_counter += 1
                if batch_counter % cfg.cov_update_every == 0:
                    _update_covariances(state.params, cfg.reg)
            except NumericalFailure as exc:
                raise NumericalFailure(
                    f"epoch {epoch}, batch {start // cfg.batch_size}: {exc}"
                ) from exc
        train_rmse = _evaluate(train_samples, bases, state.params)
        val_rmse = _evaluate(val_samples, bases, state.params)
        history.append(HistoryRow(epoch, train_rmse, val_rmse))
        snapshots.append(
            [
                layer.covariances.copy()
                for spec, layer in zip(net_config.layer_specs, state.params.layers)
                if spec.kind == L.MRGCN
            ]
        )
        if val_rmse < state.best_val_rmse:
            state.best_val_rmse = val_rmse
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            best = _snapshot_optimizer(state)
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= cfg.patience:
                break
    _restore_optimizer(state, best)
    return TrainResult(state, history, snapshots)


# ---------------------------------------------------------------------------
# checkpointing

def _net_config_to_dict(config: L.NetworkConfig) -> dict:
    return {
        "modalities": config.modalities,
        "cheb_degree": config.cheb_degree,
        "per_vertex_bias": config.per_vertex_bias,
        "vertex_count": config.vertex_count,
        "layers": [
            {
                "kind": s.kind,
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation,
            }
            for s in config.layer_specs
        ],
    }


def net_config_from_dict(payload: dict) -> L.NetworkConfig:
    specs = tuple(
        L.LayerSpec(s["kind"], s["in_dim"], s["out_dim"], s["activation"])
        for s in payload["layers"]
    )
    return L.NetworkConfig(
        payload["modalities"],
        payload["cheb_degree"],
        specs,
        payload.get("per_vertex_bias", False),
        payload.get("vertex_count"),
    )


def _checkpoint_tensors(state: TrainState):
    tensors = []
    for (name, arr), m, v in zip(
        L.named_param_arrays(state.params), state.first_moment, state.second_moment
    ):
        tensors.append((name, arr))
        tensors.append((f"adam_m.{name}", m))
        tensors.append((f"adam_v.{name}", v))
    for idx, layer in enumerate(state.params.layers):
        if isinstance(layer, L.MrgcnLayerParams):
            for mode, sigma in enumerate(layer.covariances.sigma):
                tensors.append((f"layer{idx}.cov.{MODE_NAMES[mode]}", sigma))
    return tensors


def save_checkpoint(out_dir, state: TrainState, frozen_modes) -> None:
    """JSON manifest plus one little-endian float64 blob, canonical layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = _checkpoint_tensors(state)
    index = []
    offset = 0
    blob = bytearray()
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.extend(data)
        offset += len(data)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "net_config": _net_config_to_dict(state.params.config),
        "frozen_modes": list(frozen_modes),
        "tensor_index": index,
        "scalars": {
            "step": state.step,
            "best_val_rmse": state.best_val_rmse,
            "best_epoch": state.best_epoch,
            "epochs_since_improvement": state.epochs_since_improvement,
        },
        "rng_state": json.loads(json.dumps(state.rng.bit_generator.state)),
    }
    (out / "checkpoint.bin").write_bytes(bytes(blob))
    (out / "checkpoint.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(out_dir) -> TrainState:
    out = Path(out_dir)
    manifest = json.loads((out / "checkpoint.json").read_text())
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['version']}")
    blob = (out / "checkpoint.bin").read_bytes()
    config = net_config_from_dict(manifest["net_config"])
    params = L.init_network_params(config, seed=0, frozen_modes=manifest["frozen_modes"])
    state = init_train_state(params, seed=0)

    by_name = {}
    for entry in manifest["tensor_index"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape)
        by_name[entry["name"]] = arr.astype(float)
    for (name, arr), m, v in zip(
        L.named_param_arrays(state.params), state.first_moment, state.second_moment
    ):
        arr[...] = by_name[name]
        m[...] = by_name[f"adam_m.{name}"]
        v[...] = by_name[f"adam_v.{name}"]
    for idx, layer in enumerate(state.params.layers):
        if isinstance(layer, L.MrgcnLayerParams):
            for mode in range(4):
                if not layer.covariances.frozen[mode]:
                    layer.covariances.sigma[mode] = by_name[
                        f"layer{idx}.cov.{MODE_NAMES[mode]}"
                    ]
    scalars = manifest["scalars"]
    state.step = scalars["step"]
    state.best_val_rmse = scalars["best_val_rmse"]
    state.best_epoch = scalars["best_epoch"]
    state.epochs_since_improvement = scalars["epochs_since_improvement"]
    state.rng.bit_generator.state = manifest["rng_state"]
    return state
