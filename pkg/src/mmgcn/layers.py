"""Graph-convolution layers, the assembled network, and its gradients.

Lower layers mix modalities (every modality's output sums convolutions of
every modality's input over that source's own graph); higher layers keep
intra-modality weights only, stored as one joint 4-mode tensor so the
tensor-normal prior can act on it.  A modality-wise average fuses the final
single-feature outputs into the prediction.

The backward pass is hand-written; its contract is agreement with central
finite differences, which the test suite enforces.  Forward and gradient
evaluation are pure given the parameters; only the trainer mutates them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import LaplacianBasis
from .regularization import CovarianceSet, RegularizerConfig, group_lasso, tensor_normal_loss

GGCN = "ggcn"
MRGCN = "mrgcn"

RELU = "relu"
IDENTITY = "identity"

# Smoothing floor under the square root of the prediction loss; keeps the
# batch-RMSE objective differentiable at an exact fit.
LOSS_SMOOTHING = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str = RELU

    def __post_init__(self):
        if self.kind not in (GGCN, MRGCN):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")


@dataclass(frozen=True)
class NetworkConfig:
    """Layer stack layout plus the shared modality count and polynomial degree."""

    modalities: int
    cheb_degree: int
    layer_specs: tuple
    per_vertex_bias: bool = False
    vertex_count: int | None = None

    def __post_init__(self):
        if self.modalities < 1:
            raise ValueError("at least one modality is required")
        if self.cheb_degree < 0:
            raise ValueError("polynomial degree must be >= 0")
        if not self.layer_specs:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layer_specs, self.layer_specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer output dim {prev.out_dim} does not feed input dim {nxt.in_dim}"
                )
        if self.layer_specs[-1].out_dim != 1:
            raise ValueError("final layer must output a single feature for fusion")
        if self.per_vertex_bias and not self.vertex_count:
            raise ValueError("per-vertex biases require vertex_count")


def make_layer_specs(kinds, input_dim: int, output_dims) -> tuple:
    """Chain dims through the stack; ReLU everywhere except the final layer."""
    if len(kinds) != len(output_dims):
        raise ValueError("one output dim per layer kind is required")
    specs = []
    f_in = input_dim
    for idx, (kind, f_out) in enumerate(zip(kinds, output_dims)):
        activation = IDENTITY if idx == len(kinds) - 1 else RELU
        specs.append(LayerSpec(kind, f_in, f_out, activation))
        f_in = f_out
    return tuple(specs)


@dataclass
class GgcnLayerParams:
    """Cross-modality weights (M, M, K+1, f1, f2): block (i, j) maps source
    modality i to target modality j.  Biases broadcast per feature unless the
    per-vertex flag reshapes them to (M, V, f2)."""

    weights: np.ndarray
    biases: np.ndarray


@dataclass
class MrgcnLayerParams:
    """Intra-modality weights as one joint tensor (f1, f2, K+1, M), plus the
    per-mode covariances of its tensor-normal prior."""

    weights: np.ndarray
    biases: np.ndarray
    covariances: CovarianceSet


@dataclass
class LayerGrads:
    weights: np.ndarray
    biases: np.ndarray


@dataclass
class NetworkParams:
    config: NetworkConfig
    layers: list


def init_network_params(
    config: NetworkConfig, seed: int, frozen_modes=("I", "O")
) -> NetworkParams:
    """Seeded uniform init in +-sqrt(6 / (f1 + f2)) per slice, zero biases."""
    rng = np.random.default_rng(seed)
    m = config.modalities
    kp1 = config.cheb_degree + 1
    layers = []
    for spec in config.layer_specs:
        bound = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        if config.per_vertex_bias:
            biases = np.zeros((m, config.vertex_count, spec.out_dim))
        else:
            biases = np.zeros((m, spec.out_dim))
        if spec.kind == GGCN:
            weights = rng.uniform(-bound, bound, (m, m, kp1, spec.in_dim, spec.out_dim))
            layers.append(GgcnLayerParams(weights, biases))
        else:
            weights = rng.uniform(-bound, bound, (spec.in_dim, spec.out_dim, kp1, m))
            cov = CovarianceSet.identity((spec.in_dim, spec.out_dim, kp1, m), frozen_modes)
            layers.append(MrgcnLayerParams(weights, biases, cov))
    return NetworkParams(config, layers)


def copy_network_params(params: NetworkParams) -> NetworkParams:
    layers = []
    for layer in params.layers:
        if isinstance(layer, GgcnLayerParams):
            layers.append(GgcnLayerParams(layer.weights.copy(), layer.biases.copy()))
        else:
            layers.append(
                MrgcnLayerParams(layer.weights.copy(), layer.biases.copy(), layer.covariances.copy())
            )
    return NetworkParams(params.config, layers)


def named_param_arrays(params: NetworkParams):
    """Trainable arrays in a fixed order (covariances are not trainable)."""
    out = []
    for idx, layer in enumerate(params.layers):
        out.append((f"layer{idx}.weights", layer.weights))
        out.append((f"layer{idx}.bias", layer.biases))
    return out


def pack_params(params: NetworkParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in named_param_arrays(params)])


def unpack_params(params: NetworkParams, flat: np.ndarray) -> NetworkParams:
    """New parameter structure with trainable values taken from ``flat``."""
    result = copy_network_params(params)
    offset = 0
    for _, arr in named_param_arrays(result):
        arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
        offset += arr.size
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")
    return result


def pack_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([g.weights.ravel(), g.biases.ravel()]) for g in grads])


# ---------------------------------------------------------------------------
# forward / backward cores (leading batch axis everywhere)

def _stacked_powers(basis: LaplacianBasis) -> np.ndarray:
    return np.stack(basis.powers)


def _apply_powers(powers: np.ndarray, h: np.ndarray) -> np.ndarray:
    # (K+1, V, V) applied to (B, V, f) -> (K+1, B, V, f)
    return np.matmul(powers[:, None], h[None])


def _add_bias(z: np.ndarray, biases: np.ndarray) -> np.ndarray:
    if biases.ndim == 2:  # (M, f2) broadcast across vertices
        return z + biases[:, None, None, :]
    return z + biases[:, None, :, :]  # (M, V, f2)


def _bias_grad(dz: np.ndarray, biases: np.ndarray) -> np.ndarray:
    if biases.ndim == 2:
        return dz.sum(axis=(1, 2))
    return dz.sum(axis=1)


def _activate(z: np.ndarray, activation: str):
    if activation == RELU:
        out = np.maximum(z, 0.0)
        return out, z > 0.0
    return z, None


def _ggcn_forward(h, power_stacks, layer: GgcnLayerParams, activation: str):
    m, b, v, f1 = h.shape
    kp1, f2 = layer.weights.shape[2], layer.weights.shape[4]
    p = np.stack([_apply_powers(power_stacks[i], h[i]) for i in range(m)])
    p_mat = np.ascontiguousarray(p.transpose(2, 3, 0, 1, 4)).reshape(b, v, m * kp1 * f1)
    w_mat = np.ascontiguousarray(layer.weights.transpose(0, 2, 3, 1, 4)).reshape(
        m * kp1 * f1, m * f2
    )
    z = np.ascontiguousarray((p_mat @ w_mat).reshape(b, v, m, f2).transpose(2, 0, 1, 3))
    z = _add_bias(z, layer.biases)
    out, mask = _activate(z, activation)
    return out, (p_mat, w_mat, mask, (m, b, v, f1, kp1, f2))


def _ggcn_backward(d_out, cache, power_stacks, layer: GgcnLayerParams):
    p_mat, w_mat, mask, (m, b, v, f1, kp1, f2) = cache
    dz = d_out * mask if mask is not None else d_out
    d_biases = _bias_grad(dz, layer.biases)
    dz_flat = np.ascontiguousarray(dz.transpose(1, 2, 0, 3)).reshape(b, v, m * f2)
    dw_mat = np.tensordot(p_mat, dz_flat, axes=([0, 1], [0, 1]))
    d_weights = np.ascontiguousarray(
        dw_mat.reshape(m, kp1, f1, m, f2).transpose(0, 3, 1, 2, 4)
    )
    dp = (dz_flat @ w_mat.T).reshape(b, v, m, kp1, f1).transpose(2, 3, 0, 1, 4)
    dh = np.stack(
        [
            np.matmul(power_stacks[i].transpose(0, 2, 1)[:, None], dp[i]).sum(axis=0)
            for i in range(m)
        ]
    )
    return dh, LayerGrads(d_weights, d_biases)


def _mrgcn_weight_mat(weights: np.ndarray, j: int) -> np.ndarray:
    # (f1, f2, K+1) slice for modality j, flattened to ((K+1) * f1, f2)
    f1, f2, kp1 = weights.shape[0], weights.shape[1], weights.shape[2]
    return np.ascontiguousarray(weights[:, :, :, j].transpose(2, 0, 1)).reshape(kp1 * f1, f2)


def _mrgcn_forward(h, power_stacks, layer: MrgcnLayerParams, activation: str):
    m, b, v, f1 = h.shape
    kp1, f2 = layer.weights.shape[2], layer.weights.shape[1]
    p_mats = []
    outs = []
    for j in range(m):
        pj = _apply_powers(power_stacks[j], h[j])
        pj_mat = np.ascontiguousarray(pj.transpose(1, 2, 0, 3)).reshape(b, v, kp1 * f1)
        p_mats.append(pj_mat)
        outs.append(pj_mat @ _mrgcn_weight_mat(layer.weights, j))
    z = _add_bias(np.stack(outs), layer.biases)
    out, mask = _activate(z, activation)
    return out, (p_mats, mask, (m, b, v, f1, kp1, f2))


def _mrgcn_backward(d_out, cache, power_stacks, layer: MrgcnLayerParams):
    p_mats, mask, (m, b, v, f1, kp1, f2) = cache
    dz = d_out * mask if mask is not None else d_out
    d_biases = _bias_grad(dz, layer.biases)
    d_weights = np.zeros_like(layer.weights)
    dh = np.empty((m, b, v, f1))
    for j in range(m):
        dwj = np.tensordot(p_mats[j], dz[j], axes=([0, 1], [0, 1]))
        d_weights[:, :, :, j] = dwj.reshape(kp1, f1, f2).transpose(1, 2, 0)
        dpj = (dz[j] @ _mrgcn_weight_mat(layer.weights, j).T).reshape(b, v, kp1, f1)
        dpj = dpj.transpose(2, 0, 1, 3)
        dh[j] = np.matmul(power_stacks[j].transpose(0, 2, 1)[:, None], dpj).sum(axis=0)
    return dh, LayerGrads(d_weights, d_biases)


def _forward_batch(x_batch, power_stacks, params: NetworkParams, keep_caches=False):
    """Run the stack on (B, V, T) inputs; returns (B, V) predictions."""
    m = params.config.modalities
    h = np.broadcast_to(x_batch, (m,) + x_batch.shape)
    caches = []
    hidden = []
    for spec, layer in zip(params.config.layer_specs, params.layers):
        if spec.kind == GGCN:
            h, cache = _ggcn_forward(h, power_stacks, layer, spec.activation)
        else:
            h, cache = _mrgcn_forward(h, power_stacks, layer, spec.activation)
        caches.append(cache if keep_caches else None)
        hidden.append(h)
    pred = h[:, :, :, 0].mean(axis=0)
    return pred, caches, hidden


def _backward_batch(d_pred, caches, power_stacks, params: NetworkParams):
    m = params.config.modalities
    dh = np.broadcast_to(d_pred[None, :, :, None] / m, (m,) + d_pred.shape + (1,))
    grads = [None] * len(params.layers)
    for idx in range(len(params.layers) - 1, -1, -1):
        spec, layer = params.config.layer_specs[idx], params.layers[idx]
        if spec.kind == GGCN:
            dh, grads[idx] = _ggcn_backward(dh, caches[idx], power_stacks, layer)
        else:
            dh, grads[idx] = _mrgcn_backward(dh, caches[idx], power_stacks, layer)
    return grads


def _power_stacks(bases) -> list:
    return [_stacked_powers(basis) for basis in bases]


def batch_loss(x_batch, y_batch, bases, params: NetworkParams, reg: RegularizerConfig,
               with_grads: bool):
    """Total objective on one batch: smoothed batch RMSE plus the two
    regularizers, each summed over the layers of its family.

    Returns (loss, grads or None).  Covariances are held constant, so they
    appear in the gradient only through the fixed mode-product image.
    """
    if x_batch.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    stacks = _power_stacks(bases)
    pred, caches, _ = _forward_batch(x_batch, stacks, params, keep_caches=with_grads)
    residual = pred - y_batch
    mse = float(np.mean(residual**2))
    j0 = float(np.sqrt(mse + LOSS_SMOOTHING))
    loss = j0
    grads = None
    if with_grads:
        d_pred = residual / (residual.size * j0)
        grads = _backward_batch(d_pred, caches, stacks, params)
    for spec, layer, idx in zip(params.config.layer_specs, params.layers, range(len(params.layers))):
        if spec.kind == GGCN and reg.alpha_low > 0.0:
            block_loss, block_grad = group_lasso(layer.weights, reg.alpha_intra)
            loss += reg.alpha_low * block_loss
            if with_grads:
                grads[idx].weights += reg.alpha_low * block_grad
        elif spec.kind == MRGCN and reg.alpha_high > 0.0:
            prior_loss, prior_grad = tensor_normal_loss(layer.weights, layer.covariances)
            loss += reg.alpha_high * prior_loss
            if with_grads:
                grads[idx].weights += reg.alpha_high * prior_grad
    return loss, grads


def predict_batches(samples, bases, params: NetworkParams, chunk_size: int = 256) -> np.ndarray:
    """(N, V) predictions, chunked so training-time and restored-checkpoint
    evaluation reduce in the same floating-point order."""
    stacks = _power_stacks(bases)
    preds = []
    for start in range(0, len(samples), chunk_size):
        x_batch = np.stack([s.input for s in samples[start : start + chunk_size]])
        pred, _, _ = _forward_batch(x_batch, stacks, params)
        preds.append(pred)
    return np.concatenate(preds, axis=0)


# ---------------------------------------------------------------------------
# single-sample operations

def cheb_conv(x: np.ndarray, basis: LaplacianBasis, weights: np.ndarray) -> np.ndarray:
    """Polynomial graph convolution: sum_a basis[a] @ X @ W[a]."""
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 3 or weights.shape[0] != basis.degree + 1:
        raise ValueError(
            f"weights must be a (K+1, f1, f2) stack matching degree {basis.degree}"
        )
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ValueError(f"signal shape {x.shape} does not match weight f1 {weights.shape[1]}")
    if x.shape[0] != basis.powers[0].shape[0]:
        raise ValueError("signal vertex count does not match the basis")
    out = np.zeros((x.shape[0], weights.shape[2]))
    for power, w_alpha in zip(basis.powers, weights):
        out += power @ x @ w_alpha
    return out


def _check_modalities(xs, bases, count):
    if len(xs) != count or len(bases) != count:
        raise ValueError(
            f"expected {count} modalities, got {len(xs)} inputs and {len(bases)} bases"
        )


def ggcn_forward(xs, bases, params: GgcnLayerParams, activation: str = RELU):
    """One cross-modality layer on per-modality signals.

    Modality j's output sums convolutions of every modality i's input over
    graph i, so information travels along compound connectivity.
    """
    m = params.weights.shape[0]
    _check_modalities(xs, bases, m)
    h = np.stack([np.asarray(x, dtype=float) for x in xs])[:, None]  # batch of 1
    out, _ = _ggcn_forward(h, _power_stacks(bases), params, activation)
    return [out[j, 0] for j in range(m)]


def mrgcn_forward(xs, bases, params: MrgcnLayerParams, activation: str = RELU):
    """One intra-modality layer: modality j sees only its own graph and weights."""
    m = params.weights.shape[3]
    _check_modalities(xs, bases, m)
    h = np.stack([np.asarray(x, dtype=float) for x in xs])[:, None]
    out, _ = _mrgcn_forward(h, _power_stacks(bases), params, activation)
    return [out[j, 0] for j in range(m)]


def fusion_forward(xs) -> np.ndarray:
    """Modality-wise average of (V, 1) outputs."""
    stacked = np.stack([np.asarray(x, dtype=float) for x in xs])
    if stacked.ndim != 3 or stacked.shape[2] != 1:
        raise ValueError("fusion expects single-feature (V, 1) inputs")
    return stacked.mean(axis=0)


def network_forward(x_window: np.ndarray, bases, params: NetworkParams) -> np.ndarray:
    """(V, T) input window to (V, 1) prediction; the raw window is replicated
    to every modality at the first layer."""
    x_window = np.asarray(x_window, dtype=float)
    if x_window.ndim != 2 or x_window.shape[1] != params.config.layer_specs[0].in_dim:
        raise ValueError(
            f"input shape {x_window.shape} does not match first-layer dim "
            f"{params.config.layer_specs[0].in_dim}"
        )
    pred, _, _ = _forward_batch(x_window[None], _power_stacks(bases), params)
    return pred[0][:, None]


def network_forward_hidden(x_batch: np.ndarray, bases, params: NetworkParams):
    """Predictions plus each layer's post-activation features (M, B, V, f)."""
    pred, _, hidden = _forward_batch(x_batch, _power_stacks(bases), params)
    return pred, hidden


def network_gradients(batch, bases, params: NetworkParams, reg: RegularizerConfig):
    """Gradient of the total objective for a list of (window, target) pairs,
    congruent to the trainable parameter structure."""
    if not batch:
        raise ValueError("batch must be nonempty")
    x_batch = np.stack([np.asarray(x, dtype=float) for x, _ in batch])
    y_batch = np.stack([np.asarray(y, dtype=float).reshape(-1) for _, y in batch])
    _, grads = batch_loss(x_batch, y_batch, bases, params, reg, with_grads=True)
    return grads
