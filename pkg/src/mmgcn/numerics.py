"""Tensor-mode algebra and small linear-algebra primitives.

4-mode weight tensors are plain ``numpy`` arrays with the canonical mode order
(input, output, polynomial-degree, modality) and C (row-major) memory layout,
so ``arr.reshape(-1)`` is the canonical vectorization: the last mode varies
fastest.  Every Kronecker-product identity in this package is pinned to that
convention.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

MODE_NAMES = ("I", "O", "C", "M")


class NumericalFailure(RuntimeError):
    """A linear-algebra operation left the numerically trustworthy regime."""


def mode_unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Unfold a 4-mode tensor into a ``d_mode x prod(other dims)`` matrix.

    Columns are ordered by the canonical layout restricted to the remaining
    modes, which makes ``unfold(t, i) @ kron(others)`` line up with successive
    mode products.
    """
    if not 0 <= mode < tensor.ndim:
        raise ValueError(f"mode {mode} out of range for {tensor.ndim}-mode tensor")
    return np.ascontiguousarray(np.moveaxis(tensor, mode, 0)).reshape(tensor.shape[mode], -1)


def mode_refold(matrix: np.ndarray, dims: Sequence[int], mode: int) -> np.ndarray:
    """Exact inverse of :func:`mode_unfold` for the given full ``dims``."""
    dims = tuple(dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for dims {dims}")
    rest = dims[:mode] + dims[mode + 1 :]
    return np.moveaxis(matrix.reshape((dims[mode],) + rest), 0, mode)


def mode_product(tensor: np.ndarray, matrix: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``tensor`` along ``mode`` by ``matrix`` (shape ``d_mode x d_mode``)."""
    if matrix.shape[1] != tensor.shape[mode]:
        raise ValueError(
            f"matrix of shape {matrix.shape} cannot act on mode {mode} "
            f"of tensor with dims {tensor.shape}"
        )
    return np.moveaxis(np.tensordot(matrix, tensor, axes=(1, mode)), 0, mode)


def all_mode_quadratic(tensor: np.ndarray, inverses: Sequence[np.ndarray]) -> float:
    """Quadratic form ``vec(W)^T (kron of per-mode inverses) vec(W)``.

    Applied as successive mode products, so the Kronecker product is never
    materialized; cost is O(sum_k d_k * prod(dims)) instead of O(prod(dims)^2).
    """
    if len(inverses) != tensor.ndim:
        raise ValueError(f"expected {tensor.ndim} inverses, got {len(inverses)}")
    image = tensor
    for mode, inv in enumerate(inverses):
        image = mode_product(image, inv, mode)
    return float(np.vdot(tensor, image).real)


def spd_inverse(matrix: np.ndarray, cond_limit: float = 1e12) -> np.ndarray:
    """Invert a symmetric positive definite matrix.

    The condition is estimated on the input itself, so a singular matrix
    fails even though the factorization gets one jitter retry (``+1e-10 I``)
    against rounding-induced Cholesky breakdowns.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    sym = (matrix + matrix.T) / 2.0
    eigs = np.linalg.eigvalsh(sym)
    if eigs[0] <= 0.0 or eigs[-1] / eigs[0] > cond_limit:
        raise NumericalFailure(
            f"matrix of size {n} is not numerically SPD "
            f"(eigenvalue range [{eigs[0]:.3g}, {eigs[-1]:.3g}], limit {cond_limit:g})"
        )
    chol = None
    for jitter in (0.0, 1e-10):
        try:
            chol = np.linalg.cholesky(sym + jitter * np.eye(n) if jitter else sym)
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise NumericalFailure(f"Cholesky factorization failed for matrix of size {n}")
    lower = np.linalg.solve(chol, np.eye(n))
    inverse = np.linalg.solve(chol.T, lower)
    return (inverse + inverse.T) / 2.0


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def numerical_rank(matrix: np.ndarray, tol: float = 1e-8) -> int:
    """Rank as the number of singular values above ``tol``."""
    return int(np.sum(np.linalg.svd(matrix, compute_uv=False) > tol))
