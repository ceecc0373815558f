"""Exact Gaussian-process regression on space-time observations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import KernelParams, STPoint, as_array, gram, product_grid

__all__ = [
    "Observation",
    "Prediction",
    "GPModel",
    "GPNumericalError",
    "fit",
    "fit_points",
    "predict",
    "predict_arrays",
    "predict_var_grid",
    "log_marginal_likelihood",
    "robust_cholesky",
    "DEFAULT_BATCH",
]

DEFAULT_BATCH = 1024

# Relative jitter ladder (times sigma2) tried when a plain Cholesky fails.
_JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6)


class GPNumericalError(np.linalg.LinAlgError):
    """Raised when a covariance matrix cannot be factorized."""


class Observation(NamedTuple):
    point: STPoint
    value: float


class Prediction(NamedTuple):
    mean: float
    var: float


def robust_cholesky(matrix: np.ndarray, scale: float, name: str = "K(X,X) + noise*I"):
    """Lower Cholesky factor, retrying with growing diagonal jitter.

    Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added to
    the diagonal (0 when the plain factorization succeeded).
    """
    n = matrix.shape[0]
    for rel in _JITTER_LADDER:
        jitter = rel * scale
        try:
            L = np.linalg.cholesky(matrix + jitter * np.eye(n) if jitter else matrix)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jitter
    raise GPNumericalError(
        f"Cholesky factorization of {name} ({n}x{n}) failed even with "
        f"diagonal jitter {_JITTER_LADDER[-1] * scale:.3g}"
    )


@dataclass(frozen=True, eq=False)
class GPModel:
    """A fitted (immutable) GP posterior.

    ``chol`` is the lower factor of ``K(X,X) + (noise_var + jitter) I``.
    """

    train_points: np.ndarray
    train_values: np.ndarray
    params: KernelParams
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        for arr in (self.train_points, self.train_values, self.chol, self.alpha):
            arr.setflags(write=False)

    @property
    def n_train(self) -> int:
        return len(self.train_points)


def fit_points(points, values, params: KernelParams, noise_var: float) -> GPModel:
    """Fit on raw arrays: ``points`` is (n, 3), ``values`` is (n,)."""
    if noise_var < 0 or not math.isfinite(noise_var):
        raise ValueError(f"noise_var must be finite and >= 0, got {noise_var}")
    X = as_array(points).copy()
    y = np.asarray(values, dtype=float).ravel().copy()
    if len(X) != len(y):
        raise ValueError(f"{len(X)} points but {len(y)} values")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    if len(X) == 0:
        return GPModel(X, y, params, noise_var, np.zeros((0, 0)), np.zeros(0))
    K = gram(X, X, params)
    K[np.diag_indices_from(K)] += noise_var
    L, jitter = robust_cholesky(K, params.sigma2)
    alpha = cho_solve((L, True), y)
    return GPModel(X, y, params, float(noise_var), L, alpha, jitter)


def fit(observations: Sequence[Observation], params: KernelParams, noise_var: float) -> GPModel:
    """Condition the zero-mean GP prior on ``observations``."""
    if len(observations) == 0:
        return fit_points(np.zeros((0, 3)), np.zeros(0), params, noise_var)
    points = np.array([tuple(o.point) for o in observations], dtype=float)
    values = np.array([o.value for o in observations], dtype=float)
    return fit_points(points, values, params, noise_var)


def predict_arrays(model: GPModel, queries, batch: int = DEFAULT_BATCH, with_mean: bool = True):
    """Posterior mean and marginal variance at ``queries`` as numpy arrays."""
    Q = as_array(queries)
    m = len(Q)
    mean = np.zeros(m)
    var = np.full(m, model.params.sigma2)
    if model.n_train == 0 or m == 0:
        return mean, var
    for start in range(0, m, batch):
        q = Q[start:start + batch]
        Ks = gram(model.train_points, q, model.params)
        if with_mean:
            mean[start:start + batch] = Ks.T @ model.alpha
        V = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
        var[start:start + batch] -= np.einsum("ij,ij->j", V, V)
    np.maximum(var, 0.0, out=var)
    return mean, var


def predict(model: GPModel, queries) -> list[Prediction]:
    mean, var = predict_arrays(model, queries)
    return [Prediction(float(m), float(v)) for m, v in zip(mean, var)]


def predict_var_grid(model: GPModel, spatial_sites, time_indices, batch: int = DEFAULT_BATCH) -> np.ndarray:
    """Posterior variance over a product grid, in time-major grid order."""
    grid = product_grid(spatial_sites, time_indices)
    if len(grid) == 0:
        raise ValueError("empty grid")
    return predict_arrays(model, grid, batch=batch, with_mean=False)[1]


def log_marginal_likelihood(model: GPModel) -> float:
    """log p(y | X, params, noise_var) for the fitted model."""
    n = model.n_train
    if n == 0:
        return 0.0
    return float(
        -0.5 * model.train_values @ model.alpha
        - np.log(np.diag(model.chol)).sum()
        - 0.5 * n * math.log(2 * math.pi)
    )
