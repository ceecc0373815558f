"""Entropy and mutual-information utilities for GP map states.

A :class:`MapState` caches the whitened cross-covariance
``V = L^{-1} K(X, Q)`` between its training set ``X`` and the query grid
``Q``. Adding one hypothetical observation extends the Cholesky factor by
one row and ``V`` by one row, so evaluating a proposal costs O(m (n + 1))
instead of a full refit. The extension is exact; it is the same posterior
a fresh fit on ``X + [z]`` would produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .gp import DEFAULT_BATCH, robust_cholesky
from .kernels import KernelParams, as_array, gram

__all__ = [
    "MapState",
    "differential_entropy",
    "info_gain_marginal",
    "info_gain_exact",
    "information_gpvr_st",
    "evaluate_proposal",
    "VAR_FLOOR_REL",
]

# Marginal variances are floored at this fraction of sigma2 to keep logs finite.
VAR_FLOOR_REL = 1e-12
_DELTA_FLOOR_REL = 1e-8


@dataclass(frozen=True, eq=False)
class MapState:
    """Posterior marginal variances on a query grid, given a training set.

    Build with :meth:`build`; derive hypothetical states with :meth:`extended`.
    Instances are never mutated, so one state can back many sibling proposals.
    """

    train_points: np.ndarray
    query_points: np.ndarray
    var: np.ndarray
    params: KernelParams
    noise_var: float
    _chol: np.ndarray = field(repr=False)
    _blocks: tuple = field(repr=False)

    @classmethod
    def build(cls, train_points, query_points, params: KernelParams, noise_var: float,
              batch: int = DEFAULT_BATCH) -> "MapState":
        X = as_array(train_points).copy()
        Q = as_array(query_points).copy()
        if len(Q) == 0:
            raise ValueError("MapState needs a nonempty query set")
        if noise_var < 0:
            raise ValueError(f"noise_var must be >= 0, got {noise_var}")
        n, m = len(X), len(Q)
        var = np.full(m, params.sigma2)
        if n == 0:
            return cls(X, Q, var, params, float(noise_var), np.zeros((0, 0)), ())
        K = gram(X, X, params)
        K[np.diag_indices_from(K)] += noise_var
        L, _ = robust_cholesky(K, params.sigma2, name="K(train, train) + noise*I")
        V = np.empty((n, m))
        for start in range(0, m, batch):
            V[:, start:start + batch] = solve_triangular(
                L, gram(X, Q[start:start + batch], params), lower=True, check_finite=False
            )
        var -= np.einsum("ij,ij->j", V, V)
        np.maximum(var, VAR_FLOOR_REL * params.sigma2, out=var)
        return cls(X, Q, var, params, float(noise_var), L, (V,))

    @property
    def n_train(self) -> int:
        return len(self.train_points)

    def _vt_dot(self, coeffs: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.query_points))
        start = 0
        for block in self._blocks:
            k = block.shape[0]
            out += coeffs[start:start + k] @ block
            start += k
        return out

    def extended(self, point) -> "MapState":
        """State after adding one (hypothetical) observation at ``point``."""
        z = as_array(point).reshape(1, 3)
        p = self.params
        n = self.n_train
        kzz = p.sigma2 + self.noise_var
        kzq = gram(z, self.query_points, p)[0]
        if n:
            kxz = gram(self.train_points, z, p)[:, 0]
            l = solve_triangular(self._chol, kxz, lower=True, check_finite=False)
            d2 = kzz - l @ l
            num = kzq - self._vt_dot(l)
        else:
            l = np.zeros(0)
            d2 = kzz
            num = kzq
        d2 = max(d2, _DELTA_FLOOR_REL * p.sigma2)
        delta = math.sqrt(d2)
        row = num / delta
        chol = np.zeros((n + 1, n + 1))
        chol[:n, :n] = self._chol
        chol[n, :n] = l
        chol[n, n] = delta
        var = self.var - row * row
        np.maximum(var, VAR_FLOOR_REL * p.sigma2, out=var)
        return MapState(
            np.vstack([self.train_points, z]),
            self.query_points,
            var,
            p,
            self.noise_var,
            chol,
            self._blocks + (row[None, :],),
        )

    def extended_many(self, points) -> "MapState":
        state = self
        for pt in as_array(points):
            state = state.extended(pt)
        return state

    def with_params(self, params: KernelParams) -> "MapState":
        return MapState.build(self.train_points, self.query_points, params, self.noise_var)


def differential_entropy(variances) -> float:
    """Sum of Gaussian marginal entropies, in nats."""
    v = np.asarray(variances, dtype=float).ravel()
    if np.any(~(v > 0)):
        raise ValueError("differential entropy needs strictly positive variances")
    return float(0.5 * np.log(2 * math.pi * math.e * v).sum())


def info_gain_marginal(prior_var, post_var) -> float:
    """Marginal-variance approximation of mutual information, in nats.

    Sum over points of ``0.5 * (log prior_var[i] - log post_var[i])``.
    """
    a = np.asarray(prior_var, dtype=float).ravel()
    b = np.asarray(post_var, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} prior vs {b.shape[0]} posterior variances")
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise ValueError("variances must be strictly positive")
    return float(0.5 * (np.log(a) - np.log(b)).sum())


def _logdet_pd(matrix: np.ndarray, name: str) -> float:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-10 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} is not symmetric")
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc
    return float(2.0 * np.log(np.diag(L)).sum())


def info_gain_exact(prior_cov, post_cov) -> float:
    """Full-covariance mutual information ``0.5 * (logdet prior - logdet post)``."""
    prior_cov = np.asarray(prior_cov, dtype=float)
    post_cov = np.asarray(post_cov, dtype=float)
    if prior_cov.shape != post_cov.shape:
        raise ValueError(f"shape mismatch {prior_cov.shape} vs {post_cov.shape}")
    return 0.5 * (_logdet_pd(prior_cov, "prior_cov") - _logdet_pd(post_cov, "post_cov"))


def evaluate_proposal(proposed, state: MapState, near_info: float | None = None):
    """Like :func:`information_gpvr_st` but also returns the extended state."""
    p = as_array(proposed)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"proposed point must be finite, got {proposed}")
    info = 0.0 if near_info is None else float(near_info)
    child = state.extended(p)
    info += 0.5 * float((np.log(state.var) - np.log(child.var)).sum())
    return info, child


def information_gpvr_st(proposed, state: MapState, near_info: float | None = None):
    """Information of a proposed space-time measurement against a map state.

    The accumulator starts at ``near_info`` (the information already held by
    the node being extended) or at zero. The proposal is appended to the
    state's training set, marginal variances at every query point are
    recomputed exactly, and the per-point log-variance reductions are added.

    Returns
    -------
    info : float
        Accumulated information in nats.
    updated_var : ndarray
        Posterior marginal variances at ``state.query_points``.
    """
    info, child = evaluate_proposal(proposed, state, near_info)
    return info, child.var
