"""Separable space-time covariance functions.

The spatial factor is a half-integer Matern correlation scaled by the signal
variance; the temporal factor is a unit-variance squared-exponential (RBF)
correlation. Their product is the composite kernel used everywhere else in
the package.

Grid ordering
-------------
Product grids are enumerated time-major, then row-major over (y, x)::

    for t in times:
        for y in ys:
            for x in xs:
                yield (x, y, t)

With this ordering the dense Gram matrix of the grid equals
``np.kron(temporal_factor, spatial_factor)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "STPoint",
    "KernelParams",
    "GramFactorization",
    "SUPPORTED_NU",
    "matern",
    "matern_correlation",
    "rbf",
    "st_kernel",
    "gram",
    "gram_factored",
    "grid_sites",
    "product_grid",
    "as_array",
]

SUPPORTED_NU = (0.5, 1.5, 2.5)


class STPoint(NamedTuple):
    """A space-time index."""

    x: float
    y: float
    t: float


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the composite kernel.

    ``ell_t = math.inf`` pins the temporal factor to 1, which turns the
    kernel into a purely spatial one.
    """

    nu: float = 1.5
    ell_s: float = 30.0
    ell_t: float = 20.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not any(abs(self.nu - v) < 1e-12 for v in SUPPORTED_NU):
            raise ValueError(
                f"unsupported Matern smoothness nu={self.nu}; "
                f"only closed forms for {SUPPORTED_NU} are implemented"
            )
        if not self.ell_s > 0 or not math.isfinite(self.ell_s):
            raise ValueError(f"ell_s must be finite and > 0, got {self.ell_s}")
        if not self.ell_t > 0:
            raise ValueError(f"ell_t must be > 0, got {self.ell_t}")
        if not self.sigma2 > 0 or not math.isfinite(self.sigma2):
            raise ValueError(f"sigma2 must be finite and > 0, got {self.sigma2}")

    def replace(self, **changes) -> "KernelParams":
        fields = dict(nu=self.nu, ell_s=self.ell_s, ell_t=self.ell_t, sigma2=self.sigma2)
        fields.update(changes)
        return KernelParams(**fields)


@dataclass(frozen=True)
class GramFactorization:
    """Kronecker factors of a Gram matrix on a space-time product grid."""

    spatial_factor: np.ndarray
    temporal_factor: np.ndarray

    def dense(self) -> np.ndarray:
        """Reconstruct the full Gram matrix (time-major ordering)."""
        return np.kron(self.temporal_factor, self.spatial_factor)


def as_array(points) -> np.ndarray:
    """Convert a sequence of STPoints (or an (n, 3) array) to a float (n, 3) array."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3))
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != 3:
        raise ValueError(f"expected points with 3 coordinates (x, y, t), got shape {arr.shape}")
    return arr


def matern_correlation(r, nu: float, ell: float):
    """Closed-form Matern correlation for half-integer ``nu``; ``r`` may be an array."""
    s = np.asarray(r, dtype=float) / ell
    if abs(nu - 0.5) < 1e-12:
        return np.exp(-s)
    if abs(nu - 1.5) < 1e-12:
        a = math.sqrt(3.0) * s
        return (1.0 + a) * np.exp(-a)
    if abs(nu - 2.5) < 1e-12:
        a = math.sqrt(5.0) * s
        return (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise ValueError(f"unsupported Matern smoothness nu={nu}")


def matern(p, q, params: KernelParams) -> float:
    """Spatial covariance between two points; only the (x, y) parts are used."""
    r = math.hypot(p[0] - q[0], p[1] - q[1])
    return float(params.sigma2 * matern_correlation(r, params.nu, params.ell_s))


def _rbf_correlation(dt, ell_t: float):
    dt = np.asarray(dt, dtype=float)
    if math.isinf(ell_t):
        return np.ones_like(dt)
    return np.exp(-0.5 * (dt / ell_t) ** 2)


def rbf(t1: float, t2: float, params: KernelParams) -> float:
    """Unit-variance squared-exponential correlation in time."""
    return float(_rbf_correlation(t1 - t2, params.ell_t))


def st_kernel(p, q, params: KernelParams) -> float:
    """Composite covariance ``matern(space) * rbf(time)``."""
    return matern(p, q, params) * rbf(p[2], q[2], params)


def _spatial_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dx = a[:, 0:1] - b[:, 0][None, :]
    dy = a[:, 1:2] - b[:, 1][None, :]
    return np.hypot(dx, dy)


def gram(points_a, points_b, params: KernelParams) -> np.ndarray:
    """Dense cross-covariance matrix between two point sets."""
    a = as_array(points_a)
    b = as_array(points_b)
    ks = params.sigma2 * matern_correlation(_spatial_dist(a, b), params.nu, params.ell_s)
    kt = _rbf_correlation(a[:, 2:3] - b[:, 2][None, :], params.ell_t)
    return ks * kt


def gram_factored(spatial_sites, time_indices, params: KernelParams) -> GramFactorization:
    """Kronecker factors for the product grid of ``time_indices`` x ``spatial_sites``.

    ``kron(temporal_factor, spatial_factor)`` equals ``gram(G, G)`` where ``G``
    is :func:`product_grid` of the same inputs.
    """
    sites = np.asarray(spatial_sites, dtype=float).reshape(-1, 2)
    times = np.asarray(time_indices, dtype=float).ravel()
    if len(sites) == 0 or len(times) == 0:
        raise ValueError("gram_factored needs at least one site and one time")
    ks = params.sigma2 * matern_correlation(_spatial_dist(sites, sites), params.nu, params.ell_s)
    kt = _rbf_correlation(times[:, None] - times[None, :], params.ell_t)
    return GramFactorization(spatial_factor=ks, temporal_factor=kt)


def grid_sites(xs: Sequence[float], ys: Sequence[float]) -> np.ndarray:
    """Spatial sites enumerated row-major over (y, x): y outer, x inner."""
    xx, yy = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float))
    return np.column_stack([xx.ravel(), yy.ravel()])


def product_grid(spatial_sites, time_indices: Iterable[float]) -> np.ndarray:
    """Enumerate the space-time product grid, time-major."""
    sites = np.asarray(spatial_sites, dtype=float).reshape(-1, 2)
    times = np.asarray(list(time_indices), dtype=float).ravel()
    n_s = len(sites)
    out = np.empty((len(times) * n_s, 3))
    out[:, :2] = np.tile(sites, (len(times), 1))
    out[:, 2] = np.repeat(times, n_s)
    return out
