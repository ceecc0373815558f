"""Ground-truth dynamic fields: advection-diffusion simulator, raster I/O and
the noisy point sensor.

Frames are node-based: value ``[i, j]`` sits at
``(x_min + j * (x_max - x_min) / (n_x - 1), y_min + i * (y_max - y_min) / (n_y - 1))``.
Row 0 is ``y_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .gp import Observation
from .kernels import STPoint

__all__ = [
    "FieldFrame",
    "FieldSeries",
    "SensorModel",
    "AdvectionConfig",
    "SimState",
    "StabilityError",
    "RasterFormatError",
    "RasterHeaderError",
    "RasterShapeError",
    "RasterTimeError",
    "SamplingError",
    "OutOfBoundsError",
    "MaskedCellError",
    "Standardization",
    "init_advection_field",
    "step_advection",
    "stability_bound",
    "simulate_advection",
    "load_raster_series",
    "write_raster_series",
    "sample",
    "field_values_at",
    "standardize",
]


class StabilityError(ValueError):
    pass


class RasterFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RasterHeaderError(RasterFormatError):
    pass


class RasterShapeError(RasterFormatError):
    pass


class RasterTimeError(RasterFormatError):
    pass


class SamplingError(ValueError):
    pass


class OutOfBoundsError(SamplingError):
    pass


class MaskedCellError(SamplingError):
    pass


Extent = tuple  # (x_min, x_max, y_min, y_max)


@dataclass(frozen=True, eq=False)
class FieldFrame:
    values: np.ndarray  # (n_y, n_x)
    extent: Extent
    time: float


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """Time-ordered stack of frames with constant spacing ``dt``.

    ``values`` has shape ``(n_t, n_y, n_x)``; NaN marks masked cells.
    """

    values: np.ndarray
    times: np.ndarray
    extent: Extent
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        t = np.asarray(self.times, dtype=float)
        if v.ndim != 3:
            raise ValueError(f"values must be (n_t, n_y, n_x), got shape {v.shape}")
        if len(t) != v.shape[0]:
            raise ValueError(f"{len(t)} times for {v.shape[0]} frames")
        if v.shape[0] > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ValueError("frame times must be strictly increasing")
            if not np.allclose(steps, self.dt, rtol=1e-9, atol=1e-12 * max(1.0, abs(self.dt))):
                raise ValueError("frame times must be spaced by dt")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))

    @property
    def frames(self) -> list[FieldFrame]:
        return [FieldFrame(self.values[k], self.extent, float(t)) for k, t in enumerate(self.times)]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def frame_index(self, t: float) -> int:
        """Index of the frame nearest in time to ``t``."""
        t0, t1 = self.times[0], self.times[-1]
        tol = 0.5 * self.dt + 1e-9
        if t < t0 - tol or t > t1 + tol:
            raise OutOfBoundsError(f"time {t} outside series range [{t0}, {t1}]")
        if len(self.times) == 1:
            return 0
        return int(np.clip(np.rint((t - t0) / self.dt), 0, len(self.times) - 1))


@dataclass(frozen=True)
class SensorModel:
    noise_var: float = 0.0

    def __post_init__(self):
        if not self.noise_var >= 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")


# --------------------------------------------------------------------------
# advection-diffusion simulator


@dataclass(frozen=True)
class AdvectionConfig:
    """Physical constants of the synthetic scenario.

    Units are map units and time units; ``extent`` is the side length of the
    square domain. The defaults move each parcel roughly 40% of the domain
    within 100 time units.
    """

    grid_size: int = 100
    extent: float = 500.0
    diffusivity: float = 4.0
    viscosity: float = 2.0
    speed: float = 2.0
    amplitude: float = 1.0
    blob_sigma: float = 45.0
    parcel_sigma: float = 110.0
    corner_offset: float = 0.2
    heading_deg: float = 20.0
    position_jitter: float = 0.03
    heading_jitter_deg: float = 15.0
    safety: float = 0.4


@dataclass
class SimState:
    """Mutable simulator state; ``c`` is the scalar, ``u``/``v`` the x/y velocity."""

    c: np.ndarray
    u: np.ndarray
    v: np.ndarray
    t: float
    dx: float
    config: AdvectionConfig
    initial_mass: float = 0.0
    extent: Extent = field(default=(0.0, 500.0, 0.0, 500.0))

    @property
    def mass(self) -> float:
        return float(self.c.sum() * self.dx * self.dx)

    def frame(self) -> FieldFrame:
        return FieldFrame(self.c.copy(), self.extent, self.t)


def _gauss2d(xx, yy, cx, cy, sigma):
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma * sigma))


def init_advection_field(grid_size: int, rng: np.random.Generator,
                         config: AdvectionConfig | None = None) -> SimState:
    """Two Gaussian parcels in opposite corners moving with opposite velocities."""
    if grid_size < 16:
        raise ValueError(f"grid_size must be >= 16, got {grid_size}")
    cfg = replace(config or AdvectionConfig(), grid_size=grid_size)
    L = cfg.extent
    n = grid_size
    dx = L / (n - 1)
    xs = np.linspace(0.0, L, n)
    xx, yy = np.meshgrid(xs, xs)

    jit = rng.normal(0.0, cfg.position_jitter * L, size=4)
    turn = np.deg2rad(rng.normal(0.0, cfg.heading_jitter_deg))
    a = (cfg.corner_offset * L + jit[0], cfg.corner_offset * L + jit[1])
    b = ((1 - cfg.corner_offset) * L + jit[2], (1 - cfg.corner_offset) * L + jit[3])
    heading = np.deg2rad(cfg.heading_deg) + turn
    dir_x, dir_y = math.cos(heading), math.sin(heading)

    c = cfg.amplitude * (_gauss2d(xx, yy, *a, cfg.blob_sigma) + _gauss2d(xx, yy, *b, cfg.blob_sigma))
    wa = _gauss2d(xx, yy, *a, cfg.parcel_sigma)
    wb = _gauss2d(xx, yy, *b, cfg.parcel_sigma)
    # parcel B moves with the negated velocity of parcel A
    u = cfg.speed * dir_x * (wa - wb)
    v = cfg.speed * dir_y * (wa - wb)
    state = SimState(c=c, u=u, v=v, t=0.0, dx=dx, config=cfg, extent=(0.0, L, 0.0, L))
    state.initial_mass = state.mass
    return state


def stability_bound(state: SimState) -> float:
    """Largest explicit step: ``min(dx^2 / (4 D), dx / |v|_max)``."""
    cfg = state.config
    d = max(cfg.diffusivity, cfg.viscosity)
    vmax = float(np.sqrt(state.u ** 2 + state.v ** 2).max()) if state.u.size else 0.0
    bound = math.inf
    if d > 0:
        bound = min(bound, state.dx ** 2 / (4 * d))
    if vmax > 0:
        bound = min(bound, state.dx / vmax)
    return bound


def _laplacian(f: np.ndarray, dx: float) -> np.ndarray:
    # zero-gradient boundaries through edge padding
    g = np.pad(f, 1, mode="edge")
    return (g[1:-1, 2:] + g[1:-1, :-2] + g[2:, 1:-1] + g[:-2, 1:-1] - 4 * f) / (dx * dx)


def _upwind_divergence(c: np.ndarray, u: np.ndarray, v: np.ndarray, dx: float) -> np.ndarray:
    """div(c * vel) with first-order upwind face fluxes and zero boundary flux."""
    uf = 0.5 * (u[:, 1:] + u[:, :-1])
    fx = np.where(uf > 0, uf * c[:, :-1], uf * c[:, 1:])
    vf = 0.5 * (v[1:, :] + v[:-1, :])
    fy = np.where(vf > 0, vf * c[:-1, :], vf * c[1:, :])
    div = np.zeros_like(c)
    div[:, :-1] += fx
    div[:, 1:] -= fx
    div[:-1, :] += fy
    div[1:, :] -= fy
    return div / dx


def step_advection(state: SimState, dt: float) -> SimState:
    """One explicit forward-difference update (scalar) plus semi-Lagrangian
    self-advection and viscous diffusion of the velocity field."""
    bound = stability_bound(state)
    if dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt} violates the stability bound {bound:.6g}")
    cfg = state.config
    dx = state.dx
    c = state.c
    if np.any(state.u) or np.any(state.v):
        c = c - dt * _upwind_divergence(c, state.u, state.v, dx)
    if cfg.diffusivity > 0:
        c = c + dt * cfg.diffusivity * _laplacian(state.c, dx)

    u, v = state.u, state.v
    if np.any(u) or np.any(v):
        ny, nx = u.shape
        ii, jj = np.meshgrid(np.arange(ny, dtype=float), np.arange(nx, dtype=float), indexing="ij")
        coords = np.array([ii - v * dt / dx, jj - u * dt / dx])
        u = map_coordinates(u, coords, order=1, mode="nearest")
        v = map_coordinates(v, coords, order=1, mode="nearest")
        if cfg.viscosity > 0:
            u = u + dt * cfg.viscosity * _laplacian(u, dx)
            v = v + dt * cfg.viscosity * _laplacian(v, dx)
    return replace(state, c=c, u=u, v=v, t=state.t + dt)


def simulate_advection(t_max: float, frame_dt: float, rng: np.random.Generator,
                       config: AdvectionConfig | None = None) -> FieldSeries:
    """Run the simulator and record frames at ``0, frame_dt, ..., t_max``."""
    cfg = config or AdvectionConfig()
    state = init_advection_field(cfg.grid_size, rng, cfg)
    n_frames = int(round(t_max / frame_dt)) + 1
    frames = [state.c.copy()]
    for _ in range(1, n_frames):
        remaining = frame_dt
        while remaining > 1e-12:
            dt = min(remaining, cfg.safety * stability_bound(state))
            state = step_advection(state, dt)
            remaining -= dt
        frames.append(state.c.copy())
    times = np.arange(n_frames) * frame_dt
    return FieldSeries(np.stack(frames), times, state.extent, frame_dt)


# --------------------------------------------------------------------------
# raster text format


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_raster_series(series: FieldSeries, path) -> None:
    n_t, n_y, n_x = series.shape
    x0, x1, y0, y1 = series.extent
    lines = [f"stfield v1 {n_t} {n_y} {n_x} {_fmt(series.dt)} {_fmt(x0)} {_fmt(x1)} {_fmt(y0)} {_fmt(y1)}"]
    for k in range(n_t):
        lines.append(f"frame {_fmt(series.times[k])}")
        for row in series.values[k]:
            lines.append(" ".join(_fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _split(line: str) -> list[str]:
    return line.replace(",", " ").split()


def load_raster_series(path) -> FieldSeries:
    """Parse the ``stfield v1`` text format; NaN cells are carried as masked."""
    text = Path(path).read_text().splitlines()
    lines = [(i + 1, ln) for i, ln in enumerate(text) if ln.strip()]
    if not lines:
        raise RasterHeaderError("empty file", 1)
    lineno, header = lines[0]
    tok = header.split()
    if len(tok) != 10 or tok[0] != "stfield" or tok[1] != "v1":
        raise RasterHeaderError(
            "expected 'stfield v1 <n_frames> <n_y> <n_x> <dt> <x_min> <x_max> <y_min> <y_max>'", lineno)
    try:
        n_t, n_y, n_x = (int(x) for x in tok[2:5])
        dt, x0, x1, y0, y1 = (float(x) for x in tok[5:])
    except ValueError:
        raise RasterHeaderError("non-numeric header field", lineno) from None
    if n_t < 1 or n_y < 2 or n_x < 2 or not dt > 0 or not (x1 > x0 and y1 > y0):
        raise RasterHeaderError("invalid dimensions, dt or extent", lineno)

    values = np.empty((n_t, n_y, n_x))
    times = np.empty(n_t)
    pos = 1
    for k in range(n_t):
        if pos >= len(lines):
            raise RasterShapeError(f"missing frame {k}", lines[-1][0] + 1)
        lineno, ln = lines[pos]
        tok = ln.split()
        if len(tok) != 2 or tok[0] != "frame":
            raise RasterShapeError(f"expected 'frame <t>' for frame {k}", lineno)
        try:
            times[k] = float(tok[1])
        except ValueError:
            raise RasterTimeError("non-numeric frame time", lineno) from None
        if k > 0:
            step = times[k] - times[k - 1]
            if not step > 0:
                raise RasterTimeError("frame times must be strictly increasing", lineno)
            if not math.isclose(step, dt, rel_tol=1e-9, abs_tol=1e-12):
                raise RasterTimeError(f"frame spacing {step} differs from header dt {dt}", lineno)
        pos += 1
        for i in range(n_y):
            if pos >= len(lines):
                raise RasterShapeError(f"frame {k} has {i} rows, expected {n_y}", lines[-1][0] + 1)
            lineno, ln = lines[pos]
            cells = _split(ln)
            if cells and cells[0] == "frame":
                raise RasterShapeError(f"frame {k} has {i} rows, expected {n_y}", lineno)
            if len(cells) != n_x:
                raise RasterShapeError(f"row has {len(cells)} values, expected {n_x}", lineno)
            try:
                values[k, i] = [float(c) for c in cells]
            except ValueError:
                raise RasterShapeError("non-numeric cell value", lineno) from None
            pos += 1
    if pos < len(lines):
        raise RasterShapeError("trailing content after last frame", lines[pos][0])
    if np.isinf(values).any():
        raise RasterShapeError("infinite cell value", 1)
    return FieldSeries(values, times, (x0, x1, y0, y1), dt)


# --------------------------------------------------------------------------
# sampling


def _bilinear(values2d: np.ndarray, extent: Extent, x: np.ndarray, y: np.ndarray, strict: bool):
    x0, x1, y0, y1 = extent
    n_y, n_x = values2d.shape
    fx = (x - x0) / (x1 - x0) * (n_x - 1)
    fy = (y - y0) / (y1 - y0) * (n_y - 1)
    eps = 1e-9
    bad = (fx < -eps) | (fx > n_x - 1 + eps) | (fy < -eps) | (fy > n_y - 1 + eps)
    if strict and np.any(bad):
        raise OutOfBoundsError(f"point outside spatial extent {extent}")
    fx = np.clip(fx, 0, n_x - 1)
    fy = np.clip(fy, 0, n_y - 1)
    j0 = np.minimum(np.floor(fx).astype(int), n_x - 2)
    i0 = np.minimum(np.floor(fy).astype(int), n_y - 2)
    wx = fx - j0
    wy = fy - i0
    corners = [
        ((1 - wy) * (1 - wx), values2d[i0, j0]),
        ((1 - wy) * wx, values2d[i0, j0 + 1]),
        (wy * (1 - wx), values2d[i0 + 1, j0]),
        (wy * wx, values2d[i0 + 1, j0 + 1]),
    ]
    out = np.zeros_like(fx, dtype=float)
    masked = np.zeros(fx.shape, dtype=bool)
    for w, val in corners:
        nan = np.isnan(val)
        masked |= nan & (w > 0)
        out += np.where(nan, 0.0, w * np.nan_to_num(val))
    out[masked] = np.nan
    out[bad] = np.nan
    return out


def field_values_at(series: FieldSeries, points) -> np.ndarray:
    """Noise-free field values at (x, y, t) points; NaN where masked or outside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    idx = np.array([series.frame_index(t) for t in pts[:, 2]], dtype=int)
    for k in np.unique(idx):
        sel = idx == k
        out[sel] = _bilinear(series.values[k], series.extent, pts[sel, 0], pts[sel, 1], strict=False)
    return out


def sample(source, p, sensor: SensorModel, rng: np.random.Generator) -> Observation:
    """One noisy point reading: bilinear in space within the nearest-time frame."""
    p = STPoint(*(float(c) for c in p))
    if not all(math.isfinite(c) for c in p):
        raise OutOfBoundsError(f"non-finite sample point {p}")
    if isinstance(source, SimState):
        source = source.frame()
    if isinstance(source, FieldFrame):
        values2d, extent = source.values, source.extent
    else:
        values2d, extent = source.values[source.frame_index(p.t)], source.extent
    val = float(_bilinear(values2d, extent, np.array([p.x]), np.array([p.y]), strict=True)[0])
    if math.isnan(val):
        raise MaskedCellError(f"sample at ({p.x}, {p.y}, {p.t}) touches a masked cell")
    if sensor.noise_var > 0:
        val += float(rng.normal(0.0, math.sqrt(sensor.noise_var)))
    return Observation(p, val)


# --------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class Standardization:
    mean: float
    std: float

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def invert(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean


def standardize(series: FieldSeries) -> tuple[FieldSeries, Standardization]:
    """Zero mean / unit variance over all unmasked cells of the series."""
    mean = float(np.nanmean(series.values))
    std = float(np.nanstd(series.values))
    if not std > 0:
        std = 1.0
    tr = Standardization(mean, std)
    return FieldSeries(tr.apply(series.values), series.times, series.extent, series.dt), tr
