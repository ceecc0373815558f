"""Experiment orchestration: configuration, seeded episodes, map evaluation,
suite sweeps with coverage-budget coupling, and plot-data export."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import gp
from .coverage import circular_coverage, lemniscate_coverage
from .envsim import (
    AdvectionConfig,
    FieldSeries,
    SensorModel,
    field_values_at,
    load_raster_series,
    simulate_advection,
    standardize,
)
from .executor import (
    Environment,
    MissionConfig,
    MissionResult,
    format_mission_log,
    run_coverage_mission,
    run_mission,
)
from .kernels import KernelParams, STPoint, grid_sites, product_grid
from .planner import PlannerConfig

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "EpisodeResult",
    "PLANNERS",
    "load_config",
    "build_series",
    "inducing_grid",
    "evaluate_map",
    "run_episode",
    "run_suite",
    "export_plot_data",
    "pilot_survey",
    "fit_kernel_params",
    "write_results",
    "summarize",
]

PLANNERS = ("iig_st", "iig", "coverage_circle", "coverage_lemniscate")
INFORMED = ("iig_st", "iig")
PLOT_KINDS = ("error_vs_time", "variance_vs_time", "trajectory")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "advection"
    planners: tuple = ("iig_st", "iig", "coverage_circle")
    ell_s: tuple = (30.0,)
    ell_t: tuple = (20.0,)
    nu: float = 1.5
    sigma2: float = 1.0
    noise_var: float = 0.01
    # mission / planner
    t_max: float = 100.0
    sample_period: float = 5.0
    replan_interval: float = 10.0
    max_step: float = 100.0
    var_threshold: float = 0.15
    ric_window: int = 10
    ric_threshold: float = 1e-2
    node_budget: int = 100
    near_radius: float = 100.0
    max_near: int = 6
    lambda_len: float = 0.1
    lambda_sim: float = 0.3
    distance_budget: float | None = None
    start: tuple | None = None
    # coverage baseline (used when no informed runs are available to couple to)
    coverage_budget: float = 1610.0
    coverage_waypoints: int | None = None
    # environment
    grid_size: int = 100
    frame_dt: float = 1.0
    raster_path: str | None = None
    advection: dict = field(default_factory=dict)
    # inducing grid
    n_sites: int = 25
    n_times: int = 20
    # replication
    n_seeds: int = 10
    seed: int = 0
    workers: int = 1
    output_dir: str = "results"
    save_artifacts: bool = True

    def __post_init__(self):
        if self.scenario not in ("advection", "raster"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for p in self.planners:
            if p not in PLANNERS:
                raise ValueError(f"unknown planner {p!r}; choose from {PLANNERS}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.n_sites < 1 or self.n_times < 1:
            raise ValueError("inducing grid must be nonempty")
        if self.scenario == "raster" and not self.raster_path:
            raise ValueError("raster scenario needs raster_path")

    @classmethod
    def full_scale(cls, **overrides) -> "ExperimentConfig":
        base = dict(grid_size=500, n_times=50, n_seeds=20)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def kernel(self, ell_s: float, ell_t: float) -> KernelParams:
        return KernelParams(nu=self.nu, ell_s=ell_s, ell_t=ell_t, sigma2=self.sigma2)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


_TUPLE_FIELDS = {"planners", "ell_s", "ell_t", "start"}


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    clean = {}
    for k, v in data.items():
        if k in _TUPLE_FIELDS and v is not None:
            v = tuple(v) if isinstance(v, (list, tuple)) else (v,)
            if k in ("ell_s", "ell_t"):
                v = tuple(float(x) for x in v)
        clean[k] = v
    return ExperimentConfig(**clean)


def load_config(path) -> ExperimentConfig:
    """Read a JSON or YAML config file."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return config_from_dict(data)


@dataclass
class EpisodeResult:
    planner: str
    ell_s: float
    ell_t: float
    seed: int
    rmse_at_tmax: float = math.nan
    rmse_all_t: float = math.nan
    mean_posterior_var_at_tmax: float = math.nan
    mean_posterior_var_all_t: float = math.nan
    path_length: float = math.nan
    n_observations: int = 0
    status: str = "ok"
    error: str = ""
    inducing_times: np.ndarray | None = field(default=None, repr=False)
    rmse_t: np.ndarray | None = field(default=None, repr=False)
    var_t: np.ndarray | None = field(default=None, repr=False)
    observations: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


RESULT_COLUMNS = (
    "planner", "ell_s", "ell_t", "seed", "rmse_at_tmax", "rmse_all_t",
    "mean_posterior_var_at_tmax", "mean_posterior_var_all_t", "path_length",
    "n_observations", "status", "error",
)


# --------------------------------------------------------------------------
# environment and grids


def _episode_seed(base: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base, index, stream]))


@lru_cache(maxsize=64)
def _advection_series(grid_size: int, t_max: float, frame_dt: float, seed: int, index: int,
                      advection_items: tuple) -> FieldSeries:
    cfg = AdvectionConfig(grid_size=grid_size, **dict(advection_items))
    series = simulate_advection(t_max, frame_dt, _episode_seed(seed, index, 0), cfg)
    return standardize(series)[0]


@lru_cache(maxsize=8)
def _raster_series(path: str) -> FieldSeries:
    series = load_raster_series(path)
    series = FieldSeries(series.values, series.times - series.times[0], series.extent, series.dt)
    return standardize(series)[0]


def build_series(config: ExperimentConfig, seed_index: int) -> FieldSeries:
    """Standardized ground truth for one episode (shared by all planners)."""
    if config.scenario == "raster":
        return _raster_series(str(config.raster_path))
    return _advection_series(config.grid_size, float(config.t_max), float(config.frame_dt),
                             config.seed, seed_index, tuple(sorted(config.advection.items())))


def inducing_grid(config: ExperimentConfig, extent) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred spatial sites (n_sites per axis) and evenly spaced times over [0, t_max]."""
    x0, x1, y0, y1 = extent
    xs = x0 + (np.arange(config.n_sites) + 0.5) * (x1 - x0) / config.n_sites
    ys = y0 + (np.arange(config.n_sites) + 0.5) * (y1 - y0) / config.n_sites
    times = np.linspace(0.0, config.t_max, config.n_times) if config.n_times > 1 else np.array([config.t_max])
    return grid_sites(xs, ys), times


def mission_config(config: ExperimentConfig, extent) -> MissionConfig:
    x0, x1, y0, y1 = extent
    start = config.start if config.start is not None else (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    pcfg = PlannerConfig(
        max_step=config.max_step,
        step_period=config.sample_period,
        var_threshold=config.var_threshold,
        ric_window=config.ric_window,
        ric_threshold=config.ric_threshold,
        node_budget=config.node_budget,
        near_radius=config.near_radius,
        bounds=(x0, x1, y0, y1),
        max_near=config.max_near,
    )
    return MissionConfig(
        t_max=config.t_max,
        sample_period=config.sample_period,
        replan_interval=config.replan_interval,
        distance_budget=config.distance_budget,
        start=tuple(start),
        lambda_len=config.lambda_len,
        lambda_sim=config.lambda_sim,
        planner=pcfg,
    )


# --------------------------------------------------------------------------
# evaluation


def evaluate_map(observations, config: ExperimentConfig, series: FieldSeries,
                 params: KernelParams) -> dict:
    """Fit one GP on all mission observations and score it on the inducing grid.

    The same spatiotemporal kernel is used whatever planner produced the
    observations. RMSE is computed per inducing time over unmasked sites.
    """
    if not observations:
        raise ValueError("evaluate_map needs at least one observation")
    sites, times = inducing_grid(config, series.extent)
    Q = product_grid(sites, times)
    model = gp.fit(observations, params, config.noise_var)
    mean, var = gp.predict_arrays(model, Q)
    truth = field_values_at(series, Q)
    n_s = len(sites)
    err = (mean - truth).reshape(len(times), n_s)
    var = var.reshape(len(times), n_s)
    valid = ~np.isnan(err)
    rmse_t = np.array([math.sqrt(np.mean(e[v] ** 2)) if v.any() else math.nan for e, v in zip(err, valid)])
    var_t = var.mean(axis=1)
    return dict(
        rmse_at_tmax=float(rmse_t[-1]),
        rmse_all_t=float(np.nanmean(rmse_t)),
        mean_posterior_var_at_tmax=float(var_t[-1]),
        mean_posterior_var_all_t=float(var_t.mean()),
        inducing_times=times,
        rmse_t=rmse_t,
        var_t=var_t,
    )


def coverage_default(config: ExperimentConfig) -> tuple[float, int]:
    n = config.coverage_waypoints or int(round(config.t_max / config.sample_period)) + 1
    return config.coverage_budget, n


def run_episode(config: ExperimentConfig, planner: str, ell_s: float, ell_t: float,
                seed_index: int, coverage_budget: tuple[float, int] | None = None,
                artifacts_dir: Path | None = None) -> EpisodeResult:
    """One mission plus final-map evaluation. Failures are captured on the row."""
    res = EpisodeResult(planner, ell_s, ell_t, seed_index)
    try:
        series = build_series(config, seed_index)
        env = Environment(series, SensorModel(config.noise_var))
        eval_params = config.kernel(ell_s, ell_t)
        mcfg = mission_config(config, series.extent)
        sites, times = inducing_grid(config, series.extent)
        rng = _episode_seed(config.seed, seed_index, 1)
        if planner in INFORMED:
            plan_params = eval_params if planner == "iig_st" else eval_params.replace(ell_t=math.inf)
            mission = run_mission(env, mcfg, rng, plan_params, config.noise_var,
                                  product_grid(sites, times), keep_trees=artifacts_dir is not None)
        else:
            budget, n_wp = coverage_budget or coverage_default(config)
            bounds = mcfg.planner.bounds
            maker = circular_coverage if planner == "coverage_circle" else lemniscate_coverage
            plan = maker(bounds, budget, n_wp, max_step=config.max_step)
            mission = run_coverage_mission(env, plan, mcfg, rng)
        obs = mission.state.observations
        res.observations = list(obs)
        res.n_observations = len(obs)
        res.path_length = mission.state.distance_traveled
        if mission.aborted:
            res.status, res.error = "aborted", mission.error
        if obs:
            for k, v in evaluate_map(obs, config, series, eval_params).items():
                setattr(res, k, v)
        elif not mission.aborted:
            res.status, res.error = "failed", "no observations"
        if artifacts_dir is not None:
            _write_artifacts(artifacts_dir, res, mission)
    except Exception as exc:  # recorded per row; the suite keeps going
        log.exception("episode %s/%s/%s/%s failed", planner, ell_s, ell_t, seed_index)
        res.status, res.error = "failed", f"{type(exc).__name__}: {exc}"
    return res


def _episode_tag(r: EpisodeResult) -> str:
    return f"{r.planner}_ls{r.ell_s:g}_lt{r.ell_t:g}_seed{r.seed}"


def _write_artifacts(directory: Path, res: EpisodeResult, mission: MissionResult) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    tag = _episode_tag(res)
    (directory / f"{tag}_mission.csv").write_text(format_mission_log(mission.log))
    if mission.tree_dumps:
        with open(directory / f"{tag}_trees.csv", "w") as fh:
            for i, dump in enumerate(mission.tree_dumps):
                fh.write(f"# plan {i}\n")
                fh.write(dump)


# --------------------------------------------------------------------------
# suites


def _run_job(args):
    return run_episode(*args)


def _map_jobs(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def run_suite(config: ExperimentConfig, out_dir: Path | None = None) -> tuple[list[EpisodeResult], list[dict]]:
    """Run every (planner, ell_s, ell_t, seed) episode and aggregate per cell.

    Informed planners run first; coverage baselines in each (ell_s, ell_t)
    cell then get the median path length and median observation count of
    the informed runs in that cell.
    """
    art = Path(out_dir) / "episodes" if (out_dir is not None and config.save_artifacts) else None
    cells = [(ls, lt) for ls in config.ell_s for lt in config.ell_t]
    informed = [p for p in config.planners if p in INFORMED]
    coverage = [p for p in config.planners if p not in INFORMED]
    seeds = range(config.n_seeds)

    jobs = [(config, p, ls, lt, s, None, art) for ls, lt in cells for p in informed for s in seeds]
    results = _map_jobs(jobs, config.workers)

    budgets = {}
    for ls, lt in cells:
        runs = [r for r in results if r.ell_s == ls and r.ell_t == lt and r.ok]
        if runs:
            budgets[(ls, lt)] = (
                float(statistics.median(r.path_length for r in runs)),
                int(round(statistics.median(r.n_observations for r in runs))),
            )
        else:
            budgets[(ls, lt)] = coverage_default(config)
    jobs = [(config, p, ls, lt, s, budgets[(ls, lt)], art) for ls, lt in cells for p in coverage for s in seeds]
    results += _map_jobs(jobs, config.workers)

    order = {p: i for i, p in enumerate(config.planners)}
    results.sort(key=lambda r: (order[r.planner], r.ell_s, r.ell_t, r.seed))
    summary = summarize(results)
    if out_dir is not None:
        write_results(results, summary, Path(out_dir))
    return results, summary


_METRICS = ("rmse_at_tmax", "rmse_all_t", "mean_posterior_var_at_tmax", "mean_posterior_var_all_t",
            "path_length", "n_observations")


def summarize(results: list[EpisodeResult]) -> list[dict]:
    """Mean and (sample) std per (planner, ell_s, ell_t) cell over successful episodes."""
    keys = []
    for r in results:
        k = (r.planner, r.ell_s, r.ell_t)
        if k not in keys:
            keys.append(k)
    rows = []
    for planner, ls, lt in keys:
        cell = [r for r in results if (r.planner, r.ell_s, r.ell_t) == (planner, ls, lt)]
        good = [r for r in cell if r.ok]
        row = dict(planner=planner, ell_s=ls, ell_t=lt, n=len(good), n_failed=len(cell) - len(good))
        for m in _METRICS:
            vals = [float(getattr(r, m)) for r in good]
            row[f"{m}_mean"] = statistics.fmean(vals) if vals else math.nan
            row[f"{m}_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(results: list[EpisodeResult], summary: list[dict], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
    if summary:
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(summary[0]))
            w.writeheader()
            for row in summary:
                w.writerow({k: _fmt(v) for k, v in row.items()})
    export_plot_data(results, (), out_dir / "plot_data")


def export_plot_data(results: list[EpisodeResult], kinds=(), out_dir: Path | None = None) -> dict:
    """Long-format plot data: planner, ell_s, ell_t, seed, time_index, metric, value.

    ``kinds`` empty means every kind. Returns ``{kind: csv_text}`` and writes
    ``<kind>.csv`` files when ``out_dir`` is given.
    """
    kinds = tuple(kinds) or PLOT_KINDS
    for k in kinds:
        if k not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {k!r}")
    if not results:
        raise ValueError("no results to export")
    out = {}
    for kind in kinds:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("planner", "ell_s", "ell_t", "seed", "time_index", "metric", "value"))
        for r in results:
            head = (r.planner, _fmt(float(r.ell_s)), _fmt(float(r.ell_t)), r.seed)
            if kind == "trajectory":
                for i, o in enumerate(r.observations):
                    for name, val in zip(("x", "y", "t", "value"), (*o.point, o.value)):
                        w.writerow((*head, i, name, _fmt(float(val))))
            else:
                arr = r.rmse_t if kind == "error_vs_time" else r.var_t
                if arr is None:
                    continue
                metric = "rmse" if kind == "error_vs_time" else "mean_posterior_var"
                for i, val in enumerate(arr):
                    w.writerow((*head, i, metric, _fmt(float(val))))
        out[kind] = buf.getvalue()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for kind, text in out.items():
            (out_dir / f"{kind}.csv").write_text(text)
    return out


# --------------------------------------------------------------------------
# offline hyperparameter calibration


def pilot_survey(config: ExperimentConfig, seed_indices, n_points: int = 300) -> list[list]:
    """Noisy readings at uniformly random space-time points, one list per field.

    Use seed indices that no evaluation episode uses, so calibration never
    sees the fields it is later scored on.
    """
    sets = []
    sensor = SensorModel(config.noise_var)
    for idx in seed_indices:
        series = build_series(config, idx)
        rng = _episode_seed(config.seed, idx, 2)
        x0, x1, y0, y1 = series.extent
        pts = np.column_stack([rng.uniform(x0, x1, n_points), rng.uniform(y0, y1, n_points),
                               rng.uniform(0.0, config.t_max, n_points)])
        truth = field_values_at(series, pts)
        keep = ~np.isnan(truth)
        noise = rng.normal(0.0, math.sqrt(sensor.noise_var), n_points)
        sets.append([gp.Observation(STPoint(*p), float(v)) for p, v in zip(pts[keep], (truth + noise)[keep])])
    return sets


def fit_kernel_params(observation_sets, nu: float = 1.5, sigma2: float = 1.0, noise_var: float = 0.01,
                      init=((30.0, 20.0), (100.0, 100.0), (60.0, 50.0)),
                      bounds=((5.0, 1000.0), (2.0, 1000.0))) -> KernelParams:
    """Maximize the summed log marginal likelihood over independent episodes.

    Only the two lengthscales are free; ``sigma2`` and ``noise_var`` stay
    fixed (fields are standardized). Each element of ``observation_sets`` is
    one episode's observation list.
    """
    sets = [list(s) for s in observation_sets if len(s)]
    if not sets:
        raise ValueError("no observations to calibrate on")
    data = [(np.array([tuple(o.point) for o in s]), np.array([o.value for o in s])) for s in sets]

    def nll(theta):
        ls, lt = np.exp(theta)
        params = KernelParams(nu=nu, ell_s=ls, ell_t=lt, sigma2=sigma2)
        total = 0.0
        for X, y in data:
            total += gp.log_marginal_likelihood(gp.fit_points(X, y, params, noise_var))
        return -total

    log_bounds = [tuple(np.log(b)) for b in bounds]
    best = None
    for x0 in init:
        r = minimize(nll, np.log(x0), method="L-BFGS-B", bounds=log_bounds)
        if best is None or r.fun < best.fun:
            best = r
    ls, lt = np.exp(best.x)
    return KernelParams(nu=nu, ell_s=float(ls), ell_t=float(lt), sigma2=sigma2)
