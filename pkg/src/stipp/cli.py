"""Command-line entry point: ``stipp {simulate,plan,suite,export,calibrate}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .envsim import AdvectionConfig, simulate_advection, write_raster_series
from .gp import Observation
from .harness import (
    PLOT_KINDS,
    EpisodeResult,
    ExperimentConfig,
    config_from_dict,
    export_plot_data,
    fit_kernel_params,
    load_config,
    pilot_survey,
    run_episode,
    run_suite,
    summarize,
    write_results,
)
from .kernels import STPoint

log = logging.getLogger("stipp")

_SPECIAL = {"planners": str, "ell_s": float, "ell_t": float}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML file with ExperimentConfig fields")
    p.add_argument("--full-scale", action="store_true",
                   help="500x500 simulation, 25x25x50 inducing grid, 20 seeds")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in ("seed", "workers"):
            p.add_argument(flag, type=int, default=None, dest=f.name)
        elif f.name in _SPECIAL:
            p.add_argument(flag, nargs="+", type=_SPECIAL[f.name], default=None, dest=f.name)
        elif f.name == "start":
            p.add_argument(flag, nargs=2, type=float, default=None, dest=f.name, metavar=("X", "Y"))
        elif f.name == "advection":
            p.add_argument(flag, type=json.loads, default=None, dest=f.name,
                           help="JSON object of simulator overrides")
        elif isinstance(f.default, bool):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None, dest=f.name)
        elif isinstance(f.default, int):
            p.add_argument(flag, type=int, default=None, dest=f.name)
        elif isinstance(f.default, float) or f.name in ("distance_budget",):
            p.add_argument(flag, type=float, default=None, dest=f.name)
        else:
            p.add_argument(flag, default=None, dest=f.name)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        data.update(load_config(args.config).to_dict())
    if args.full_scale:
        data.update(grid_size=500, n_times=50, n_seeds=20)
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    return config_from_dict(data)


def _dump_episodes(results: list[EpisodeResult], path: Path) -> None:
    rows = []
    for r in results:
        rows.append(dict(
            planner=r.planner, ell_s=r.ell_s, ell_t=r.ell_t, seed=r.seed, status=r.status, error=r.error,
            metrics={k: getattr(r, k) for k in ("rmse_at_tmax", "rmse_all_t", "mean_posterior_var_at_tmax",
                                                 "mean_posterior_var_all_t", "path_length", "n_observations")},
            inducing_times=None if r.inducing_times is None else r.inducing_times.tolist(),
            rmse_t=None if r.rmse_t is None else r.rmse_t.tolist(),
            var_t=None if r.var_t is None else r.var_t.tolist(),
            observations=[[*o.point, o.value] for o in r.observations],
        ))
    path.write_text(json.dumps(rows))


def _load_episodes(path: Path) -> list[EpisodeResult]:
    out = []
    for d in json.loads(path.read_text()):
        r = EpisodeResult(d["planner"], d["ell_s"], d["ell_t"], d["seed"], status=d["status"], error=d["error"])
        for k, v in d["metrics"].items():
            setattr(r, k, v)
        for k in ("inducing_times", "rmse_t", "var_t"):
            if d[k] is not None:
                setattr(r, k, np.array(d[k], dtype=float))
        r.observations = [Observation(STPoint(*o[:3]), o[3]) for o in d["observations"]]
        out.append(r)
    return out


def cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    adv = AdvectionConfig(grid_size=cfg.grid_size, **cfg.advection)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, args.index, 0]))
    series = simulate_advection(cfg.t_max, cfg.frame_dt, rng, adv)
    write_raster_series(series, args.output)
    print(f"wrote {series.shape[0]} frames of {series.shape[1]}x{series.shape[2]} to {args.output}")
    return 0


def cmd_plan(args) -> int:
    cfg = config_from_args(args)
    out = Path(cfg.output_dir)
    planner = args.planner or cfg.planners[0]
    ls, lt = cfg.ell_s[0], cfg.ell_t[0]
    res = run_episode(cfg, planner, ls, lt, args.index, None, out / "episodes")
    write_results([res], summarize([res]), out)
    _dump_episodes([res], out / "episodes.json")
    print(f"{planner} seed={args.index} status={res.status} rmse_at_tmax={res.rmse_at_tmax:.4f} "
          f"n_obs={res.n_observations} path_length={res.path_length:.1f}")
    if res.error:
        print(f"error: {res.error}", file=sys.stderr)
    return 0 if res.ok else 1


def cmd_suite(args) -> int:
    cfg = config_from_args(args)
    out = Path(cfg.output_dir)
    results, summary = run_suite(cfg, out)
    _dump_episodes(results, out / "episodes.json")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    for row in summary:
        print(f"{row['planner']:>20s} ell_s={row['ell_s']:g} ell_t={row['ell_t']:g} n={row['n']} "
              f"rmse_tmax={row['rmse_at_tmax_mean']:.3f} ({row['rmse_at_tmax_std']:.3f}) "
              f"rmse_all={row['rmse_all_t_mean']:.3f} var_tmax={row['mean_posterior_var_at_tmax_mean']:.3f}")
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"failed: {r.planner} ell_s={r.ell_s} ell_t={r.ell_t} seed={r.seed}: {r.error}", file=sys.stderr)
    return 0 if not failed else 1


def cmd_export(args) -> int:
    results = _load_episodes(Path(args.results) / "episodes.json")
    out = Path(args.output or Path(args.results) / "plot_data")
    written = export_plot_data(results, args.kind or (), out)
    for kind in written:
        print(out / f"{kind}.csv")
    return 0


def cmd_calibrate(args) -> int:
    cfg = config_from_args(args)
    indices = range(args.first_index, args.first_index + args.n_fields)
    params = fit_kernel_params(pilot_survey(cfg, indices, args.n_points), nu=cfg.nu, sigma2=cfg.sigma2,
                               noise_var=cfg.noise_var)
    print(json.dumps({"ell_s": params.ell_s, "ell_t": params.ell_t}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stipp", description="Spatiotemporal informative path planning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="export an advection-diffusion run in the stfield format")
    _add_config_flags(p)
    p.add_argument("--index", type=int, default=0, help="episode index (selects the random field)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="run one episode")
    _add_config_flags(p)
    p.add_argument("--planner", choices=("iig_st", "iig", "coverage_circle", "coverage_lemniscate"))
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("suite", help="run the full sweep")
    _add_config_flags(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("export", help="write plot data from a suite output directory")
    p.add_argument("results", help="suite output directory (contains episodes.json)")
    p.add_argument("--kind", action="append", choices=PLOT_KINDS)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("calibrate", help="fit kernel lengthscales to a random pilot survey")
    _add_config_flags(p)
    p.add_argument("--first-index", type=int, default=100,
                   help="first field index; keep clear of the evaluation seeds")
    p.add_argument("--n-fields", type=int, default=5)
    p.add_argument("--n-points", type=int, default=300)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
