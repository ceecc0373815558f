"""Path selection and the receding-horizon plan / execute / replan loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coverage import CoveragePlan
from .envsim import FieldSeries, SamplingError, SensorModel, sample
from .gp import Observation
from .infogain import MapState
from .kernels import KernelParams, STPoint
from .planner import PlannerConfig, Tree, TreeNode, dump_tree, plan_detailed

__all__ = [
    "Path",
    "MissionConfig",
    "MissionState",
    "MissionResult",
    "Environment",
    "LOG_COLUMNS",
    "select_path",
    "score_paths",
    "execute_segment",
    "run_mission",
    "run_coverage_mission",
    "format_mission_log",
]

LOG_COLUMNS = ("event", "clock", "x", "y", "value", "cumulative_distance")


@dataclass
class Path:
    nodes: list
    length: float
    info: float

    @classmethod
    def from_nodes(cls, nodes: list) -> "Path":
        length = sum(
            math.hypot(b.pose.x - a.pose.x, b.pose.y - a.pose.y) for a, b in zip(nodes, nodes[1:])
        )
        return cls(list(nodes), length, nodes[-1].info)


@dataclass(frozen=True)
class MissionConfig:
    t_max: float = 100.0
    sample_period: float = 5.0
    replan_interval: float = 10.0
    distance_budget: float | None = None
    start: tuple = (250.0, 250.0)
    lambda_len: float = 0.1
    lambda_sim: float = 0.3
    planner: PlannerConfig = field(default_factory=PlannerConfig)


@dataclass
class MissionState:
    clock: float
    pose: STPoint
    observations: list = field(default_factory=list)
    distance_traveled: float = 0.0


@dataclass
class MissionResult:
    state: MissionState
    tree_dumps: list = field(default_factory=list)
    log: list = field(default_factory=list)
    aborted: bool = False
    error: str = ""
    stop_reasons: list = field(default_factory=list)


class Environment:
    """Ground-truth series plus a point sensor."""

    def __init__(self, series: FieldSeries, sensor: SensorModel):
        self.series = series
        self.sensor = sensor

    def sample(self, point, rng: np.random.Generator) -> Observation:
        return sample(self.series, point, self.sensor, rng)


# --------------------------------------------------------------------------
# path selection


def _dfs_leaf_paths(tree: Tree) -> list[list[TreeNode]]:
    paths = []
    stack = [(0, [tree.root])]
    while stack:
        nid, prefix = stack.pop()
        kids = sorted(tree.children[nid])
        if not kids:
            paths.append(prefix)
            continue
        for c in reversed(kids):
            stack.append((c, prefix + [tree[c]]))
    return paths


def score_paths(tree: Tree, lambda_len: float = 0.1, lambda_sim: float = 0.3):
    """Score every root-to-leaf path in depth-first order.

    ``score = info * (1 + lambda_len * length / max_length) * (1 - lambda_sim * similarity)``
    where ``similarity`` is the fraction of the path's non-root nodes that
    also lie on the best path found so far. Returns ``(paths, scores, best_index)``.
    """
    paths = [Path.from_nodes(p) for p in _dfs_leaf_paths(tree)]
    max_len = max(p.length for p in paths)
    best_i, best_score, best_ids = -1, -math.inf, frozenset()
    scores = []
    for i, p in enumerate(paths):
        body = [n.id for n in p.nodes[1:]]
        sim = (sum(1 for n in body if n in best_ids) / len(body)) if body else 0.0
        norm_len = p.length / max_len if max_len > 0 else 0.0
        s = p.info * (1 + lambda_len * norm_len) * (1 - lambda_sim * sim)
        scores.append(s)
        leaf = p.nodes[-1].id
        if best_i < 0 or s > best_score or (s == best_score and leaf < paths[best_i].nodes[-1].id):
            best_i, best_score = i, s
            best_ids = frozenset(body)
    return paths, scores, best_i


def select_path(tree: Tree, lambda_len: float = 0.1, lambda_sim: float = 0.3) -> Path:
    paths, _, best = score_paths(tree, lambda_len, lambda_sim)
    return paths[best]


# --------------------------------------------------------------------------
# execution


def _log(result: MissionResult | None, event: str, state: MissionState, value: float = math.nan):
    if result is not None:
        result.log.append((event, state.clock, state.pose.x, state.pose.y, value, state.distance_traveled))


def execute_segment(state: MissionState, path: Path, env: Environment, cfg: MissionConfig,
                    rng: np.random.Generator, result: MissionResult | None = None) -> MissionState:
    """Follow ``path`` for one replanning interval, sampling every period.

    When the path runs out the vehicle holds its position and keeps sampling
    until the interval (or the mission window) ends.
    """
    if path.nodes and math.hypot(path.nodes[0].pose.x - state.pose.x,
                                 path.nodes[0].pose.y - state.pose.y) > 1e-6:
        raise ValueError("path must start at the current pose")
    n_steps = int(round(cfg.replan_interval / cfg.sample_period))
    clock, x, y = state.clock, state.pose.x, state.pose.y
    dist = state.distance_traveled
    obs = list(state.observations)
    out = MissionState(clock, STPoint(x, y, clock), obs, dist)
    for k in range(1, n_steps + 1):
        t_next = clock + cfg.sample_period
        if t_next > cfg.t_max + 1e-9:
            break
        if k < len(path.nodes):
            node = path.nodes[k]
            step = math.hypot(node.pose.x - x, node.pose.y - y)
            over_budget = cfg.distance_budget is not None and dist + step > cfg.distance_budget + 1e-9
            if step > cfg.planner.max_step + 1e-9:
                # unreachable waypoint: hand control back for a replan
                break
            if not over_budget:
                x, y = node.pose.x, node.pose.y
                dist += step
        clock = t_next
        out = MissionState(clock, STPoint(x, y, clock), obs, dist)
        _log(result, "waypoint", out)
        o = env.sample(STPoint(x, y, clock), rng)
        obs.append(o)
        _log(result, "sample", out, o.value)
    return out


def _collect_initial(state: MissionState, env: Environment, rng, result: MissionResult) -> bool:
    try:
        o = env.sample(STPoint(state.pose.x, state.pose.y, state.clock), rng)
    except SamplingError as exc:
        result.aborted, result.error = True, str(exc)
        return False
    state.observations.append(o)
    _log(result, "sample", state, o.value)
    return True


def run_mission(env: Environment, cfg: MissionConfig, rng: np.random.Generator,
                params: KernelParams, noise_var: float, query_points,
                keep_trees: bool = True) -> MissionResult:
    """Receding-horizon informative mission.

    Each replan builds the map state from every observation so far (with its
    original timestamp), grows a tree rooted at the current pose and clock,
    selects a path and executes one interval of it.
    """
    start = STPoint(float(cfg.start[0]), float(cfg.start[1]), 0.0)
    state = MissionState(0.0, start, [], 0.0)
    result = MissionResult(state)
    if cfg.t_max <= 0:
        return result
    if not _collect_initial(state, env, rng, result):
        return result
    pcfg = replace(cfg.planner, horizon=cfg.t_max)
    if abs(pcfg.step_period - cfg.sample_period) > 1e-9:
        raise ValueError("planner step_period must equal the mission sample_period")
    while state.clock < cfg.t_max - 1e-9:
        if cfg.distance_budget is not None and state.distance_traveled >= cfg.distance_budget - 1e-9:
            break
        _log(result, "plan_start", state)
        pts = np.array([tuple(o.point) for o in state.observations], dtype=float)
        mstate = MapState.build(pts, query_points, params, noise_var)
        res = plan_detailed(mstate, pcfg, rng, state.pose)
        result.stop_reasons.append(res.stop_reason)
        if keep_trees:
            result.tree_dumps.append(dump_tree(res.tree))
        path = select_path(res.tree, cfg.lambda_len, cfg.lambda_sim)
        try:
            new_state = execute_segment(state, path, env, cfg, rng, result)
        except SamplingError as exc:
            result.aborted, result.error = True, str(exc)
            break
        if new_state.clock <= state.clock:
            break
        state = new_state
        result.state = state
        _log(result, "replan", state)
    result.state = state
    return result


def run_coverage_mission(env: Environment, coverage: CoveragePlan, cfg: MissionConfig,
                         rng: np.random.Generator) -> MissionResult:
    """Visit the coverage waypoints one per sampling period, sampling at each."""
    wp = coverage.waypoints
    start = STPoint(float(wp[0, 0]), float(wp[0, 1]), 0.0)
    state = MissionState(0.0, start, [], 0.0)
    result = MissionResult(state)
    if cfg.t_max <= 0:
        return result
    if not _collect_initial(state, env, rng, result):
        return result
    for k in range(1, len(wp)):
        clock = k * cfg.sample_period
        if clock > cfg.t_max + 1e-9:
            break
        step = math.hypot(wp[k, 0] - state.pose.x, wp[k, 1] - state.pose.y)
        if cfg.distance_budget is not None and state.distance_traveled + step > cfg.distance_budget + 1e-9:
            break
        state = MissionState(clock, STPoint(float(wp[k, 0]), float(wp[k, 1]), clock),
                             state.observations, state.distance_traveled + step)
        _log(result, "waypoint", state)
        try:
            o = env.sample(state.pose, rng)
        except SamplingError as exc:
            result.aborted, result.error = True, str(exc)
            break
        state.observations.append(o)
        _log(result, "sample", state, o.value)
    result.state = state
    return result


def format_mission_log(rows, delimiter: str = ",") -> str:
    out = [delimiter.join(LOG_COLUMNS)]
    for event, clock, x, y, value, dist in rows:
        val = "" if math.isnan(value) else repr(float(value))
        out.append(delimiter.join([event, repr(float(clock)), repr(float(x)), repr(float(y)), val, repr(float(dist))]))
    return "\n".join(out) + "\n"
