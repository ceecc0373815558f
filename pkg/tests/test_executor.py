import itertools
import math

import numpy as np
import pytest

from stipp.coverage import circular_coverage
from stipp.envsim import FieldSeries, SensorModel
from stipp.executor import (
    Environment,
    MissionConfig,
    MissionState,
    Path,
    execute_segment,
    format_mission_log,
    run_coverage_mission,
    run_mission,
    score_paths,
    select_path,
)
from stipp.kernels import KernelParams, STPoint, grid_sites, product_grid
from stipp.planner import PlannerConfig, Tree, parse_tree_dump

PARAMS = KernelParams(ell_s=80.0, ell_t=20.0)
QUERY = product_grid(grid_sites(np.linspace(10, 490, 8), np.linspace(10, 490, 8)), np.linspace(0, 100, 10))


def ramp_env(t_max=100.0, noise=0.0):
    xs = np.linspace(0, 500, 11)
    frame = np.add.outer(xs, xs) / 100.0  # value = (x + y) / 100
    values = np.stack([frame + k for k in range(int(t_max) + 1)])
    return Environment(FieldSeries(values, np.arange(t_max + 1), (0, 500, 0, 500), 1.0), SensorModel(noise))


def line_tree(points, t0=0.0, period=5.0):
    tree = Tree(STPoint(*points[0], t0))
    for k, p in enumerate(points[1:], 1):
        prev = tree[k - 1]
        tree.add(STPoint(*p, t0 + k * period), prev.cost + math.dist(p, (prev.pose.x, prev.pose.y)), float(k), k - 1)
    return tree


def test_single_leaf_path():
    tree = line_tree([(0, 0), (30, 40), (30, 80)])
    p = select_path(tree)
    assert [n.id for n in p.nodes] == [0, 1, 2]
    assert p.length == pytest.approx(90.0) and p.info == 2.0


def test_more_informative_disjoint_path_wins():
    tree = Tree(STPoint(0, 0, 0))
    tree.add(STPoint(50, 0, 5), 50, 1.0, 0)
    tree.add(STPoint(0, 50, 5), 50, 2.0, 0)
    assert select_path(tree).nodes[-1].id == 2


def brute_force_select(tree, lam_len, lam_sim):
    """Lexicographic DFS enumeration (children ascending), scored independently."""
    leaf_paths = []

    def walk(nid, prefix):
        kids = sorted(c for c in range(len(tree)) if tree[c].parent == nid)
        if not kids:
            leaf_paths.append(prefix)
        for c in kids:
            walk(c, prefix + [c])

    walk(0, [0])
    lengths = []
    for p in leaf_paths:
        lengths.append(sum(math.hypot(tree[b].pose.x - tree[a].pose.x, tree[b].pose.y - tree[a].pose.y)
                           for a, b in zip(p, p[1:])))
    max_len = max(lengths)
    best, best_s, best_set = None, -math.inf, set()
    for p, length in zip(leaf_paths, lengths):
        body = p[1:]
        sim = len([n for n in body if n in best_set]) / len(body) if body else 0.0
        s = tree[p[-1]].info * (1 + lam_len * (length / max_len if max_len else 0)) * (1 - lam_sim * sim)
        if best is None or s > best_s or (s == best_s and p[-1] < best[-1]):
            best, best_s, best_set = p, s, set(body)
    return best


@pytest.mark.parametrize("seed", range(10))
def test_selection_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 20 if seed < 5 else 100
    tree = Tree(STPoint(250, 250, 0))
    for _ in range(n - 1):
        parent = int(rng.integers(len(tree)))
        pp = tree[parent]
        tree.add(STPoint(*rng.uniform(0, 500, 2), pp.pose.t + 5), 0.0, pp.info + rng.uniform(0, 1), parent)
    for lam_len, lam_sim in [(0.1, 0.3), (0.0, 0.0), (1.0, 0.9)]:
        assert [n.id for n in select_path(tree, lam_len, lam_sim).nodes] == brute_force_select(tree, lam_len, lam_sim)


def test_score_ties_go_to_lower_leaf():
    tree = Tree(STPoint(0, 0, 0))
    tree.add(STPoint(10, 0, 5), 10, 1.0, 0)
    tree.add(STPoint(0, 10, 5), 10, 1.0, 0)
    _, scores, best = score_paths(tree, 0.1, 0.0)
    assert scores[0] == scores[1] and best == 0


def test_execute_two_waypoints_per_interval():
    env = ramp_env()
    cfg = MissionConfig()
    tree = line_tree([(0, 0), (60, 80), (60, 180), (60, 260)])
    state = MissionState(0.0, STPoint(0, 0, 0), [], 0.0)
    new = execute_segment(state, Path.from_nodes(tree.path_to(3)), env, cfg, np.random.default_rng(0))
    assert new.clock == 10.0 and len(new.observations) == 2
    assert (new.pose.x, new.pose.y) == (60.0, 180.0)
    assert new.distance_traveled == pytest.approx(200.0)
    assert [o.point.t for o in new.observations] == [5.0, 10.0]
    assert new.observations[0].value == pytest.approx(1.4 + 5, abs=1e-12)
    assert state.observations == [] and state.clock == 0.0


def test_execute_short_path_holds_position():
    env = ramp_env()
    tree = line_tree([(0, 0), (60, 80)])
    state = MissionState(0.0, STPoint(0, 0, 0), [], 0.0)
    new = execute_segment(state, Path.from_nodes(tree.path_to(1)), env, MissionConfig(), np.random.default_rng(0))
    assert new.clock == 10.0 and (new.pose.x, new.pose.y) == (60.0, 80.0)
    assert len(new.observations) == 2


def test_execute_zero_length_path():
    env = ramp_env()
    tree = Tree(STPoint(100, 100, 20))
    state = MissionState(20.0, STPoint(100, 100, 20), [], 0.0)
    new = execute_segment(state, Path.from_nodes([tree.root]), env, MissionConfig(), np.random.default_rng(0))
    assert (new.pose.x, new.pose.y) == (100.0, 100.0) and new.distance_traveled == 0.0
    assert [o.point for o in new.observations] == [STPoint(100, 100, 25), STPoint(100, 100, 30)]


def test_execute_rejects_wrong_start():
    tree = line_tree([(0, 0), (10, 0)])
    state = MissionState(0.0, STPoint(5, 5, 0), [], 0.0)
    with pytest.raises(ValueError):
        execute_segment(state, Path.from_nodes(tree.path_to(1)), ramp_env(), MissionConfig(), np.random.default_rng(0))


def test_empty_mission():
    res = run_mission(ramp_env(), MissionConfig(t_max=0), np.random.default_rng(0), PARAMS, 0.01, QUERY)
    assert res.state.observations == [] and res.tree_dumps == []


def test_full_mission():
    cfg = MissionConfig()
    res = run_mission(ramp_env(noise=0.01), cfg, np.random.default_rng(1), PARAMS, 0.01, QUERY)
    obs = res.state.observations
    assert len(obs) == 21 and not res.aborted
    times = [o.point.t for o in obs]
    assert times == [5.0 * k for k in range(21)]
    assert res.state.distance_traveled <= cfg.t_max / cfg.sample_period * cfg.planner.max_step + 1e-6
    assert len(res.tree_dumps) == 10
    # each plan is rooted at the mission pose and clock at replanning time
    for k, dump in enumerate(res.tree_dumps):
        root = parse_tree_dump(dump).root
        assert root.pose.t == 10.0 * k
        assert (root.pose.x, root.pose.y) == (obs[2 * k].point.x, obs[2 * k].point.y)
    log = format_mission_log(res.log)
    assert log.splitlines()[0] == "event,clock,x,y,value,cumulative_distance"


def test_distance_budget_respected():
    cfg = MissionConfig(distance_budget=250.0)
    res = run_mission(ramp_env(), cfg, np.random.default_rng(2), PARAMS, 0.01, QUERY)
    assert res.state.distance_traveled <= 250.0 + 1e-9


def test_mission_deterministic():
    a = run_mission(ramp_env(noise=0.01), MissionConfig(), np.random.default_rng(4), PARAMS, 0.01, QUERY)
    b = run_mission(ramp_env(noise=0.01), MissionConfig(), np.random.default_rng(4), PARAMS, 0.01, QUERY)
    assert a.tree_dumps == b.tree_dumps
    assert [tuple(o) for o in a.state.observations] == [tuple(o) for o in b.state.observations]


def test_replan_interval_equal_to_window_plans_once():
    cfg = MissionConfig(t_max=30.0, replan_interval=30.0)
    res = run_mission(ramp_env(), cfg, np.random.default_rng(0), PARAMS, 0.01, QUERY)
    assert len(res.tree_dumps) == 1
    assert len(res.state.observations) == 7
    tree = parse_tree_dump(res.tree_dumps[0])
    path = select_path(tree)
    visited = [(o.point.x, o.point.y) for o in res.state.observations[1:len(path.nodes)]]
    assert visited == [(n.pose.x, n.pose.y) for n in path.nodes[1:]]


def test_sampling_failure_aborts_with_partial_results():
    cfg = MissionConfig(start=(250.0, 250.0), t_max=100.0)
    env = ramp_env(t_max=30.0)  # the series ends before the mission does
    res = run_mission(env, cfg, np.random.default_rng(0), PARAMS, 0.01, QUERY)
    assert res.aborted and res.error
    assert 1 <= len(res.state.observations) <= 7


def test_coverage_mission():
    plan = circular_coverage((0, 500, 0, 500), 1610.0, 21)
    res = run_coverage_mission(ramp_env(), plan, MissionConfig(), np.random.default_rng(0))
    assert len(res.state.observations) == 21
    assert res.state.distance_traveled == pytest.approx(1610.0, abs=1e-6)


def revisit_distance(observations, lag):
    pts = np.array([tuple(o.point) for o in observations])
    best = math.inf
    for i, j in itertools.combinations(range(len(pts)), 2):
        if pts[j, 2] - pts[i, 2] >= lag:
            best = min(best, math.hypot(*(pts[j, :2] - pts[i, :2])))
    return best


def test_short_temporal_lengthscale_revisits_sites():
    params = KernelParams(ell_s=80.0, ell_t=5.0)
    dists = []
    for seed in range(5):
        res = run_mission(ramp_env(), MissionConfig(), np.random.default_rng(seed), params, 0.01, QUERY)
        dists.append(revisit_distance(res.state.observations, lag=20.0))
    assert min(dists) <= 20.0


def test_config_mismatch_rejected():
    cfg = MissionConfig(sample_period=4.0, planner=PlannerConfig(step_period=5.0))
    with pytest.raises(ValueError):
        run_mission(ramp_env(), cfg, np.random.default_rng(0), PARAMS, 0.01, QUERY)
