"""Incremental information-gathering tree planner over space-time.

Every node carries the map state conditioned on all observations made so
far plus the hypothetical samples along its root path, so a child's
information is its parent's information plus the marginal gain of one more
sample. Time only moves forward: a child is always ``step_period`` later
than its parent.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .infogain import MapState, evaluate_proposal
from .kernels import STPoint

__all__ = [
    "PlannerConfig",
    "TreeNode",
    "Tree",
    "ExtensionReport",
    "RicTracker",
    "sample_free",
    "nearest",
    "steer",
    "near",
    "extend",
    "ric",
    "plan",
    "dump_tree",
    "parse_tree_dump",
]

_COLOCATED = 1e-6


@dataclass(frozen=True)
class PlannerConfig:
    max_step: float = 100.0
    step_period: float = 5.0
    var_threshold: float = 0.15
    ric_window: int = 10
    ric_threshold: float = 1e-2
    node_budget: int = 100
    near_radius: float = 100.0
    bounds: tuple = (0.0, 500.0, 0.0, 500.0)
    horizon: float = math.inf  # nodes are never placed later than this time
    max_near: int = 6  # reconnection candidates per extension besides the nearest node
    max_attempts_factor: int = 10

    def __post_init__(self):
        for name in ("max_step", "step_period", "var_threshold", "ric_threshold", "near_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.ric_window < 1 or self.node_budget < 1:
            raise ValueError("ric_window and node_budget must be >= 1")
        x0, x1, y0, y1 = self.bounds
        if x1 < x0 or y1 < y0:
            raise ValueError(f"invalid bounds {self.bounds}")


@dataclass(eq=False)
class TreeNode:
    id: int
    pose: STPoint
    cost: float
    info: float
    parent: int | None
    state: MapState | None = field(default=None, repr=False)


class Tree:
    """Append-only node store; node ids equal insertion order."""

    def __init__(self, root_pose: STPoint, state: MapState | None = None):
        self.nodes: list[TreeNode] = []
        self.children: list[list[int]] = []
        self._xy: list[tuple[float, float]] = []
        self.add(STPoint(*root_pose), cost=0.0, info=0.0, parent=None, state=state)

    def add(self, pose: STPoint, cost: float, info: float, parent: int | None,
            state: MapState | None = None) -> TreeNode:
        node = TreeNode(len(self.nodes), pose, cost, info, parent, state)
        self.nodes.append(node)
        self.children.append([])
        self._xy.append((pose.x, pose.y))
        if parent is not None:
            self.children[parent].append(node.id)
        return node

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, i: int) -> TreeNode:
        return self.nodes[i]

    def xy(self) -> np.ndarray:
        return np.asarray(self._xy, dtype=float)

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if not self.children[n.id]]

    def path_to(self, node_id: int) -> list[TreeNode]:
        out = []
        cur: int | None = node_id
        while cur is not None:
            out.append(self.nodes[cur])
            cur = self.nodes[cur].parent
        return out[::-1]


@dataclass
class ExtensionReport:
    nodes: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    pruned: int = 0


@dataclass
class RicTracker:
    window: int = 10
    recent_gains: deque = field(default_factory=deque)
    cumulative_info: float = 0.0

    def push(self, gain: float) -> None:
        self.recent_gains.append(float(gain))
        while len(self.recent_gains) > self.window:
            self.recent_gains.popleft()
        self.cumulative_info += float(gain)


def sample_free(bounds, rng: np.random.Generator) -> tuple[float, float]:
    x0, x1, y0, y1 = bounds
    return float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))


def nearest(tree: Tree, target) -> TreeNode:
    """Closest node in space; ties go to the lowest id."""
    d = np.hypot(*(tree.xy() - np.asarray(target[:2], dtype=float)).T)
    return tree[int(np.argmin(d))]


def near(tree: Tree, point, radius: float) -> list[TreeNode]:
    """Nodes within ``radius`` (space only), ascending id."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    d = np.hypot(*(tree.xy() - np.asarray(point[:2], dtype=float)).T)
    return [tree[int(i)] for i in np.flatnonzero(d <= radius)]


def steer(from_node: TreeNode, target, cfg: PlannerConfig) -> STPoint:
    """Move at most ``max_step`` toward ``target``; time always advances one period."""
    x, y = from_node.pose.x, from_node.pose.y
    dx, dy = target[0] - x, target[1] - y
    d = math.hypot(dx, dy)
    if d > cfg.max_step:
        s = cfg.max_step / d
        nx, ny = x + s * dx, y + s * dy
    else:
        nx, ny = float(target[0]), float(target[1])
    return STPoint(nx, ny, from_node.pose.t + cfg.step_period)


def _dominated(tree: Tree, pose: STPoint, info: float, cost: float) -> bool:
    xy = tree.xy()
    close = np.flatnonzero(np.hypot(*(xy - (pose.x, pose.y)).T) <= _COLOCATED)
    for i in close:
        other = tree[int(i)]
        if abs(other.pose.t - pose.t) < 1e-9 and other.info >= info and other.cost <= cost:
            return True
    return False


def extend(tree: Tree, cfg: PlannerConfig, rng: np.random.Generator) -> ExtensionReport:
    """One sample / nearest / steer round with near-node reconnection.

    The steered position is offered as a child of the nearest node and of up
    to ``cfg.max_near`` other nodes within ``near_radius`` that can reach it
    in one step. Each candidate's information is seeded with its parent's.
    Candidates dominated (in both info and cost) by a co-located node at the
    same time are pruned.
    """
    report = ExtensionReport()
    target = sample_free(cfg.bounds, rng)
    nn = nearest(tree, target)
    pose = steer(nn, target, cfg)
    xy = (pose.x, pose.y)

    parents = [nn]
    others = [n for n in near(tree, xy, cfg.near_radius) if n.id != nn.id]
    others = [n for n in others if math.hypot(n.pose.x - xy[0], n.pose.y - xy[1]) <= cfg.max_step + 1e-9]
    if len(others) > cfg.max_near:
        dist = [math.hypot(n.pose.x - xy[0], n.pose.y - xy[1]) for n in others]
        keep = sorted(range(len(others)), key=lambda i: (dist[i], others[i].id))[: cfg.max_near]
        others = [others[i] for i in sorted(keep, key=lambda i: others[i].id)]
    parents += others

    for parent in parents:
        if len(tree) >= cfg.node_budget:
            break
        t = parent.pose.t + cfg.step_period
        if t > cfg.horizon + 1e-9:
            continue
        cand = STPoint(xy[0], xy[1], t)
        step = math.hypot(xy[0] - parent.pose.x, xy[1] - parent.pose.y)
        cost = parent.cost + step
        info, state = evaluate_proposal(cand, parent.state, near_info=parent.info)
        if _dominated(tree, cand, info, cost):
            report.pruned += 1
            continue
        node = tree.add(cand, cost, info, parent.id, state)
        report.nodes.append(node)
        report.gains.append(info - parent.info)
    return report


def ric(tracker: RicTracker) -> float:
    """Windowed mean gain relative to cumulative gain; ``inf`` before any gain."""
    if tracker.cumulative_info <= 0:
        return math.inf
    if not tracker.recent_gains:
        return 0.0
    return float(np.mean(tracker.recent_gains)) / tracker.cumulative_info


@dataclass
class PlanResult:
    tree: Tree
    stop_reason: str
    extensions: int
    best_mean_var: float


def plan(state: MapState, cfg: PlannerConfig, rng: np.random.Generator,
         start: STPoint) -> Tree:
    """Grow a tree from ``start`` until a stopping rule fires (see :func:`plan_detailed`)."""
    return plan_detailed(state, cfg, rng, start).tree


def plan_detailed(state: MapState, cfg: PlannerConfig, rng: np.random.Generator,
                  start: STPoint) -> PlanResult:
    """Grow a tree until any of: the mean query-grid variance at the most
    informative node falls to ``var_threshold``; RIC drops below
    ``ric_threshold``; the tree holds ``node_budget`` nodes."""
    tree = Tree(STPoint(*start), state)
    tracker = RicTracker(cfg.ric_window)
    best_var = float(np.mean(state.var))
    if cfg.node_budget <= 1:
        return PlanResult(tree, "node_budget", 0, best_var)
    if start[2] + cfg.step_period > cfg.horizon + 1e-9:
        return PlanResult(tree, "horizon", 0, best_var)
    max_attempts = cfg.max_attempts_factor * cfg.node_budget
    attempts = 0
    reason = "attempts"
    while attempts < max_attempts:
        attempts += 1
        report = extend(tree, cfg, rng)
        if report.nodes:
            tracker.push(max(report.gains))
            best = max(tree.nodes, key=lambda n: (n.info, -n.id))
            best_var = float(np.mean(best.state.var))
            if best_var <= cfg.var_threshold:
                reason = "variance"
                break
            if ric(tracker) < cfg.ric_threshold:
                reason = "ric"
                break
        if len(tree) >= cfg.node_budget:
            reason = "node_budget"
            break
    return PlanResult(tree, reason, attempts, best_var)


def dump_tree(tree: Tree, delimiter: str = ",") -> str:
    """One line per node: id, parent_id, x, y, t, cost, info (root parent is -1)."""
    rows = [delimiter.join(["id", "parent_id", "x", "y", "t", "cost", "info"])]
    for n in tree:
        parent = -1 if n.parent is None else n.parent
        rows.append(delimiter.join(
            [str(n.id), str(parent)] + [repr(float(v)) for v in (n.pose.x, n.pose.y, n.pose.t, n.cost, n.info)]
        ))
    return "\n".join(rows) + "\n"


def parse_tree_dump(text: str, delimiter: str = ",") -> Tree:
    """Rebuild a tree (without map states) from :func:`dump_tree` output."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    tree = None
    for ln in lines[1:]:
        f = ln.split(delimiter)
        nid, parent = int(f[0]), int(f[1])
        x, y, t, cost, info = (float(v) for v in f[2:])
        if tree is None:
            tree = Tree(STPoint(x, y, t))
            tree.root.cost, tree.root.info = cost, info
        else:
            node = tree.add(STPoint(x, y, t), cost, info, None if parent < 0 else parent)
            if node.id != nid:
                raise ValueError(f"node ids must be consecutive, got {nid} at position {node.id}")
    if tree is None:
        raise ValueError("empty tree dump")
    return tree


def iter_edges(tree: Tree) -> Iterable[tuple[TreeNode, TreeNode]]:
    for n in tree:
        if n.parent is not None:
            yield tree[n.parent], n
