"""Geometric path planners producing arc-length parameterized reference paths.

Both planners work in position space and keep every segment at least
``clearance`` (never less than the scene's strict-admissibility margin) away
from the inflated obstacles, using exact segment/sphere distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geometry import Scene, is_reference_strictly_admissible, reference_margin, segment_clearance
from .model import LtiModel

log = logging.getLogger(__name__)


class PlanningError(RuntimeError):
    """No path found within the planner budget."""


@dataclass(frozen=True)
class RrtStarConfig:
    max_iters: int = 1500
    step_size: float = 0.3
    goal_bias: float = 0.1
    rewire_radius: float = 0.6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.step_size > 0 and self.rewire_radius > 0):
            raise ValueError("step_size and rewire_radius must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be in [0, 1]")


@dataclass(frozen=True)
class PotentialFieldConfig:
    attractive_gain: float = 1.0
    repulsive_gain: float = 0.05
    influence_distance: float = 0.5
    step_size: float = 0.02
    max_steps: int = 2000
    stall_window: int = 100

    def __post_init__(self):
        for name in ("attractive_gain", "repulsive_gain", "influence_distance", "step_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "rrt_star"
    seed: int = 0
    rrt: RrtStarConfig = field(default_factory=RrtStarConfig)
    pf: PotentialFieldConfig = field(default_factory=PotentialFieldConfig)
    clearance: Optional[float] = None
    bounds_padding: float = 1.0
    shortcut: bool = True
    max_segment: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("rrt_star", "potential_field"):
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.clearance is not None and not self.clearance > 0:
            raise ValueError("clearance must be positive")
        if self.max_segment is not None and not self.max_segment > 0:
            raise ValueError("max_segment must be positive")


class PiecewisePath:
    """Polyline ``p: [0, 1] -> R^n`` parameterized by normalized arc length."""

    def __init__(self, waypoints, raw_length: Optional[float] = None):
        wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if wp.shape[0] < 1:
            raise ValueError("a path needs at least one waypoint")
        self.waypoints = wp
        seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(cum[-1])
        if self.length > 0:
            self.cumulative_lengths = cum / self.length
            self.cumulative_lengths[-1] = 1.0
        else:
            self.cumulative_lengths = np.linspace(0.0, 1.0, wp.shape[0]) if wp.shape[0] > 1 else np.zeros(1)
        self.raw_length = raw_length

    def __len__(self):
        return self.waypoints.shape[0]

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]

    def __call__(self, s) -> np.ndarray:
        return path_eval(self, s)

    def eval_many(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("path parameter must lie in [0, 1]")
        if len(self) == 1:
            return np.repeat(self.waypoints, s.size, axis=0)
        cum = self.cumulative_lengths
        out = np.empty((s.size, self.waypoints.shape[1]))
        for k in range(self.waypoints.shape[1]):
            out[:, k] = np.interp(s, cum, self.waypoints[:, k])
        out[s == 0.0] = self.waypoints[0]
        out[s == 1.0] = self.waypoints[-1]
        return out


def path_eval(path: PiecewisePath, s: float) -> np.ndarray:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"path parameter {s} outside [0, 1]")
    if s == 0.0 or len(path) == 1:
        return path.waypoints[0].copy()
    if s == 1.0:
        return path.waypoints[-1].copy()
    cum = path.cumulative_lengths
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(path) - 2)
    span = cum[i + 1] - cum[i]
    t = 0.0 if span == 0 else (s - cum[i]) / span
    return path.waypoints[i] + t * (path.waypoints[i + 1] - path.waypoints[i])


# -- collision helpers -------------------------------------------------------

class _Checker:
    def __init__(self, scene: Scene, clearance: float):
        self.scene = scene
        self.clearance = clearance
        lo, hi = scene.position_bounds
        self.lo = lo + clearance
        self.hi = hi - clearance

    def point_ok(self, p) -> bool:
        if np.any(p < self.lo) or np.any(p > self.hi):
            return False
        return segment_clearance(self.scene, p, p) >= self.clearance

    def segment_ok(self, a, b) -> bool:
        # the box is convex, so the endpoints decide it
        if not (self._in_box(a) and self._in_box(b)):
            return False
        return segment_clearance(self.scene, a, b) >= self.clearance

    def _in_box(self, p) -> bool:
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


def _anchor(scene: Scene, model: LtiModel, start_pos, clearance: float) -> np.ndarray:
    """``start_pos`` if it is strictly admissible, else the nearest admissible position found
    by pushing it radially out of the offending obstacles."""
    p = np.asarray(start_pos, dtype=float).copy()
    if is_reference_strictly_admissible(scene, model, p):
        return p
    lo, hi = scene.position_bounds
    for _ in range(50):
        p = np.clip(p, lo + clearance, hi - clearance)
        moved = False
        for obs in scene.obstacles:
            d = p - obs.center
            nd = np.linalg.norm(d)
            need = obs.radius + scene.agent_radius + clearance
            if nd < need:
                if nd == 0.0:
                    raise PlanningError("start position is at an obstacle center")
                p = obs.center + d / nd * (need + 1e-9)
                moved = True
        if not moved:
            break
    if not is_reference_strictly_admissible(scene, model, p):
        raise PlanningError("could not find a strictly admissible reference near the start")
    return p


def _sampling_bounds(scene: Scene, start, goal, padding: float, clearance: float):
    pts = [start, goal] + [o.center for o in scene.obstacles]
    lo = np.min(pts, axis=0) - padding
    hi = np.max(pts, axis=0) + padding
    blo, bhi = scene.position_bounds
    return np.maximum(lo, blo + clearance), np.minimum(hi, bhi - clearance)


def rrt_star(checker: _Checker, start, goal, cfg: RrtStarConfig, rng: np.random.Generator, lo, hi):
    """Returns ``(waypoints, best_cost)``; every iteration draws the same random numbers,
    so a longer run with the same seed extends a shorter one."""
    n_max = cfg.max_iters + 1
    dim = start.size
    nodes = np.empty((n_max, dim))
    parent = np.full(n_max, -1, dtype=int)
    cost = np.zeros(n_max)
    children: List[List[int]] = [[] for _ in range(n_max)]
    nodes[0] = start
    n = 1
    goal_nodes: List[int] = []

    def propagate(i, delta):
        stack = list(children[i])
        while stack:
            j = stack.pop()
            cost[j] -= delta
            stack.extend(children[j])

    if checker.segment_ok(start, goal):
        goal_nodes.append(0)
    for _ in range(cfg.max_iters):
        bias = rng.random()
        sample = rng.uniform(lo, hi)
        if bias < cfg.goal_bias:
            sample = goal
        d = np.linalg.norm(nodes[:n] - sample, axis=1)
        near_i = int(np.argmin(d))
        if d[near_i] == 0.0:
            continue
        step = min(cfg.step_size, d[near_i])
        new = nodes[near_i] + (sample - nodes[near_i]) * (step / d[near_i])
        if not checker.point_ok(new):
            continue
        dn = np.linalg.norm(nodes[:n] - new, axis=1)
        near = np.flatnonzero(dn <= cfg.rewire_radius)
        order = near[np.argsort(cost[near] + dn[near], kind="stable")]
        best = -1
        for j in order:
            if checker.segment_ok(nodes[j], new):
                best = int(j)
                break
        if best < 0:
            continue
        k = n
        n += 1
        nodes[k] = new
        parent[k] = best
        cost[k] = cost[best] + dn[best]
        children[best].append(k)
        for j in near:
            if j == best:
                continue
            c_new = cost[k] + dn[j]
            if c_new < cost[j] - 1e-12 and checker.segment_ok(new, nodes[j]):
                delta = cost[j] - c_new
                children[parent[j]].remove(j)
                parent[j] = k
                children[k].append(j)
                cost[j] = c_new
                propagate(j, delta)
        if np.linalg.norm(goal - new) <= cfg.step_size and checker.segment_ok(new, goal):
            goal_nodes.append(k)
    if not goal_nodes:
        raise PlanningError("no path found")
    totals = [cost[i] + np.linalg.norm(goal - nodes[i]) for i in goal_nodes]
    b = goal_nodes[int(np.argmin(totals))]
    chain = []
    while b >= 0:
        chain.append(nodes[b])
        b = parent[b]
    wp = np.array(chain[::-1] + [goal])
    return wp, float(min(totals))


def potential_field(checker: _Checker, start, goal, cfg: PotentialFieldConfig):
    """Normalized gradient descent on attractive + repulsive potentials.

    Raises :class:`PlanningError` on a local minimum (no progress over
    ``stall_window`` steps) or when ``max_steps`` runs out.
    """
    scene = checker.scene
    C = scene.centers
    radii = scene.keepout_radii + checker.clearance
    p = start.copy()
    pts = [p.copy()]
    best = np.linalg.norm(goal - p)
    best_step = 0
    for k in range(cfg.max_steps):
        to_goal = goal - p
        dist_goal = np.linalg.norm(to_goal)
        if dist_goal <= cfg.step_size:
            if checker.segment_ok(p, goal):
                pts.append(goal.copy())
                return np.array(pts)
        force = cfg.attractive_gain * to_goal / max(dist_goal, 1.0)
        if C.size:
            diff = p - C
            dist = np.linalg.norm(diff, axis=1)
            rho = np.maximum(dist - radii, 1e-6)
            act = rho < cfg.influence_distance
            if np.any(act):
                mag = cfg.repulsive_gain * (1.0 / rho[act] - 1.0 / cfg.influence_distance) / rho[act] ** 2
                force = force + np.sum(mag[:, None] * diff[act] / dist[act, None], axis=0)
        nf = np.linalg.norm(force)
        if nf < 1e-12:
            raise PlanningError("no path found: potential field local minimum")
        step = cfg.step_size
        nxt = p + force / nf * step
        while not checker.segment_ok(p, nxt):
            step *= 0.5
            if step < 1e-6:
                raise PlanningError("no path found: potential field stuck at an obstacle")
            nxt = p + force / nf * step
        p = nxt
        pts.append(p.copy())
        dg = np.linalg.norm(goal - p)
        if dg < best - 1e-9:
            best, best_step = dg, k
        elif k - best_step > cfg.stall_window:
            raise PlanningError("no path found: potential field local minimum")
    raise PlanningError("no path found: potential field step budget exhausted")


def shortcut(checker: _Checker, wp: np.ndarray) -> np.ndarray:
    """Greedy shortcutting: from each kept waypoint jump to the farthest visible one."""
    out = [wp[0]]
    i = 0
    last = len(wp) - 1
    while i < last:
        j = last
        while j > i + 1 and not checker.segment_ok(wp[i], wp[j]):
            j -= 1
        out.append(wp[j])
        i = j
    return np.array(out)


def resample(wp: np.ndarray, max_segment: float) -> np.ndarray:
    out = [wp[0]]
    for a, b in zip(wp[:-1], wp[1:]):
        k = max(1, int(np.ceil(np.linalg.norm(b - a) / max_segment)))
        for t in range(1, k + 1):
            out.append(a + (b - a) * t / k)
    return np.array(out)


def plan(scene: Scene, model: LtiModel, start_pos, goal_ref, cfg: PlannerConfig) -> PiecewisePath:
    """Plan a collision-free path from (near) ``start_pos`` to ``goal_ref``."""
    goal = np.asarray(goal_ref, dtype=float)
    if not is_reference_strictly_admissible(scene, model, goal):
        raise ValueError("goal reference is not strictly admissible")
    start_pos = np.asarray(start_pos, dtype=float)
    lo, hi = scene.position_bounds
    if np.any(start_pos < lo) or np.any(start_pos > hi):
        raise ValueError("start position lies outside the state box")
    clearance = max(cfg.clearance or scene.epsilon, scene.epsilon)
    start = _anchor(scene, model, start_pos, scene.epsilon)
    # the anchor and goal may sit closer to obstacles than the planning clearance
    checker = _EndpointChecker(_Checker(scene, clearance), _Checker(scene, scene.epsilon), start, goal)
    if np.allclose(start, goal) or checker.segment_ok(start, goal):
        wp = np.array([start, goal])
        raw_len = float(np.linalg.norm(goal - start))
    elif cfg.kind == "rrt_star":
        rng = np.random.default_rng(cfg.seed)
        slo, shi = _sampling_bounds(scene, start, goal, cfg.bounds_padding, clearance)
        wp, raw_len = rrt_star(checker, start, goal, cfg.rrt, rng, slo, shi)
    else:
        wp = potential_field(checker, start, goal, cfg.pf)
        raw_len = float(np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1)))
    if cfg.shortcut and len(wp) > 2:
        wp = shortcut(checker, wp)
    if cfg.max_segment is not None:
        wp = resample(wp, cfg.max_segment)
    path = PiecewisePath(wp, raw_length=raw_len)
    bad = [i for i, w in enumerate(path.waypoints) if not is_reference_strictly_admissible(scene, model, w)]
    if bad:
        raise PlanningError(f"planner produced inadmissible waypoints {bad}")
    return path


class _EndpointChecker(_Checker):
    """Planning clearance everywhere except on segments touching the start or goal,
    which only need the admissibility margin (the endpoints themselves may be
    closer than the planning clearance)."""

    def __init__(self, strict: _Checker, loose: _Checker, start, goal):
        self.scene = strict.scene
        self.clearance = strict.clearance
        self.lo, self.hi = strict.lo, strict.hi
        self._strict, self._loose = strict, loose
        self._ends = (np.asarray(start), np.asarray(goal))

    def _is_end(self, p) -> bool:
        return any(np.array_equal(p, e) for e in self._ends)

    def point_ok(self, p) -> bool:
        return (self._loose if self._is_end(p) else self._strict).point_ok(p)

    def segment_ok(self, a, b) -> bool:
        if self._is_end(a) or self._is_end(b):
            return self._loose.segment_ok(a, b)
        return self._strict.segment_ok(a, b)


# -- validation --------------------------------------------------------------

@dataclass
class PathReport:
    waypoint_admissible: List[bool]
    dense_worst_margin: float
    dense_ok: bool
    gamma_ok: Optional[bool]
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.waypoint_admissible) and self.dense_ok and self.gamma_ok is not False

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "waypoint_admissible": self.waypoint_admissible,
            "dense_worst_margin": self.dense_worst_margin,
            "dense_ok": self.dense_ok,
            "gamma_ok": self.gamma_ok,
            "failures": self.failures,
        }


def validate_path(path: PiecewisePath, scene: Scene, model: LtiModel, spec=None, x0=None,
                  ds: float = 1e-3) -> PathReport:
    """Check waypoint and dense-sample strict admissibility and, when an OCP spec
    and initial state are given, that ``(x0, p(0))`` is OCP-feasible."""
    from .mpc import is_feasible

    wp_ok = [bool(is_reference_strictly_admissible(scene, model, w)) for w in path.waypoints]
    s = np.linspace(0.0, 1.0, int(round(1.0 / ds)) + 1)
    pts = path.eval_many(s)
    margins = np.array([reference_margin(scene, model, p) for p in pts])
    worst = float(np.min(margins))
    dense_ok = worst >= scene.epsilon
    failures = [f"waypoint {i} not strictly admissible" for i, ok in enumerate(wp_ok) if not ok]
    if not dense_ok:
        failures.append(f"path sample at s={s[int(np.argmin(margins))]:.3f} has margin {worst:.4g}")
    gamma_ok = None
    if spec is not None and x0 is not None:
        gamma_ok = bool(wp_ok[0] and is_feasible(spec, x0, path.waypoints[0]))
        if not gamma_ok:
            failures.append("initial state cannot reach the terminal set of p(0)")
    return PathReport(wp_ok, worst, dense_ok, gamma_ok, failures)
