"""Scenario configuration, the closed-loop harness, the horizon study and run outputs."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import jsonschema
import numpy as np

from .geometry import (SphereObstacle, input_margin, is_reference_strictly_admissible, obstacle_clearances,
                       quadrotor_scene, state_margin)
from .governor import GovernorInvariantError, GovernorState, governor_update
from .model import QuadrotorParams, build_quadrotor_model, equilibrium_for_reference
from .mpc import (OcpSpec, linearize_constraints, mpc_feedback, shifted_warm_start, solve_bootstrap,
                  solve_ocp)
from .planner import PiecewisePath, PlannerConfig, PlanningError, PotentialFieldConfig, RrtStarConfig, plan, validate_path
from .terminal import synthesize_terminal_ingredients

log = logging.getLogger(__name__)

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"
INFEASIBLE = "infeasible"
NO_PATH = "no_path"

TRAJECTORY_HEADER = ["k", "t", "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw",
                     "thrust", "wx", "wy", "wz", "s", "ref_x", "ref_y", "ref_z", "err", "cost",
                     "solve_time", "gov_time", "clearance", "feasible"]


SCENES_DIR = Path(__file__).resolve().parent / "scenes"


def scene_path(name: str = "paper_quadrotor") -> Path:
    """Path of a scene shipped with the package."""
    return SCENES_DIR / f"{name}.json"


class ConfigError(ValueError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# -- configuration -----------------------------------------------------------

def _num(minimum=None, exclusive_minimum=None, maximum=None):
    s = {"type": "number"}
    if minimum is not None:
        s["minimum"] = minimum
    if exclusive_minimum is not None:
        s["exclusiveMinimum"] = exclusive_minimum
    if maximum is not None:
        s["maximum"] = maximum
    return s


def _obj(props, required=None):
    return {"type": "object", "properties": props, "required": list(required if required is not None else props),
            "additionalProperties": False}


_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS = _num(exclusive_minimum=0)
_INT1 = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = _obj({
    "name": {"type": "string"},
    "model": _obj({"mass_kg": _POS, "gravity_mps2": _num(), "sample_time_s": _POS}),
    "scene": _obj({
        "position_bound_m": _POS,
        "velocity_bound_mps": _POS,
        "attitude_bound_rad": _POS,
        "thrust_min_N": _num(),
        "thrust_max_N": _num(),
        "rate_bound_radps": _POS,
        "agent_radius_m": _num(minimum=0),
        "epsilon_m": _POS,
        "obstacles": {"type": "array", "items": _obj({"center_m": _VEC3, "radius_m": _POS})},
    }),
    "start": _obj({"position_m": _VEC3, "velocity_mps": _VEC3, "attitude_rad": _VEC3}),
    "goal_position_m": _VEC3,
    "horizon": _INT1,
    "cost": _obj({"q_position": _POS, "q_velocity": _POS, "q_attitude": _POS, "r_scale": _POS}),
    "planner": _obj({
        "kind": {"enum": ["rrt_star", "potential_field"]},
        "clearance_m": _POS,
        "bounds_padding_m": _num(minimum=0),
        "rrt_star": _obj({"max_iters": _INT1, "step_size_m": _POS, "goal_bias": _num(0, None, 1),
                          "rewire_radius_m": _POS}),
        "potential_field": _obj({"attractive_gain": _POS, "repulsive_gain": _POS,
                                 "influence_distance_m": _POS, "step_size_m": _POS,
                                 "max_steps": _INT1, "stall_window": _INT1}),
    }, required=["kind"]),
    "governor": _obj({"grid_step": _num(exclusive_minimum=0, maximum=1), "bisect_tol": _POS}),
    "max_steps": _INT1,
    "seed": {"type": "integer", "minimum": 0},
}, required=["model", "scene", "start", "goal_position_m", "horizon", "cost", "planner", "governor",
             "max_steps"])


@dataclass
class SimConfig:
    params: QuadrotorParams
    obstacles: List[SphereObstacle]
    scene_opts: dict
    x0: np.ndarray
    goal: np.ndarray
    N: int
    Q: np.ndarray
    R: np.ndarray
    planner: PlannerConfig
    grid_step: float = 1e-2
    bisect_tol: float = 1e-4
    max_steps: int = 500
    seed: int = 0
    name: str = "scenario"
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.N < 1:
            raise ValueError("horizon must be at least 1")

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed), planner=replace(self.planner, seed=int(seed)))

    def with_horizon(self, N: int) -> "SimConfig":
        return replace(self, N=int(N))

    def with_planner(self, kind: str) -> "SimConfig":
        return replace(self, planner=replace(self.planner, kind=kind))


def _json_path(err: jsonschema.ValidationError) -> str:
    parts = list(err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(missing)
    if err.validator == "additionalProperties" and "'" in err.message:
        parts.append(err.message.split("'")[1])
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def config_from_dict(data: dict) -> SimConfig:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ConfigError(_json_path(e), e.message)
    m, sc, st, c, pl, gv = (data[k] for k in ("model", "scene", "start", "cost", "planner", "governor"))
    try:
        params = QuadrotorParams(mass=m["mass_kg"], gravity=m["gravity_mps2"], Ts=m["sample_time_s"])
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    obstacles = [SphereObstacle(o["center_m"], o["radius_m"]) for o in sc["obstacles"]]
    scene_opts = dict(thrust_min=sc["thrust_min_N"], thrust_max=sc["thrust_max_N"],
                      rate_max=sc["rate_bound_radps"], pos_max=sc["position_bound_m"],
                      vel_max=sc["velocity_bound_mps"], att_max=sc["attitude_bound_rad"],
                      agent_radius=sc["agent_radius_m"], epsilon=sc["epsilon_m"])
    hover = params.mass * abs(params.gravity)
    if not sc["thrust_min_N"] < hover < sc["thrust_max_N"]:
        raise ConfigError("scene.thrust_max_N", f"hover thrust {hover:.5g} N must lie strictly inside the thrust range")
    x0 = np.concatenate([st["position_m"], st["velocity_mps"], st["attitude_rad"]]).astype(float)
    Q = np.diag([c["q_position"]] * 3 + [c["q_velocity"]] * 3 + [c["q_attitude"]] * 3)
    R = c["r_scale"] * np.eye(4)
    seed = int(data.get("seed", 0))
    rr = pl.get("rrt_star", {})
    pf = pl.get("potential_field", {})
    try:
        rrt_cfg = RrtStarConfig(**{k: v for k, v in dict(
            max_iters=rr.get("max_iters"), step_size=rr.get("step_size_m"), goal_bias=rr.get("goal_bias"),
            rewire_radius=rr.get("rewire_radius_m")).items() if v is not None})
        pf_cfg = PotentialFieldConfig(**{k: v for k, v in dict(
            attractive_gain=pf.get("attractive_gain"), repulsive_gain=pf.get("repulsive_gain"),
            influence_distance=pf.get("influence_distance_m"), step_size=pf.get("step_size_m"),
            max_steps=pf.get("max_steps"), stall_window=pf.get("stall_window")).items() if v is not None})
        planner = PlannerConfig(kind=pl["kind"], seed=seed, rrt=rrt_cfg, pf=pf_cfg,
                                clearance=pl.get("clearance_m"), bounds_padding=pl.get("bounds_padding_m", 1.0))
    except ValueError as exc:
        raise ConfigError("planner", str(exc)) from None
    cfg = SimConfig(params=params, obstacles=obstacles, scene_opts=scene_opts, x0=x0,
                    goal=np.asarray(data["goal_position_m"], dtype=float), N=int(data["horizon"]), Q=Q, R=R,
                    planner=planner, grid_step=float(gv["grid_step"]), bisect_tol=float(gv["bisect_tol"]),
                    max_steps=int(data["max_steps"]), seed=seed, name=data.get("name", "scenario"), raw=data)
    try:
        build_problem(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("scene", str(exc)) from None
    return cfg


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be an object")
    return config_from_dict(data)


@dataclass(eq=False)
class Problem:
    model: object
    scene: object
    terminal: object
    spec: OcpSpec


def build_problem(cfg: SimConfig, N: Optional[int] = None) -> Problem:
    model = build_quadrotor_model(cfg.params)
    scene = quadrotor_scene(cfg.obstacles, mass=cfg.params.mass, gravity=cfg.params.gravity, **cfg.scene_opts)
    margin = state_margin(scene, cfg.x0)
    if margin < 0:
        raise ConfigError("start", f"start state violates the constraints (margin {margin:.4g})")
    if not is_reference_strictly_admissible(scene, model, cfg.goal):
        raise ConfigError("goal_position_m", "goal is not strictly admissible")
    terminal = synthesize_terminal_ingredients(model, scene, cfg.Q, cfg.R)
    spec = OcpSpec(model=model, scene=scene, terminal=terminal, N=int(N or cfg.N), Q=cfg.Q, R=cfg.R)
    return Problem(model, scene, terminal, spec)


# -- closed loop ---------------------------------------------------------------

@dataclass
class StepRecord:
    k: int
    t: float
    x: np.ndarray
    u: np.ndarray
    s: float
    ref: np.ndarray
    err: float
    cost: float
    solve_time: float
    gov_time: float
    clearance: float
    feasible: bool
    gov_evals: int = 0
    state_margin: float = 0.0
    input_margin: float = 0.0


@dataclass
class SimLog:
    records: List[StepRecord]
    verdict: str
    path: Optional[PiecewisePath] = None
    governed: bool = True
    N: int = 0
    Ts: float = 0.1
    message: str = ""
    path_report: Optional[dict] = None
    obstacles: List[SphereObstacle] = field(default_factory=list)
    agent_radius: float = 0.0
    goal: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def converged(self) -> bool:
        return self.verdict == CONVERGED

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def violations(self) -> dict:
        recs = self.records
        return {
            "infeasible_solves": int(sum(not r.feasible for r in recs)),
            "state": int(sum(r.state_margin < 0 for r in recs)),
            "input": int(sum(r.input_margin < 0 for r in recs if r.feasible)),
            "clearance": int(sum(r.clearance < 0 for r in recs)),
        }

    def summary(self) -> dict:
        viol = self.violations()
        solve = self.column("solve_time") if self.records else np.zeros(0)
        gov = self.column("gov_time")[1:] if len(self.records) > 1 else np.zeros(0)
        evals = self.column("gov_evals")[1:] if len(self.records) > 1 else np.zeros(0)

        def stats(a):
            return {"mean": float(np.mean(a)) if a.size else 0.0, "max": float(np.max(a)) if a.size else 0.0}

        return {
            "verdict": self.verdict,
            "message": self.message,
            "governed": self.governed,
            "horizon": self.N,
            "steps": self.steps,
            "convergence_time_s": self.steps * self.Ts if self.converged else None,
            "final_error_m": float(self.records[-1].err) if self.records else None,
            "final_s": float(self.records[-1].s) if self.records else None,
            "solve_time_s": stats(solve),
            "governor_time_s": stats(gov),
            "governor_evaluations": {"mean": stats(evals)["mean"], "max": int(np.max(evals)) if evals.size else 0},
            "violations": viol,
            "violation_count": int(sum(viol.values())),
            "path_waypoints": len(self.path) if self.path is not None else 0,
            "path_length_m": self.path.length if self.path is not None else None,
        }


def _record(k, prob, x, sol, u, s, ref, gov_time, evals):
    scene = prob.scene
    x_bar, _ = equilibrium_for_reference(prob.model, ref)
    clr = obstacle_clearances(scene, scene.xi_map @ x)
    return StepRecord(
        k=k, t=k * prob.model.Ts, x=x.copy(), u=u.copy(), s=float(s), ref=np.asarray(ref, dtype=float).copy(),
        err=float(np.linalg.norm(x - x_bar)), cost=float(sol.cost) if sol is not None else math.nan,
        solve_time=float(sol.solve_time) if sol is not None else 0.0, gov_time=float(gov_time),
        clearance=float(np.min(clr)) if clr.size else math.inf,
        feasible=bool(sol is not None and sol.feasible), gov_evals=int(evals),
        state_margin=state_margin(scene, x), input_margin=input_margin(scene, u),
    )


def run_closed_loop(cfg: SimConfig, governed: bool = True, N: Optional[int] = None,
                    tol: float = 1e-2) -> SimLog:
    """Plan, validate and run the governed (or ungoverned) MPC loop on the nominal plant."""
    prob = build_problem(cfg, N)
    model, spec, ts = prob.model, prob.spec, prob.terminal
    goal = cfg.goal
    x_goal, _ = equilibrium_for_reference(model, goal)
    x = cfg.x0.copy()
    log_kw = dict(governed=governed, N=spec.N, Ts=model.Ts, obstacles=list(cfg.obstacles),
                  agent_radius=prob.scene.agent_radius, goal=goal.copy())
    path = None
    if governed:
        try:
            path = plan(prob.scene, model, model.xi_map @ x, goal, cfg.planner)
        except PlanningError as exc:
            return SimLog([], NO_PATH, message=str(exc), **log_kw)
        report = validate_path(path, prob.scene, model, spec, x)
        if not report.passed:
            return SimLog([], NO_PATH, path=path, message="; ".join(report.failures),
                          path_report=report.to_dict(), **log_kw)
        path_report = report.to_dict()
    else:
        path = PiecewisePath(np.array([goal, goal]))
        path_report = None

    records: List[StepRecord] = []
    gstate = GovernorState(s=0.0 if governed else 1.0)
    prev = None
    verdict, message = BUDGET_EXHAUSTED, ""
    for k in range(cfg.max_steps + 1):
        gov_time, evals = 0.0, 0
        if governed and prev is not None:
            t0 = time.perf_counter()
            try:
                governor_update(ts, path, gstate, prev.xi_N, cfg.grid_step, cfg.bisect_tol)
            except GovernorInvariantError as exc:
                verdict, message = INFEASIBLE, str(exc)
                break
            gov_time = time.perf_counter() - t0
            evals = gstate.evaluations
        s = gstate.s
        ref = path.eval_many(np.array([s]))[0] if governed else goal
        if prev is None:
            sol = solve_bootstrap(spec, x, ref)
        else:
            poly = linearize_constraints(spec, prev, x)
            sol = solve_ocp(spec, x, ref, poly, warm_start=shifted_warm_start(spec, prev, ref))
        u = sol.mu[0].copy() if sol.feasible else np.zeros(model.n_u)
        records.append(_record(k, prob, x, sol, u, s, ref, gov_time, evals))
        if not sol.feasible:
            verdict = INFEASIBLE
            message = f"OCP infeasible at k={k} (QP status {sol.qp_status})"
            break
        if s == 1.0 and np.linalg.norm(x - x_goal) <= tol:
            verdict = CONVERGED
            break
        if k == cfg.max_steps:
            break
        x = model.step(x, mpc_feedback(sol))
        prev = sol
    return SimLog(records, verdict, path=path if governed else None, message=message,
                  path_report=path_report, **log_kw)


def run_horizon_study(cfg: SimConfig, governed_Ns: Sequence[int], ungoverned_Ns: Sequence[int]) -> dict:
    runs = []
    for mode, Ns in (("governed", governed_Ns), ("ungoverned", ungoverned_Ns)):
        for N in Ns:
            t0 = time.perf_counter()
            sim = run_closed_loop(cfg, governed=(mode == "governed"), N=int(N))
            summ = sim.summary()
            runs.append({
                "mode": mode,
                "N": int(N),
                "verdict": sim.verdict,
                "message": sim.message,
                "steps": sim.steps,
                "infeasible_at_k0": bool(sim.verdict == INFEASIBLE and sim.steps == 0),
                "convergence_time_s": summ["convergence_time_s"],
                "mean_solve_time_s": summ["solve_time_s"]["mean"],
                "max_solve_time_s": summ["solve_time_s"]["max"],
                "mean_governor_time_s": summ["governor_time_s"]["mean"] if mode == "governed" else None,
                "max_governor_evaluations": summ["governor_evaluations"]["max"] if mode == "governed" else None,
                "violation_count": summ["violation_count"],
                "wall_time_s": time.perf_counter() - t0,
                "_log": sim,
            })
    return {"scenario": cfg.name, "planner": cfg.planner.kind, "seed": cfg.seed, "runs": runs}


# -- outputs -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_outputs(log_: SimLog, out_dir, wall_times: bool = False) -> List[Path]:
    """Write ``trajectory.csv``, ``timing.csv``, ``path.csv`` and ``summary.json``.

    Wall-clock columns make a CSV differ from run to run, so unless
    ``wall_times`` is set the ``solve_time`` and ``gov_time`` columns of
    ``trajectory.csv`` hold ``nan`` and the measured values go to ``timing.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = out / "trajectory.csv"
    with traj.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for r in log_.records:
            times = (r.solve_time, r.gov_time) if wall_times else (math.nan, math.nan)
            w.writerow([_fmt(v) for v in [r.k, r.t, *r.x, *r.u, r.s, *r.ref, r.err, r.cost,
                                          *times, r.clearance, r.feasible]])
    timing = out / "timing.csv"
    with timing.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "solve_time", "gov_time", "gov_evals"])
        for r in log_.records:
            w.writerow([r.k, _fmt(r.solve_time), _fmt(r.gov_time), r.gov_evals])
    pth = out / "path.csv"
    with pth.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "s", "x", "y", "z"])
        if log_.path is not None:
            for i, (s, p) in enumerate(zip(log_.path.cumulative_lengths, log_.path.waypoints)):
                w.writerow([i, _fmt(s), *(_fmt(v) for v in p)])
    summ = out / "summary.json"
    summ.write_text(json.dumps(log_.summary(), indent=2) + "\n")
    return [traj, timing, pth, summ]


def write_study(report: dict, out_dir, wall_times: bool = False) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for run in report["runs"]:
        sub = out / f"{run['mode']}_N{run['N']}"
        files += write_outputs(run["_log"], sub, wall_times)
    clean = dict(report, runs=[{k: v for k, v in r.items() if k != "_log"} for r in report["runs"]])
    rep = out / "study.json"
    rep.write_text(json.dumps(clean, indent=2) + "\n")
    csvp = out / "study.csv"
    cols = ["mode", "N", "verdict", "steps", "infeasible_at_k0", "convergence_time_s", "mean_solve_time_s",
            "max_solve_time_s", "mean_governor_time_s", "max_governor_evaluations", "violation_count"]
    with csvp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in clean["runs"]:
            w.writerow(["" if r[c] is None else r[c] for c in cols])
    return files + [rep, csvp]
