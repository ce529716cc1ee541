"""Linear tracking MPC with obstacle half-spaces linearized along the previous prediction.

The OCP is condensed onto the input sequence. Stage constraints are imposed on
the predicted states ``1..N-1`` (the first state is fixed and the last one is
governed by the terminal set, which already implies admissibility). The
terminal set ``V(xi_N, r) <= min_i Lambda_i(r)`` is an ellipsoid and is passed
to the QP solver as a ball constraint in ``P^(1/2)`` coordinates.

Two small margins keep solver round-off on the safe side of the true sets:
linear rows are tightened by ``row_tightening`` and the terminal level is
scaled by ``1 - terminal_shrink``. Both preserve recursive feasibility as long
as ``terminal_shrink`` does not exceed ``1 - rho`` (``rho`` the terminal-law
contraction factor) and ``row_tightening`` stays below the margin the
shrunken ellipsoid leaves to every terminal row.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional

import numpy as np
import scipy.linalg

from .geometry import Halfspace, Scene, obstacle_clearances
from .model import LtiModel, equilibrium_for_reference
from .numkit import BallConstraint, QpProblem, solve_qp
from .terminal import TerminalSet

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"


class InfeasibleSolution(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OcpSpec:
    model: LtiModel
    scene: Scene
    terminal: TerminalSet
    N: int
    Q: np.ndarray
    R: np.ndarray
    row_tightening: float = 1e-6
    terminal_shrink: float = 1e-3
    qp_tol: float = 1e-8
    qp_max_iter: int = 20_000

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("horizon must be at least 1")
        for name in ("Q", "R"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if np.max(np.abs(M - M.T)) > 1e-12 or np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, M)
        if self.terminal.Q is not None and self.terminal_shrink > 1.0 - self.terminal.contraction():
            raise ValueError("terminal_shrink exceeds the terminal-law contraction margin")

    @cached_property
    def condensed(self):
        """Prediction matrices with ``xi = Phi x0 + Gamma mu`` (stacked stages ``0..N``)."""
        A, B = self.model.A, self.model.B
        n_x, n_u, N = self.model.n_x, self.model.n_u, self.N
        Phi = np.zeros(((N + 1) * n_x, n_x))
        Gam = np.zeros(((N + 1) * n_x, N * n_u))
        Ak = np.eye(n_x)
        powers = [Ak]
        for i in range(N):
            Ak = A @ Ak
            powers.append(Ak)
        for i in range(N + 1):
            Phi[i * n_x:(i + 1) * n_x] = powers[i]
            for j in range(i):
                Gam[i * n_x:(i + 1) * n_x, j * n_u:(j + 1) * n_u] = powers[i - 1 - j] @ B
        Qbar = scipy.linalg.block_diag(*([self.Q] * N + [self.terminal.P]))
        Rbar = scipy.linalg.block_diag(*([self.R] * N))
        H = 2.0 * (Gam.T @ Qbar @ Gam + Rbar)
        L = np.linalg.cholesky(self.terminal.P)
        return {
            "Phi": Phi, "Gamma": Gam, "Qbar": Qbar, "Rbar": Rbar,
            "H": 0.5 * (H + H.T), "Lt": L.T,
        }


@dataclass
class StagePolytopes:
    """Linear rows ``rows[i] @ x <= rhs[i]`` for each stage ``i = 0..N``."""

    rows: List[np.ndarray]
    rhs: List[np.ndarray]
    points: np.ndarray

    def __len__(self):
        return len(self.rows)

    def halfspaces(self, i: int) -> List[Halfspace]:
        return [Halfspace(c, d) for c, d in zip(self.rows[i], self.rhs[i])]

    def margins(self, i: int, x) -> np.ndarray:
        return self.rhs[i] - self.rows[i] @ x


@dataclass
class OcpSolution:
    xi: np.ndarray
    mu: np.ndarray
    cost: float
    status: str
    solve_time: float = 0.0
    reference: Optional[np.ndarray] = None
    qp_status: str = ""
    qp_iterations: int = 0
    terminal_level: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    @property
    def xi_N(self) -> np.ndarray:
        return self.xi[-1]


def _box_rows(scene: Scene):
    I = np.eye(scene.n_x)
    return np.vstack([I, -I]), np.concatenate([scene.x_max, -scene.x_min])


def polytopes_about_points(spec: OcpSpec, points) -> StagePolytopes:
    """Stage polytopes with obstacles linearized about ``points[i]`` for stage ``i``."""
    scene = spec.scene
    points = np.asarray(points, dtype=float)
    if points.shape != (spec.N + 1, scene.n_x):
        raise ValueError("need one linearization point per stage")
    box_C, box_d = _box_rows(scene)
    rows, rhs = [], []
    if scene.obstacles:
        C = scene.centers
        radii = scene.keepout_radii
        xi = scene.xi_map
    for p in points:
        if scene.obstacles:
            diff = C - xi @ p
            dist = np.linalg.norm(diff, axis=1)
            if np.any(dist == 0.0):
                raise ValueError("degenerate projection: linearization point at an obstacle center")
            n = diff / dist[:, None]
            c_obs = n @ xi
            d_obs = np.einsum("ij,ij->i", n, C) - radii
            rows.append(np.vstack([c_obs, box_C]))
            rhs.append(np.concatenate([d_obs, box_d]))
        else:
            rows.append(box_C.copy())
            rhs.append(box_d.copy())
    return StagePolytopes(rows, rhs, points.copy())


def linearize_constraints(spec: OcpSpec, prev_solution: Optional[OcpSolution], x0) -> StagePolytopes:
    """Stage ``i`` uses ``prev.xi[i + 1]`` (the last point for stage ``N``); without a
    previous solution every stage is linearized about ``x0``."""
    N = spec.N
    if prev_solution is None:
        points = np.tile(np.asarray(x0, dtype=float), (N + 1, 1))
    else:
        if prev_solution.xi.shape[0] != N + 1:
            raise ValueError("previous solution has the wrong horizon")
        idx = np.minimum(np.arange(N + 1) + 1, N)
        points = prev_solution.xi[idx]
    return polytopes_about_points(spec, points)


def _terminal_level(spec: OcpSpec, r) -> float:
    return float(np.min(spec.terminal.thresholds(r)))


def solve_ocp(spec: OcpSpec, x0, r, polytopes: StagePolytopes, warm_start=None) -> OcpSolution:
    """Solve the condensed tracking QP for reference ``r`` from state ``x0``."""
    t0 = time.perf_counter()
    model = spec.model
    n_x, n_u, N = model.n_x, model.n_u, spec.N
    x0 = np.asarray(x0, dtype=float)
    r = np.asarray(r, dtype=float)
    if len(polytopes) != N + 1:
        raise ValueError("polytopes must cover stages 0..N")
    level = _terminal_level(spec, r)
    x_bar, u_bar = equilibrium_for_reference(model, r)
    cd = spec.condensed
    Phi, Gam, Qbar, Rbar = cd["Phi"], cd["Gamma"], cd["Qbar"], cd["Rbar"]
    Xbar = np.tile(x_bar, N + 1)
    Ubar = np.tile(u_bar, N)
    free = Phi @ x0 - Xbar
    q = 2.0 * (Gam.T @ Qbar @ free - Rbar @ Ubar)
    const = float(free @ Qbar @ free + Ubar @ Rbar @ Ubar)

    G_parts, h_parts = [], []
    tight = spec.row_tightening
    for i in range(1, N):
        Ci = polytopes.rows[i]
        sl = slice(i * n_x, (i + 1) * n_x)
        G_parts.append(Ci @ Gam[sl])
        h_parts.append(polytopes.rhs[i] - tight - Ci @ (Phi[sl] @ x0))
    Iu = np.eye(N * n_u)
    G_parts += [Iu, -Iu]
    h_parts += [np.tile(spec.scene.u_max, N) - tight, -np.tile(spec.scene.u_min, N) - tight]
    G = np.vstack(G_parts)
    h = np.concatenate(h_parts)
    Lt = cd["Lt"]
    sl_N = slice(N * n_x, (N + 1) * n_x)
    radius = np.sqrt(max(level * (1.0 - spec.terminal_shrink), 0.0))
    ball = BallConstraint(Lt @ Gam[sl_N], Lt @ (x_bar - Phi[sl_N] @ x0), radius)
    prob = QpProblem(cd["H"], q, G, h, balls=(ball,))
    qp = solve_qp(prob, tol=spec.qp_tol, max_iter=spec.qp_max_iter, initial_primal=warm_start)

    mu = qp.primal.reshape(N, n_u)
    xi = (Phi @ x0 + Gam @ qp.primal).reshape(N + 1, n_x)
    status = FEASIBLE if qp.optimal else INFEASIBLE
    if qp.status not in ("optimal", "infeasible"):
        log.warning("QP ended with status %s after %d iterations", qp.status, qp.iterations)
    cost = qp.objective + const if qp.optimal else np.inf
    sol = OcpSolution(xi=xi, mu=mu, cost=float(cost), status=status, reference=r.copy(),
                      qp_status=qp.status, qp_iterations=qp.iterations, terminal_level=level)
    if sol.feasible:
        violations = verify_solution(spec, sol, polytopes)
        if violations:
            log.warning("OCP solution failed verification: %s", violations)
            sol.status = INFEASIBLE
            sol.info["violations"] = violations
    sol.solve_time = time.perf_counter() - t0
    return sol


def verify_solution(spec: OcpSpec, sol: OcpSolution, polytopes: StagePolytopes, tol: float = 1e-7) -> dict:
    """Exact checks of a candidate against the un-tightened constraints."""
    model, scene = spec.model, spec.scene
    out = {}
    dyn = np.max(np.abs(sol.xi[1:] - (sol.xi[:-1] @ model.A.T + sol.mu @ model.B.T)))
    if dyn > tol:
        out["dynamics"] = float(dyn)
    for i in range(1, spec.N):
        m = np.min(polytopes.margins(i, sol.xi[i]))
        if m < 0:
            out.setdefault("stage_rows", []).append((i, float(m)))
    for i, x in enumerate(sol.xi):
        c = obstacle_clearances(scene, scene.xi_map @ x)
        if c.size and np.min(c) < 0:
            out.setdefault("clearance", []).append((i, float(np.min(c))))
    if np.any(sol.mu > scene.u_max) or np.any(sol.mu < scene.u_min):
        out["input_box"] = True
    V = spec.terminal.V(sol.xi_N, sol.reference)
    if V > sol.terminal_level:
        out["terminal"] = float(V - sol.terminal_level)
    return out


def mpc_feedback(solution: OcpSolution) -> np.ndarray:
    if not solution.feasible:
        raise InfeasibleSolution("MPC feedback requested from an infeasible OCP solution")
    return solution.mu[0].copy()


def shifted_warm_start(spec: OcpSpec, prev: OcpSolution, r) -> np.ndarray:
    """Previous inputs shifted by one with the terminal law appended."""
    x_bar, u_bar = equilibrium_for_reference(spec.model, r)
    u_last = u_bar - spec.terminal.K @ (prev.xi_N - x_bar)
    return np.concatenate([prev.mu[1:].ravel(), u_last])


def solve_bootstrap(spec: OcpSpec, x0, r, points=None) -> OcpSolution:
    """Two-pass solve without a previous trajectory.

    The first pass linearizes about ``points`` (default: ``x0`` at every
    stage); the second re-linearizes every stage about the first solution.
    """
    x0 = np.asarray(x0, dtype=float)
    if points is None:
        first_poly = linearize_constraints(spec, None, x0)
    else:
        first_poly = polytopes_about_points(spec, points)
    first = solve_ocp(spec, x0, r, first_poly)
    if not first.feasible:
        return first
    second = solve_ocp(spec, x0, r, polytopes_about_points(spec, first.xi), warm_start=first.mu.ravel())
    second.solve_time += first.solve_time
    return second


def is_feasible(spec: OcpSpec, x0, r) -> bool:
    """OCP feasibility with obstacles linearized about the straight segment to ``x_bar_r``."""
    x0 = np.asarray(x0, dtype=float)
    x_bar, _ = equilibrium_for_reference(spec.model, r)
    s = np.linspace(0.0, 1.0, spec.N + 1)[:, None]
    points = (1.0 - s) * x0[None, :] + s * x_bar[None, :]
    try:
        return solve_bootstrap(spec, x0, r, points).feasible
    except ValueError:
        return False
