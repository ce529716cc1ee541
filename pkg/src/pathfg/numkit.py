"""Dense numerical kernels: an operator-splitting QP solver and a DARE solver.

The QP solver follows the usual OSQP recipe (Ruiz equilibration, relaxed ADMM
with adaptive step size, infeasibility certificates from successive dual
iterates) on small dense problems, and finishes with an active-set Newton
polish so that returned solutions satisfy the KKT conditions to near machine
precision. Besides linear rows it accepts Euclidean ball constraints
``||M x - c|| <= radius``; the projection onto a ball is closed form, which is
what makes an ellipsoidal terminal constraint cheap to impose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "BallConstraint",
    "QpProblem",
    "QpSolution",
    "DareError",
    "solve_qp",
    "solve_dare",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


def _as_matrix(a, n_cols: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n_cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n_cols))
    return a


def _as_vector(v) -> np.ndarray:
    if v is None:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


@dataclass(frozen=True)
class BallConstraint:
    """The convex set ``{x : ||rows @ x - center|| <= radius}``."""

    rows: np.ndarray
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "rows", np.atleast_2d(np.asarray(self.rows, dtype=float)))
        object.__setattr__(self, "center", _as_vector(self.center))
        if self.rows.shape[0] != self.center.size:
            raise ValueError("ball rows and center have mismatched lengths")
        if not self.radius >= 0.0:
            raise ValueError("ball radius must be non-negative")


@dataclass(frozen=True)
class QpProblem:
    """``min 0.5 x'Hx + q'x  s.t.  G x <= h,  E x = e,  x in every ball``."""

    hessian: np.ndarray
    linear_term: np.ndarray
    ineq_rows: Optional[np.ndarray] = None
    ineq_rhs: Optional[np.ndarray] = None
    eq_rows: Optional[np.ndarray] = None
    eq_rhs: Optional[np.ndarray] = None
    balls: Sequence[BallConstraint] = ()

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        q = _as_vector(self.linear_term)
        n = q.size
        if H.shape != (n, n):
            raise ValueError(f"hessian shape {H.shape} does not match linear term of length {n}")
        G = _as_matrix(self.ineq_rows, n)
        h = _as_vector(self.ineq_rhs)
        E = _as_matrix(self.eq_rows, n)
        e = _as_vector(self.eq_rhs)
        if G.shape[1] != n or G.shape[0] != h.size:
            raise ValueError("inequality rows/rhs dimension mismatch")
        if E.shape[1] != n or E.shape[0] != e.size:
            raise ValueError("equality rows/rhs dimension mismatch")
        for ball in self.balls:
            if ball.rows.shape[1] != n:
                raise ValueError("ball rows dimension mismatch")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-9:
            raise ValueError("hessian is not symmetric")
        if n and np.linalg.eigvalsh(0.5 * (H + H.T))[0] < -1e-9:
            raise ValueError("hessian is not positive semidefinite")
        object.__setattr__(self, "hessian", 0.5 * (H + H.T))
        object.__setattr__(self, "linear_term", q)
        object.__setattr__(self, "ineq_rows", G)
        object.__setattr__(self, "ineq_rhs", h)
        object.__setattr__(self, "eq_rows", E)
        object.__setattr__(self, "eq_rhs", e)
        object.__setattr__(self, "balls", tuple(self.balls))

    @property
    def n(self) -> int:
        return self.linear_term.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.hessian @ x + self.linear_term @ x)

    def kkt_residuals(self, x, dual_ineq, dual_eq, dual_ball=()) -> dict:
        """Absolute KKT residuals of a primal/dual pair.

        ``dual_ball`` holds one multiplier per ball for ``||Mx - c|| - radius <= 0``.
        """
        G, h, E, e = self.ineq_rows, self.ineq_rhs, self.eq_rows, self.eq_rhs
        grad = self.hessian @ x + self.linear_term + G.T @ dual_ineq + E.T @ dual_eq
        prim = [np.max(np.maximum(G @ x - h, 0.0), initial=0.0),
                np.max(np.abs(E @ x - e), initial=0.0)]
        comp = [np.max(np.abs(dual_ineq * (h - G @ x)), initial=0.0)]
        dual = [np.max(np.maximum(-dual_ineq, 0.0), initial=0.0)]
        for ball, mu in zip(self.balls, dual_ball):
            v = ball.rows @ x - ball.center
            nv = np.linalg.norm(v)
            if nv > 0.0:
                grad = grad + mu * ball.rows.T @ (v / nv)
            prim.append(max(nv - ball.radius, 0.0))
            comp.append(abs(mu * (ball.radius - nv)))
            dual.append(max(-mu, 0.0))
        return {
            "stationarity": float(np.max(np.abs(grad), initial=0.0)),
            "primal": float(max(prim)),
            "dual": float(max(dual)),
            "complementarity": float(max(comp)),
        }


@dataclass(frozen=True)
class QpSolution:
    primal: np.ndarray
    dual_ineq: np.ndarray
    dual_eq: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    polished: bool = False
    dual_ball: np.ndarray = field(default_factory=lambda: np.zeros(0))
    infeasibility_residual: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Admm:
    """Relaxed ADMM on ``min 0.5x'Px + q'x  s.t.  Ax = z, z in C``.

    ``C`` is a product of intervals ``[l_i, u_i]`` (rows ``0..m_lin``) and balls
    (the remaining row blocks). Everything here works on the scaled problem.
    """

    sigma = 1e-6
    alpha = 1.6
    rho_eq_factor = 1e3

    def __init__(self, prob: QpProblem, rho0: float = 0.1, scaling_iters: int = 10):
        n = prob.n
        G, h, E, e = prob.ineq_rows, prob.ineq_rhs, prob.eq_rows, prob.eq_rhs
        blocks = [b.rows for b in prob.balls]
        self.A0 = np.vstack([G, E] + blocks) if (G.size or E.size or blocks) else np.zeros((0, n))
        self.l0 = np.concatenate([np.full(h.size, -np.inf), e] + [np.full(b.rows.shape[0], -np.inf) for b in prob.balls])
        self.u0 = np.concatenate([h, e] + [np.full(b.rows.shape[0], np.inf) for b in prob.balls])
        self.m_lin = h.size + e.size
        self.ball_slices = []
        start = self.m_lin
        for b in prob.balls:
            stop = start + b.rows.shape[0]
            self.ball_slices.append(slice(start, stop))
            start = stop
        self.prob = prob
        self.n = n
        self.m = self.A0.shape[0]
        self.x_lo, self.x_hi = _implied_bounds(G, h, n)
        self._scale(scaling_iters)
        is_eq = np.zeros(self.m, dtype=bool)
        is_eq[h.size:self.m_lin] = True
        self.is_eq = is_eq
        self.rho = rho0
        self._factor()

    # -- scaling ---------------------------------------------------------
    def _scale(self, iters: int):
        P = self.prob.hessian.copy()
        q = self.prob.linear_term.copy()
        A = self.A0.copy()
        n, m = self.n, self.m
        D = np.ones(n)
        Es = np.ones(m)
        for _ in range(iters):
            col = np.max(np.abs(np.vstack([P, A])), axis=0) if (n and (m or P.size)) else np.ones(n)
            d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            if m:
                row = np.max(np.abs(A), axis=1)
                row = np.clip(row, 1e-4, 1e4)
                er = 1.0 / np.sqrt(row)
                for sl in self.ball_slices:
                    er[sl] = np.exp(np.mean(np.log(er[sl])))
            else:
                er = np.ones(0)
            P = d[:, None] * P * d[None, :]
            q = d * q
            A = er[:, None] * A * d[None, :]
            D *= d
            Es *= er
        pnorm = np.mean(np.max(np.abs(P), axis=0)) if n else 1.0
        c = 1.0 / np.clip(max(pnorm, np.max(np.abs(q), initial=0.0)), 1e-4, 1e4)
        self.D, self.E, self.c = D, Es, c
        self.P = c * P
        self.q = c * q
        self.A = A
        self.l = Es * self.l0
        self.u = Es * self.u0
        self.ball_center = []
        self.ball_radius = []
        for sl, b in zip(self.ball_slices, self.prob.balls):
            s = Es[sl][0]
            self.ball_center.append(s * b.center)
            self.ball_radius.append(s * b.radius)

    def _rho_vec(self):
        r = np.full(self.m, self.rho)
        r[self.is_eq] *= self.rho_eq_factor
        return r

    def _factor(self):
        self.rho_vec = self._rho_vec()
        K = self.P + self.sigma * np.eye(self.n) + self.A.T @ (self.rho_vec[:, None] * self.A)
        self.chol = scipy.linalg.cho_factor(K, lower=True, check_finite=False)

    def project(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[: self.m_lin] = np.clip(v[: self.m_lin], self.l[: self.m_lin], self.u[: self.m_lin])
        for sl, c, r in zip(self.ball_slices, self.ball_center, self.ball_radius):
            w = v[sl] - c
            nw = np.linalg.norm(w)
            out[sl] = v[sl] if nw <= r else c + w * (r / nw)
        return out

    # -- unscaling -------------------------------------------------------
    def unscaled(self, x, z, y):
        return self.D * x, z / self.E if self.m else z, self.E * y / self.c if self.m else y

    def support(self, dy: np.ndarray) -> float:
        """Support function of ``C`` (unscaled) evaluated at ``dy``."""
        ml = self.m_lin
        lin = dy[:ml]
        u, l = self.u0[:ml], self.l0[:ml]
        pos, neg = lin > 0, lin < 0
        if np.any(np.isinf(u[pos])) or np.any(np.isinf(l[neg])):
            return np.inf
        val = float(np.sum(u[pos] * lin[pos]) + np.sum(l[neg] * lin[neg]))
        for sl, b in zip(self.ball_slices, self.prob.balls):
            val += float(b.center @ dy[sl] + b.radius * np.linalg.norm(dy[sl]))
        return val


def _implied_bounds(G: np.ndarray, h: np.ndarray, n: int):
    """Variable bounds implied by single-variable inequality rows (``+-inf`` elsewhere)."""
    lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
    if not G.size:
        return lo, hi
    nz = G != 0.0
    single = np.flatnonzero(np.sum(nz, axis=1) == 1)
    for i in single:
        j = int(np.flatnonzero(nz[i])[0])
        b = h[i] / G[i, j]
        if G[i, j] > 0:
            hi[j] = min(hi[j], b)
        else:
            lo[j] = max(lo[j], b)
    return lo, hi


def _box_min(g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """``min g'x`` over the box ``[lo, hi]`` (may be ``-inf``)."""
    with np.errstate(invalid="ignore"):
        terms = np.where(g > 0, g * lo, np.where(g < 0, g * hi, 0.0))
    return float(np.sum(terms))


def _solve_kkt(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        sol = np.linalg.solve(K, rhs)
        if np.all(np.isfinite(sol)):
            return sol
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def _polish(prob: QpProblem, x, y, z, m_ineq: int, m_eq: int, ball_slices, tol: float):
    """Active-set Newton polish of an ADMM iterate (unscaled quantities).

    Returns ``(x, dual_ineq, dual_eq, dual_ball)`` or ``None`` if the guessed
    active set does not yield a KKT point within ``tol``.
    """
    G, h, E, e = prob.ineq_rows, prob.ineq_rhs, prob.eq_rows, prob.eq_rhs
    n = prob.n
    y_in = y[:m_ineq]
    act = np.flatnonzero(h - z[:m_ineq] < y_in) if m_ineq else np.zeros(0, dtype=int)
    active_balls = []
    for k, (sl, b) in enumerate(zip(ball_slices, prob.balls)):
        yb = y[sl]
        if b.radius - np.linalg.norm(z[sl] - b.center) < np.linalg.norm(yb):
            active_balls.append(k)
    A_act = np.vstack([G[act], E]) if act.size or m_eq else np.zeros((0, n))
    b_act = np.concatenate([h[act], e])
    na = A_act.shape[0]
    nb = len(active_balls)
    mus = np.array([np.linalg.norm(y[ball_slices[k]]) / max(prob.balls[k].radius, 1e-12) for k in active_balls])
    lam = np.zeros(na)
    H, q = prob.hessian, prob.linear_term
    xk = x.copy()
    scale = 1.0 + max(np.max(np.abs(q), initial=0.0), np.max(np.abs(b_act), initial=0.0))
    for _ in range(30 if nb else 1):
        Hl = H.copy()
        grad = H @ xk + q
        cons = []
        jac = []
        for j, k in enumerate(active_balls):
            b = prob.balls[k]
            v = b.rows @ xk - b.center
            Hl += mus[j] * b.rows.T @ b.rows
            grad = grad + mus[j] * b.rows.T @ v
            cons.append(0.5 * (v @ v - b.radius ** 2))
            jac.append(b.rows.T @ v)
        Jb = np.array(jac).reshape(nb, n)
        K = np.zeros((n + na + nb, n + na + nb))
        K[:n, :n] = Hl
        K[:n, n:n + na] = A_act.T
        K[n:n + na, :n] = A_act
        K[:n, n + na:] = Jb.T
        K[n + na:, :n] = Jb
        if nb:
            F = np.concatenate([grad + A_act.T @ lam, A_act @ xk - b_act, np.array(cons)])
            step = _solve_kkt(K, -F)
            xk = xk + step[:n]
            lam = lam + step[n:n + na]
            mus = mus + step[n + na:]
            if np.max(np.abs(step), initial=0.0) <= 1e-14 * scale:
                break
        else:
            sol = _solve_kkt(K, np.concatenate([-q, b_act]))
            xk = sol[:n]
            lam = sol[n:]
    if not np.all(np.isfinite(xk)):
        return None
    dual_ineq = np.zeros(m_ineq)
    dual_ineq[act] = lam[: act.size]
    dual_eq = lam[act.size:]
    dual_ball = np.zeros(len(prob.balls))
    for j, k in enumerate(active_balls):
        b = prob.balls[k]
        dual_ball[k] = mus[j] * np.linalg.norm(b.rows @ xk - b.center)
    res = prob.kkt_residuals(xk, dual_ineq, dual_eq, dual_ball)
    ok_scale = tol * scale
    if all(v <= ok_scale for v in res.values()):
        return xk, dual_ineq, dual_eq, dual_ball
    return None


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 20_000,
             initial_primal: Optional[np.ndarray] = None, polish: bool = True,
             check_every: int = 25) -> QpSolution:
    """Solve a convex QP with optional ball constraints.

    Parameters
    ----------
    problem : QpProblem
    tol : float
        Absolute/relative tolerance on the ADMM residuals and on the KKT
        residuals of a polished point (relative to ``1 + max(|q|, |b|)``).
    max_iter : int
        ADMM iteration cap.
    initial_primal : array, optional
        Primal warm start; duals always start at zero.

    Returns
    -------
    QpSolution
        ``status`` is ``"optimal"``, ``"infeasible"`` (with the certificate
        residual in ``infeasibility_residual``), ``"unbounded"`` or
        ``"max_iter"``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    prob = problem
    n = prob.n
    m_ineq, m_eq = prob.ineq_rhs.size, prob.eq_rhs.size
    if n == 0:
        return QpSolution(np.zeros(0), np.zeros(m_ineq), np.zeros(m_eq), 0.0, OPTIMAL)

    admm = _Admm(prob)
    m = admm.m
    if m == 0:
        x = scipy.linalg.lstsq(prob.hessian, -prob.linear_term)[0]
        if np.max(np.abs(prob.hessian @ x + prob.linear_term)) > tol * (1 + np.max(np.abs(prob.linear_term))):
            return QpSolution(x, np.zeros(0), np.zeros(0), -np.inf, UNBOUNDED)
        return QpSolution(x, np.zeros(0), np.zeros(0), prob.objective(x), OPTIMAL, polished=True)

    x = np.zeros(n) if initial_primal is None else np.asarray(initial_primal, float) / admm.D
    z = admm.project(admm.A @ x)
    y = np.zeros(m)
    eps_inf = 1e-5
    last_x, last_y = x.copy(), y.copy()
    sol_cache = None
    it = 0
    for it in range(1, max_iter + 1):
        rhs = admm.sigma * x - admm.q + admm.A.T @ (admm.rho_vec * z - y)
        xt = scipy.linalg.cho_solve(admm.chol, rhs, check_finite=False)
        zt = admm.A @ xt
        x_new = admm.alpha * xt + (1 - admm.alpha) * x
        zr = admm.alpha * zt + (1 - admm.alpha) * z
        z_new = admm.project(zr + y / admm.rho_vec)
        y_new = y + admm.rho_vec * (zr - z_new)
        dx, dy = x_new - x, y_new - y
        x, z, y = x_new, z_new, y_new

        if it % check_every and it != max_iter:
            continue

        xu, zu, yu = admm.unscaled(x, z, y)
        Ax = admm.A0 @ xu
        r_prim = np.max(np.abs(Ax - zu), initial=0.0)
        Px = prob.hessian @ xu
        ATy = admm.A0.T @ yu
        r_dual = np.max(np.abs(Px + prob.linear_term + ATy), initial=0.0)
        e_prim = tol + tol * max(np.max(np.abs(Ax)), np.max(np.abs(zu)))
        e_dual = tol + tol * max(np.max(np.abs(Px)), np.max(np.abs(ATy)), np.max(np.abs(prob.linear_term)))

        # infeasibility certificates from the last dual / primal increments
        dyu = admm.E * (y - last_y) / admm.c
        # drop components that point along an infinite bound (polar of the recession cone)
        ml = admm.m_lin
        lin = dyu[:ml]
        lin = np.where(np.isinf(admm.u0[:ml]) & (lin > 0), 0.0, lin)
        dyu = np.concatenate([np.where(np.isinf(admm.l0[:ml]) & (lin < 0), 0.0, lin), dyu[ml:]])
        ny = np.max(np.abs(dyu))
        if ny > 1e-10:
            g = admm.A0.T @ dyu / ny
            cert = np.max(np.abs(g))
            supp = admm.support(dyu) / ny
            # every feasible x has g'x <= supp; a box on x can rule that out outright
            boxed = supp < _box_min(g, admm.x_lo, admm.x_hi) - 1e-9 * (1.0 + abs(supp))
            if (cert <= eps_inf and supp < -eps_inf) or boxed:
                return QpSolution(xu, np.zeros(m_ineq), np.zeros(m_eq), np.inf, INFEASIBLE,
                                  iterations=it, infeasibility_residual=float(cert))
        dxu = admm.D * (x - last_x)
        nx = np.max(np.abs(dxu))
        if nx > 1e-10:
            Adx = admm.A0 @ dxu / nx
            ok_rec = np.all(np.where(np.isfinite(admm.u0), Adx <= eps_inf, True)) and \
                np.all(np.where(np.isfinite(admm.l0), Adx >= -eps_inf, True))
            for sl in admm.ball_slices:
                ok_rec = ok_rec and np.max(np.abs(Adx[sl])) <= eps_inf
            if ok_rec and np.max(np.abs(prob.hessian @ dxu)) / nx <= eps_inf and \
                    prob.linear_term @ dxu / nx < -eps_inf:
                return QpSolution(xu, np.zeros(m_ineq), np.zeros(m_eq), -np.inf, UNBOUNDED, iterations=it)
        last_x, last_y = x.copy(), y.copy()

        if polish:
            pol = _polish(prob, xu, yu, zu, m_ineq, m_eq, admm.ball_slices, tol)
            if pol is not None:
                xp, di, de, db = pol
                return QpSolution(xp, di, de, prob.objective(xp), OPTIMAL, iterations=it,
                                  polished=True, dual_ball=db)

        if r_prim <= e_prim and r_dual <= e_dual:
            sol_cache = (xu, yu)
            break

        # adapt the step size
        num = r_prim / max(np.max(np.abs(Ax)), np.max(np.abs(zu)), 1e-10)
        den = r_dual / max(np.max(np.abs(Px)), np.max(np.abs(ATy)), np.max(np.abs(prob.linear_term)), 1e-10)
        new_rho = admm.rho * np.sqrt(num / max(den, 1e-30))
        new_rho = float(np.clip(new_rho, 1e-6, 1e6))
        if new_rho > 5 * admm.rho or new_rho < admm.rho / 5:
            admm.rho = new_rho
            admm._factor()

    if sol_cache is None:
        xu, zu, yu = admm.unscaled(x, z, y)
        return QpSolution(xu, yu[:m_ineq], yu[m_ineq:m_ineq + m_eq], prob.objective(xu), MAX_ITER, iterations=it)
    xu, yu = sol_cache
    dual_ball = np.array([np.linalg.norm(yu[sl]) for sl in admm.ball_slices])
    return QpSolution(xu, np.maximum(yu[:m_ineq], 0.0), yu[m_ineq:m_ineq + m_eq], prob.objective(xu), OPTIMAL,
                      iterations=it, dual_ball=dual_ball)


class DareError(RuntimeError):
    """Raised when the Riccati iteration fails; carries the last residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def dare_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of ``Q + A'PA - A'PB (R + B'PB)^-1 B'PA - P``."""
    S = R + B.T @ P @ B
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
    return float(np.linalg.norm(rhs - P))


def solve_dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 200):
    """Solve the discrete algebraic Riccati equation by structure-preserving doubling.

    Returns ``(P, K)`` with ``K = (R + B'PB)^-1 B'PA`` so that ``u = -K x`` is
    the infinite-horizon LQR law. Iterates from ``P0 = Q``; each doubling step
    squares the horizon, so a few dozen steps reach machine precision.

    Raises
    ------
    DareError
        On non-convergence, a singular ``R + B'PB``, or a closed loop that is
        not Schur stable (the pair is not stabilizable).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
        raise ValueError("dimension mismatch in DARE data")
    if np.linalg.eigvalsh(0.5 * (R + R.T))[0] <= 0:
        raise ValueError("R must be positive definite")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] < -1e-12:
        raise ValueError("Q must be positive semidefinite")

    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    I = np.eye(n)
    delta = np.inf
    for _ in range(max_iter):
        W = I + Gk @ Hk
        try:
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError:
            raise DareError("singular doubling matrix", delta)
        H_next = Hk + Ak.T @ Hk @ WA
        G_next = Gk + Ak @ WG @ Ak.T
        Ak = Ak @ WA
        H_next = 0.5 * (H_next + H_next.T)
        delta = float(np.linalg.norm(H_next - Hk))
        Hk, Gk = H_next, 0.5 * (G_next + G_next.T)
        if not np.all(np.isfinite(Hk)) or np.linalg.norm(Hk) > 1e14:
            raise DareError("Riccati iteration diverged; pair not stabilizable", delta)
        if delta <= tol * max(1.0, np.linalg.norm(Hk)):
            break
    else:
        raise DareError("Riccati iteration did not converge", delta)

    P = Hk
    S = R + B.T @ P @ B
    if np.linalg.cond(S) > 1e14:
        raise DareError("R + B'PB is singular", delta)
    K = np.linalg.solve(S, B.T @ P @ A)
    if np.max(np.abs(np.linalg.eigvals(A - B @ K))) >= 1.0:
        raise DareError("closed loop is not stable; pair not stabilizable", dare_residual(A, B, Q, R, P))
    return P, K
