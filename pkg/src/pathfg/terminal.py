"""Reference-dependent terminal set built from Lyapunov thresholds of linear constraints.

The set is ``{(x, r) : Delta(x, r) <= 0}`` with
``Delta = max_i alpha_i (V(x, r) - Lambda_i(r))``, ``V = ||x - x_bar_r||_P^2`` and
``Lambda_i = (d_i - c_i' x_bar_r)^2 / (c_i' P^-1 c_i)`` for every linear row of
the state box, the input box mapped through the terminal law
``u = u_bar_r - K (x - x_bar_r)``, and the obstacle half-spaces taken at ``x_bar_r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .geometry import Scene, reference_margin
from .model import LtiModel, equilibrium_for_reference
from .numkit import solve_dare


class InadmissibleReference(ValueError):
    pass


def lyapunov_threshold(P, c, d: float, x_bar) -> float:
    """Largest level of ``||x - x_bar||_P^2`` whose sublevel set lies in ``c'x <= d``."""
    c = np.asarray(c, dtype=float)
    if not np.any(c):
        raise ValueError("constraint normal must be nonzero")
    Pinv_c = np.linalg.solve(np.asarray(P, dtype=float), c)
    margin = d - c @ np.asarray(x_bar, dtype=float)
    return float(margin ** 2 / (c @ Pinv_c))


def decrease_residual(A, B, Q, R, P, K) -> np.ndarray:
    """``P - (A-BK)'P(A-BK) - Q - K'RK``; PSD iff the terminal decrease condition holds."""
    Acl = A - B @ K
    M = P - Acl.T @ P @ Acl - Q - K.T @ R @ K
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class TerminalSet:
    P: np.ndarray
    K: np.ndarray
    alphas: np.ndarray
    scene: Scene
    model: LtiModel
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        P = 0.5 * (self.P + self.P.T)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=float))
        if np.any(self.alphas <= 0):
            raise ValueError("alphas must be positive")
        n_rows = len(self.scene.obstacles) + 2 * self.model.n_x + 2 * self.model.n_u
        if self.alphas.shape != (n_rows,):
            raise ValueError(f"expected {n_rows} alphas")
        chol = scipy.linalg.cho_factor(P, lower=True)
        Pinv = scipy.linalg.cho_solve(chol, np.eye(P.shape[0]))
        Pinv = 0.5 * (Pinv + Pinv.T)
        K = self.K
        xi = self.scene.xi_map
        # per-row c' P^-1 c for the rows that do not depend on the reference
        object.__setattr__(self, "_Pinv", Pinv)
        object.__setattr__(self, "_box_w", np.concatenate([np.diag(Pinv), np.diag(Pinv)]))
        kpk = np.einsum("ij,jk,ik->i", K, Pinv, K)
        object.__setattr__(self, "_inp_w", np.concatenate([kpk, kpk]))
        object.__setattr__(self, "_pos_Pinv", xi @ Pinv @ xi.T)
        object.__setattr__(self, "_centers", self.scene.centers)
        object.__setattr__(self, "_keepout", self.scene.keepout_radii)
        # box and input-through-K margins are affine in r: off + map @ r
        scene, model = self.scene, self.model
        Gx, Gu = model.Gx, model.Gu
        object.__setattr__(self, "_lin_off", np.concatenate([scene.x_max, -scene.x_min, scene.u_max, -scene.u_min]))
        object.__setattr__(self, "_lin_map", np.vstack([-Gx, Gx, -Gu, Gu]))
        object.__setattr__(self, "_lin_invw", 1.0 / np.concatenate([self._box_w, self._inp_w]))
        n_obs = len(self.scene.obstacles)
        object.__setattr__(self, "_alpha_obs", self.alphas[:n_obs])
        object.__setattr__(self, "_alpha_lin", self.alphas[n_obs:])
        # plain-float tables for the scalar path; rows that do not depend on r fold into a constant
        var = np.any(self._lin_map != 0.0, axis=1)
        const = self._lin_off[~var] ** 2 * self._lin_invw[~var]
        object.__setattr__(self, "_lin_const_min", float(np.min(const)) if const.size else np.inf)
        object.__setattr__(self, "_fast3", model.n_r == 3 and self.scene.xi_map.shape[0] == 3)
        object.__setattr__(self, "_lin_var", [(float(o), *m.tolist(), float(w)) for o, m, w in
                                              zip(self._lin_off[var], self._lin_map[var], self._lin_invw[var])])
        object.__setattr__(self, "_pos_rows", (self.scene.xi_map @ Gx).tolist())
        object.__setattr__(self, "_pos_Pinv_rows", self._pos_Pinv.tolist())
        object.__setattr__(self, "_obs_list", [(*c, float(k)) for c, k in zip(self._centers.tolist(), self._keepout)])

    @property
    def n_rows(self) -> int:
        return self.alphas.size

    def contraction(self) -> float:
        """Factor ``rho`` with ``V(x+) <= rho V(x)`` along the terminal dynamics."""
        if self.Q is None or self.R is None:
            raise ValueError("stage cost matrices are required")
        W = self.Q + self.K.T @ self.R @ self.K
        lam = scipy.linalg.eigh(0.5 * (W + W.T), self.P, eigvals_only=True)[0]
        return float(max(0.0, 1.0 - lam))

    def equilibrium(self, r):
        return equilibrium_for_reference(self.model, r)

    def V(self, x, r) -> float:
        x_bar, _ = self.equilibrium(r)
        e = np.asarray(x, dtype=float) - x_bar
        return float(e @ self.P @ e)

    def _check_reference(self, r):
        if reference_margin(self.scene, self.model, r) < self.scene.epsilon:
            raise InadmissibleReference(f"reference {np.asarray(r)} is not strictly admissible")

    def thresholds(self, r) -> np.ndarray:
        """``Lambda_i(r)`` for every row, in the order of :func:`constraint_rows_for_reference`."""
        self._check_reference(r)
        return self._thresholds_batch(np.atleast_2d(np.asarray(r, dtype=float)))[0]

    def _thresholds_batch(self, refs: np.ndarray) -> np.ndarray:
        """Thresholds for a stack of references (one per row); no admissibility check."""
        return np.hstack(self._threshold_parts(refs))

    def _threshold_parts(self, refs: np.ndarray):
        """Obstacle thresholds and box/input thresholds, each ``(batch, rows)``."""
        x_bar = refs @ self.model.Gx.T
        lin = self._lin_off[None, :] + refs @ self._lin_map.T
        lam_lin = lin * lin * self._lin_invw[None, :]
        if not self._centers.size:
            return [lam_lin]
        pos = x_bar @ self.scene.xi_map.T
        diff = self._centers[None, :, :] - pos[:, None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        n = diff / dist[:, :, None]
        w = np.sum((n @ self._pos_Pinv) * n, axis=2)
        margin = dist - self._keepout[None, :]
        return [margin * margin / w, lam_lin]

    def delta_batch(self, x, refs) -> np.ndarray:
        """``Delta(x, r)`` for each row ``r`` of ``refs``."""
        refs = np.atleast_2d(np.asarray(refs, dtype=float))
        x = np.asarray(x, dtype=float)
        e = x[None, :] - refs @ self.model.Gx.T
        V = np.sum((e @ self.P) * e, axis=1)
        parts = self._threshold_parts(refs)
        if len(parts) == 1:
            return np.max(self._alpha_lin[None, :] * (V[:, None] - parts[0]), axis=1)
        d_obs = np.max(self._alpha_obs[None, :] * (V[:, None] - parts[0]), axis=1)
        d_lin = np.max(self._alpha_lin[None, :] * (V[:, None] - parts[1]), axis=1)
        return np.maximum(d_obs, d_lin)

    def min_threshold_batch(self, refs) -> np.ndarray:
        """``min_i Lambda_i(r)`` per row of ``refs``; ``Delta <= 0`` iff ``V <= min_i Lambda_i``."""
        refs = np.atleast_2d(np.asarray(refs, dtype=float))
        return np.min(np.hstack(self._threshold_parts(refs)), axis=1)

    def min_threshold_point(self, r) -> float:
        """Scalar :meth:`min_threshold_batch`; unrolled in plain floats for 3-D references."""
        if not self._fast3:
            return float(self.min_threshold_batch(r)[0])
        r0, r1, r2 = float(r[0]), float(r[1]), float(r[2])
        lam = self._lin_const_min
        for off, a0, a1, a2, iw in self._lin_var:
            m = off + a0 * r0 + a1 * r1 + a2 * r2
            v = m * m * iw
            if v < lam:
                lam = v
        if not self._obs_list:
            return lam
        (t00, t01, t02), (t10, t11, t12), (t20, t21, t22) = self._pos_rows
        px = t00 * r0 + t01 * r1 + t02 * r2
        py = t10 * r0 + t11 * r1 + t12 * r2
        pz = t20 * r0 + t21 * r1 + t22 * r2
        (m00, m01, m02), (m10, m11, m12), (m20, m21, m22) = self._pos_Pinv_rows
        for cx, cy, cz, ko in self._obs_list:
            dx, dy, dz = cx - px, cy - py, cz - pz
            d2 = dx * dx + dy * dy + dz * dz
            q = (dx * (m00 * dx + m01 * dy + m02 * dz) + dy * (m10 * dx + m11 * dy + m12 * dz)
                 + dz * (m20 * dx + m21 * dy + m22 * dz))
            m = d2 ** 0.5 - ko
            v = m * m * d2 / q
            if v < lam:
                lam = v
        return lam


def synthesize_terminal_ingredients(model: LtiModel, scene: Scene, Q, R, alphas=None) -> TerminalSet:
    """Terminal cost and gain from the DARE, with all scaling factors set to one."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    for name, M in (("Q", Q), ("R", R)):
        if np.max(np.abs(M - M.T)) > 1e-12 or np.linalg.eigvalsh(M)[0] <= 0:
            raise ValueError(f"{name} must be symmetric positive definite")
    P, K = solve_dare(model.A, model.B, Q, R)
    if np.linalg.eigvalsh(decrease_residual(model.A, model.B, Q, R, P, K))[0] < -1e-6:
        raise ValueError("terminal decrease condition violated")
    n_rows = len(scene.obstacles) + 2 * model.n_x + 2 * model.n_u
    if alphas is None:
        alphas = np.ones(n_rows)
    return TerminalSet(P=P, K=K, alphas=alphas, scene=scene, model=model, Q=Q, R=R)


def constraint_rows_for_reference(ts: TerminalSet, r):
    """Linear rows ``C x <= d`` whose intersection the terminal set must respect.

    Row order: one half-space per obstacle (linearized at ``x_bar_r``), the
    state box (``I`` then ``-I``) and the input box through the terminal law
    (``-K`` then ``K``).
    """
    ts._check_reference(r)
    model, scene, K = ts.model, ts.scene, ts.K
    x_bar, u_bar = equilibrium_for_reference(model, r)
    rows, rhs = [], []
    if scene.obstacles:
        pos = scene.xi_map @ x_bar
        for obs in scene.obstacles:
            n = obs.center - pos
            n = n / np.linalg.norm(n)
            rows.append(scene.xi_map.T @ n)
            rhs.append(n @ obs.center - scene.agent_radius - obs.radius)
    I = np.eye(model.n_x)
    rows.extend(I)
    rhs.extend(scene.x_max)
    rows.extend(-I)
    rhs.extend(-scene.x_min)
    Kx = K @ x_bar
    rows.extend(-K)
    rhs.extend(scene.u_max - u_bar - Kx)
    rows.extend(K)
    rhs.extend(-scene.u_min + u_bar + Kx)
    return np.array(rows), np.array(rhs)


def delta(ts: TerminalSet, x, r) -> float:
    ts._check_reference(r)
    return float(ts.delta_batch(x, np.atleast_2d(np.asarray(r, dtype=float)))[0])


def terminal_step(ts: TerminalSet, x, r):
    """One step of ``u = u_bar - K (x - x_bar)``, ``x+ = A x + B u``."""
    x = np.asarray(x, dtype=float)
    x_bar, u_bar = equilibrium_for_reference(ts.model, r)
    u = u_bar - ts.K @ (x - x_bar)
    return ts.model.A @ x + ts.model.B @ u, u
