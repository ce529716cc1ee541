"""Discrete-time LTI plant, ZOH discretization and the quadrotor outer loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .numkit import DareError, solve_dare


def discretize_zoh(Ac, Bc, Ts: float):
    """Exact zero-order-hold discretization.

    Uses the matrix exponential of the augmented block ``[[Ac, Bc], [0, 0]] * Ts``
    whose top blocks are ``exp(Ac Ts)`` and ``int_0^Ts exp(Ac t) dt @ Bc``.
    """
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc[:, None]
    n = Ac.shape[0]
    if Ac.shape != (n, n):
        raise ValueError("Ac must be square")
    if Bc.shape[0] != n:
        raise ValueError("Bc row count must match Ac")
    if not Ts > 0:
        raise ValueError("Ts must be positive")
    m = Bc.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = scipy.linalg.expm(M * Ts)
    return E[:n, :n], E[:n, n:]


def equilibrium_basis(A, B, xi_map):
    """Basis ``(Gx, Gu)`` of ``ker [A - I, B]`` normalized so that ``xi_map @ Gx = I``.

    The kernel is found by SVD. When it is larger than the reference dimension
    (the quadrotor's yaw is a free equilibrium direction), the minimum-norm
    combination that reproduces the position is kept.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    xi_map = np.atleast_2d(np.asarray(xi_map, dtype=float))
    n_x, n_u = B.shape
    Z = np.hstack([A - np.eye(n_x), B])
    _, sv, Vt = np.linalg.svd(Z)
    tol = max(Z.shape) * np.finfo(float).eps * max(sv[0] if sv.size else 1.0, 1.0) * 1e3
    rank = int(np.sum(sv > tol))
    N = Vt[rank:].T
    if N.shape[1] == 0:
        raise ValueError("[A - I, B] has a trivial kernel; no equilibrium family")
    XN = xi_map @ N[:n_x]
    if np.linalg.matrix_rank(XN) < xi_map.shape[0]:
        raise ValueError("equilibrium family does not span the reference space")
    G = N @ np.linalg.pinv(XN)
    G[np.abs(G) < 1e-12] = 0.0
    return G[:n_x], G[n_x:]


@dataclass(frozen=True)
class LtiModel:
    """``x+ = A x + B u`` with equilibria ``x_bar = Gx r``, ``u_bar = Gu r``.

    ``u_trim`` is the operating-point input the deviation model was linearized
    about; the controller never uses it, it is kept so a physical input can be
    reported as ``u_trim + u``.
    """

    A: np.ndarray
    B: np.ndarray
    Ts: float
    Gx: np.ndarray
    Gu: np.ndarray
    xi_map: np.ndarray
    u_trim: np.ndarray = None

    def __post_init__(self):
        for name in ("A", "B", "Gx", "Gu", "xi_map"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        if self.u_trim is None:
            object.__setattr__(self, "u_trim", np.zeros(self.n_u))
        else:
            object.__setattr__(self, "u_trim", np.asarray(self.u_trim, dtype=float))
        n_x, n_u = self.n_x, self.n_u
        if self.A.shape != (n_x, n_x) or self.Gx.shape[0] != n_x or self.Gu.shape != (n_u, self.n_r):
            raise ValueError("inconsistent model dimensions")
        if self.xi_map.shape[1] != n_x:
            raise ValueError("xi_map must have n_x columns")
        resid = np.hstack([self.A - np.eye(n_x), self.B]) @ np.vstack([self.Gx, self.Gu])
        if np.max(np.abs(resid), initial=0.0) > 1e-9:
            raise ValueError("[Gx; Gu] is not in the kernel of [A - I, B]")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_r(self) -> int:
        return self.Gx.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u

    def is_stabilizable(self) -> bool:
        try:
            solve_dare(self.A, self.B, np.eye(self.n_x), np.eye(self.n_u))
        except DareError:
            return False
        return True


def equilibrium_for_reference(model: LtiModel, r):
    """Equilibrium pair ``(x_bar, u_bar) = (Gx r, Gu r)`` for reference ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if r.shape != (model.n_r,):
        raise ValueError(f"reference must have {model.n_r} entries, got shape {r.shape}")
    return model.Gx @ r, model.Gu @ r


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.032
    gravity: float = -9.81
    Ts: float = 0.1

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")

    @property
    def mg(self) -> float:
        return self.mass * self.gravity


def quadrotor_continuous(params: QuadrotorParams):
    """Continuous-time outer-loop matrices ``(Ac, Bc)``.

    State ``(p, v, roll/pitch/yaw)``, input ``(thrust deviation, body rates)``.
    """
    g = params.gravity
    Ac = np.zeros((9, 9))
    Ac[0:3, 3:6] = np.eye(3)
    Ac[3:6, 6:9] = np.array([[0.0, g, 0.0], [-g, 0.0, 0.0], [0.0, 0.0, 0.0]])
    Bc = np.zeros((9, 4))
    Bc[5, 0] = 1.0 / params.mass
    Bc[6:9, 1:4] = np.eye(3)
    return Ac, Bc


def build_quadrotor_model(params: QuadrotorParams) -> LtiModel:
    Ac, Bc = quadrotor_continuous(params)
    A, B = discretize_zoh(Ac, Bc, params.Ts)
    xi_map = np.hstack([np.eye(3), np.zeros((3, 6))])
    Gx, Gu = equilibrium_basis(A, B, xi_map)
    u_trim = np.array([params.mg, 0.0, 0.0, 0.0])
    return LtiModel(A=A, B=B, Ts=params.Ts, Gx=Gx, Gu=Gu, xi_map=xi_map, u_trim=u_trim)


def operating_input(model: LtiModel, r) -> np.ndarray:
    """Absolute input at the equilibrium for ``r``: ``u_trim + Gu r``.

    For the quadrotor this is ``(m g, 0, 0, 0)`` for every ``r``.
    """
    return model.u_trim + equilibrium_for_reference(model, r)[1]
