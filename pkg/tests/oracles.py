"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np


def active_set_qp(H, q, G, h, E=None, e=None, tol=1e-9):
    """Exact QP minimizer by enumerating every subset of active inequalities.

    Requires ``H`` positive definite. Returns ``(x, objective)`` or ``(None, inf)``
    when no subset yields a primal-dual feasible KKT point.
    """
    n = H.shape[0]
    m = G.shape[0]
    E = np.zeros((0, n)) if E is None else E
    e = np.zeros(0) if e is None else e
    best = (None, np.inf)
    for k in range(m + 1):
        for act in itertools.combinations(range(m), k):
            A = np.vstack([G[list(act)], E])
            b = np.concatenate([h[list(act)], e])
            na = A.shape[0]
            K = np.block([[H, A.T], [A, np.zeros((na, na))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, b]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(G @ x > h + 1e-7):
                continue
            if k and np.any(lam[:k] < -1e-9):
                continue
            obj = 0.5 * x @ H @ x + q @ x
            if obj < best[1]:
                best = (x, obj)
    return best


def value_iteration_dare(A, B, Q, R, steps=10_000):
    P = Q.copy()
    for _ in range(steps):
        S = R + B.T @ P @ B
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
        P = 0.5 * (P_next + P_next.T)
    return P


def taylor_zoh(Ac, Bc, Ts, terms=50, squarings=6):
    """ZOH by a scaled Taylor series of the augmented exponential, then squaring."""
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    X = M * Ts / 2 ** squarings
    E = np.eye(n + m)
    term = np.eye(n + m)
    for k in range(1, terms + 1):
        term = term @ X / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return E[:n, :n], E[:n, n:]


def grid_sup(member, lo=0.0, step=1e-4):
    """Largest grid point ``s`` in ``[lo, 1]`` with ``member(s)`` true (``None`` if none)."""
    grid = np.arange(1.0, lo - 0.5 * step, -step)
    for s in grid:
        if member(float(s)):
            return float(s)
    return None
