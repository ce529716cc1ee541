"""Path parameter governor: advance ``s`` as far along the path as the terminal set allows."""

from __future__ import annotations

import bisect
import math
import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .planner import PiecewisePath, path_eval
from .terminal import TerminalSet


class GovernorInvariantError(RuntimeError):
    pass


# path -> terminal set -> grid_step -> (grid, x_bar on grid, min threshold on grid)
_GRID_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _grid_tables(ts: TerminalSet, path: PiecewisePath, grid_step: float):
    per_ts = _GRID_CACHE.setdefault(path, weakref.WeakKeyDictionary()).setdefault(ts, {})
    if grid_step not in per_ts:
        n_grid = math.ceil(1.0 / grid_step)
        grid = np.maximum(1.0 - grid_step * np.arange(n_grid + 1), 0.0)
        refs = path.eval_many(grid)
        per_ts[grid_step] = (grid, refs @ ts.model.Gx.T, ts.min_threshold_batch(refs))
    return per_ts[grid_step]


@dataclass
class GovernorState:
    s: float = 0.0
    last_xi_N: Optional[np.ndarray] = None
    evaluations: int = 0

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("s must lie in [0, 1]")


def membership(ts: TerminalSet, path: PiecewisePath, xi_N, s: float) -> bool:
    """``True`` iff ``Delta(xi_N, p(s)) <= 0``."""
    r = path_eval(path, s)
    return bool(ts.delta_batch(xi_N, r[None, :])[0] <= 0.0)


def _member_fn(ts: TerminalSet, path: PiecewisePath, xi_N):
    """Scalar membership test ``s -> Delta(xi_N, p(s)) <= 0``.

    ``Delta <= 0`` iff ``V <= min_i Lambda_i`` since every ``alpha_i`` is
    positive. For 3-D references ``V`` is expanded as a quadratic in ``r`` and
    the path is interpolated in plain floats, which is several times cheaper
    than small numpy calls.
    """
    Gx, P = ts.model.Gx, ts.P
    if Gx.shape[1] != 3 or len(path) < 2:
        def member(s):
            r = path_eval(path, s)
            e = xi_N - Gx @ r
            return (e @ P) @ e <= ts.min_threshold_point(r)
        return member
    c0 = float(xi_N @ P @ xi_N)
    b0, b1, b2 = (2.0 * Gx.T @ (P @ xi_N)).tolist()
    (q00, q01, q02), (q10, q11, q12), (q20, q21, q22) = (Gx.T @ P @ Gx).tolist()
    cum = path.cumulative_lengths.tolist()
    wp = path.waypoints.tolist()
    last = len(cum) - 2
    thr = ts.min_threshold_point

    def member(s):
        i = min(max(bisect.bisect_right(cum, s) - 1, 0), last)
        span = cum[i + 1] - cum[i]
        t = (s - cum[i]) / span if span > 0 else 0.0
        (a0, a1, a2), (e0, e1, e2) = wp[i], wp[i + 1]
        if s >= 1.0:
            r0, r1, r2 = e0, e1, e2
        else:
            r0, r1, r2 = a0 + t * (e0 - a0), a1 + t * (e1 - a1), a2 + t * (e2 - a2)
        V = (c0 - b0 * r0 - b1 * r1 - b2 * r2 + r0 * (q00 * r0 + q01 * r1 + q02 * r2)
             + r1 * (q10 * r0 + q11 * r1 + q12 * r2) + r2 * (q20 * r0 + q21 * r1 + q22 * r2))
        return V <= thr((r0, r1, r2))
    return member


def evaluation_budget(grid_step: float, bisect_tol: float) -> int:
    return math.ceil(1.0 / grid_step) + max(0, math.ceil(math.log2(grid_step / bisect_tol)))


def governor_update(ts: TerminalSet, path: PiecewisePath, state: GovernorState, xi_N,
                    grid_step: float = 1e-2, bisect_tol: float = 1e-4) -> float:
    """Largest detected ``s' >= state.s`` with ``xi_N`` in the terminal slice at ``p(s')``.

    Scans ``1, 1 - h, 1 - 2h, ...`` down to (but excluding) ``state.s``, then
    bisects between the first feasible grid point and the infeasible one above
    it. If no grid point is feasible the current ``s`` is kept, after checking
    that it is itself still feasible. Updates ``state`` in place and returns
    the new ``s``.
    """
    if not (grid_step > 0 and bisect_tol > 0):
        raise ValueError("grid_step and bisect_tol must be positive")
    xi_N = np.asarray(xi_N, dtype=float)
    s0 = state.s

    member = _member_fn(ts, path, xi_N)

    P = ts.P
    grid, xbar, lam = _grid_tables(ts, path, grid_step)
    keep = grid > s0 + 1e-12
    grid, xbar, lam = grid[keep], xbar[keep], lam[keep]
    evals = grid.size
    new_s = s0
    if grid.size:
        e = xi_N[None, :] - xbar
        ok = np.flatnonzero(np.sum((e @ P) * e, axis=1) <= lam)
        if ok.size:
            i = int(ok[0])
            lo = float(grid[i])
            hi = float(grid[i - 1]) if i > 0 else None
            if hi is not None:
                while hi - lo > bisect_tol:
                    mid = 0.5 * (lo + hi)
                    evals += 1
                    if member(mid):
                        lo = mid
                    else:
                        hi = mid
            new_s = lo
        else:
            # nothing on the grid: refine in the gap between s0 and the lowest grid point
            hi = float(grid[-1])
            lo = s0
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                evals += 1
                if member(mid):
                    lo = mid
                else:
                    hi = mid
            new_s = lo
    if new_s == s0:
        evals += 1
        if not member(s0):
            state.evaluations = evals
            raise GovernorInvariantError("governor invariant broken: previous terminal state "
                                         f"is outside the terminal slice at s={s0}")
    state.s = new_s
    state.last_xi_N = xi_N.copy()
    state.evaluations = evals
    return new_s
