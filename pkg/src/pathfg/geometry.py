"""Constraint sets: state/input boxes, inflated sphere obstacles and their half-space bounds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .model import LtiModel, equilibrium_for_reference

DEFAULT_EPSILON = 0.02


class DegenerateProjection(ValueError):
    """The query point sits on an obstacle center, so no direction is defined."""


@dataclass(frozen=True)
class SphereObstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class Halfspace:
    """``{x : normal @ x <= offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        if not np.linalg.norm(self.normal) > 0:
            raise ValueError("half-space normal must be nonzero")

    def margin(self, x) -> float:
        return float(self.offset - self.normal @ x)

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.margin(x) >= -tol


@dataclass(frozen=True)
class Scene:
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    obstacles: Tuple[SphereObstacle, ...] = ()
    agent_radius: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    xi_map: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("x_min", "x_max", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.x_min.shape != self.x_max.shape or np.any(self.x_min >= self.x_max):
            raise ValueError("x_min must be componentwise below x_max")
        if self.u_min.shape != self.u_max.shape or np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be componentwise below u_max")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.agent_radius >= 0:
            raise ValueError("agent_radius must be non-negative")
        if self.xi_map is None:
            n_p = self.obstacles[0].center.size if self.obstacles else 3
            xi = np.hstack([np.eye(n_p), np.zeros((n_p, self.n_x - n_p))])
        else:
            xi = np.atleast_2d(np.asarray(self.xi_map, dtype=float))
        if xi.shape[1] != self.n_x:
            raise ValueError("xi_map must have n_x columns")
        for obs in self.obstacles:
            if obs.center.shape != (xi.shape[0],):
                raise ValueError("obstacle center dimension does not match position map")
        object.__setattr__(self, "xi_map", xi)

    @property
    def n_x(self) -> int:
        return self.x_min.size

    @property
    def n_u(self) -> int:
        return self.u_min.size

    @property
    def centers(self) -> np.ndarray:
        return np.array([o.center for o in self.obstacles]).reshape(len(self.obstacles), self.xi_map.shape[0])

    @property
    def keepout_radii(self) -> np.ndarray:
        """Obstacle radii inflated by the agent radius."""
        return np.array([o.radius + self.agent_radius for o in self.obstacles])

    @property
    def position_bounds(self):
        return self.xi_map @ self.x_min, self.xi_map @ self.x_max


def _unit_direction(center, point):
    d = point - center
    nd = np.linalg.norm(d)
    if nd == 0.0:
        raise DegenerateProjection("degenerate projection: point coincides with obstacle center")
    return d / nd


def project_onto_obstacle(obs: SphereObstacle, agent_radius: float, x_pos) -> np.ndarray:
    """Nearest point of the inflated sphere surface to ``x_pos``."""
    x_pos = np.asarray(x_pos, dtype=float)
    return obs.center + _unit_direction(obs.center, x_pos) * (obs.radius + agent_radius)


def halfspace_approximation(obs: SphereObstacle, agent_radius: float, xi_map, x) -> Halfspace:
    """Half-space tangent to the inflated obstacle, facing the position of ``x``.

    With ``n = unit(center - xi_map x)``: ``c = xi_map' n`` and
    ``d = n' center - agent_radius - radius``.
    """
    xi_map = np.atleast_2d(np.asarray(xi_map, dtype=float))
    n = -_unit_direction(obs.center, xi_map @ np.asarray(x, dtype=float))
    return Halfspace(xi_map.T @ n, float(n @ obs.center - agent_radius - obs.radius))


def obstacle_clearances(scene: Scene, pos) -> np.ndarray:
    """``||pos - o_j|| - (r_j + r_a)`` for every obstacle."""
    if not scene.obstacles:
        return np.zeros(0)
    return np.linalg.norm(scene.centers - np.asarray(pos, dtype=float), axis=1) - scene.keepout_radii


def state_margin(scene: Scene, x) -> float:
    """Worst constraint margin of ``x``; negative means violated."""
    x = np.asarray(x, dtype=float)
    if x.shape != (scene.n_x,):
        raise ValueError("state dimension mismatch")
    box = min(np.min(scene.x_max - x), np.min(x - scene.x_min))
    clr = obstacle_clearances(scene, scene.xi_map @ x)
    return float(min(box, np.min(clr, initial=np.inf)))


def input_margin(scene: Scene, u) -> float:
    u = np.asarray(u, dtype=float)
    if u.shape != (scene.n_u,):
        raise ValueError("input dimension mismatch")
    return float(min(np.min(scene.u_max - u), np.min(u - scene.u_min)))


def is_state_admissible(scene: Scene, x) -> Tuple[bool, float]:
    margin = state_margin(scene, x)
    return margin >= 0.0, margin


def reference_margin(scene: Scene, model: LtiModel, r) -> float:
    x_bar, u_bar = equilibrium_for_reference(model, r)
    return min(state_margin(scene, x_bar), input_margin(scene, u_bar))


def is_reference_strictly_admissible(scene: Scene, model: LtiModel, r) -> bool:
    return reference_margin(scene, model, r) >= scene.epsilon


def segment_clearance(scene: Scene, a, b) -> float:
    """Smallest obstacle clearance along the position segment ``[a, b]`` (exact)."""
    if not scene.obstacles:
        return np.inf
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    dd = d @ d
    C = scene.centers
    if dd == 0.0:
        t = np.zeros(len(C))
    else:
        t = np.clip((C - a) @ d / dd, 0.0, 1.0)
    closest = a + t[:, None] * d
    return float(np.min(np.linalg.norm(C - closest, axis=1) - scene.keepout_radii))


def quadrotor_scene(obstacles: Sequence[SphereObstacle], *, mass: float = 0.032, gravity: float = -9.81,
                    thrust_min: float = 0.0, thrust_max: float = 0.59, rate_max: float = 0.5 * np.pi,
                    pos_max: float = 10.0, vel_max: float = 1.0, att_max: float = 0.2 * np.pi,
                    agent_radius: float = 0.08, epsilon: float = DEFAULT_EPSILON) -> Scene:
    """Quadrotor constraint set in deviation coordinates.

    The thrust deviation is bounded by ``[T_min - T_hover, T_max - T_hover]``
    with hover thrust ``T_hover = m |g|``.
    """
    hover = mass * abs(gravity)
    x_max = np.array([pos_max] * 3 + [vel_max] * 3 + [att_max] * 3)
    u_max = np.array([thrust_max - hover, rate_max, rate_max, rate_max])
    u_min = np.array([thrust_min - hover, -rate_max, -rate_max, -rate_max])
    return Scene(x_min=-x_max, x_max=x_max, u_min=u_min, u_max=u_max, obstacles=tuple(obstacles),
                 agent_radius=agent_radius, epsilon=epsilon)
