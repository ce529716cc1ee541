import numpy as np
import pytest

from pathfg.geometry import (DegenerateProjection, Halfspace, Scene, SphereObstacle, halfspace_approximation,
                             is_reference_strictly_admissible, is_state_admissible, project_onto_obstacle,
                             quadrotor_scene, reference_margin, segment_clearance)

XI = np.hstack([np.eye(3), np.zeros((3, 6))])


def _state(pos):
    x = np.zeros(9)
    x[:3] = pos
    return x


def test_projection_examples():
    unit = SphereObstacle([0.0, 0.0, 0.0], 1.0)
    np.testing.assert_allclose(project_onto_obstacle(unit, 0.0, [2, 0, 0]), [1, 0, 0])
    np.testing.assert_allclose(project_onto_obstacle(SphereObstacle([1, 0, 0], 0.5), 0.08, [3, 0, 0]), [1.58, 0, 0])
    np.testing.assert_allclose(project_onto_obstacle(unit, 0.0, [0.5, 0, 0]), [1, 0, 0])


def test_projection_degenerate():
    with pytest.raises(DegenerateProjection, match="degenerate projection"):
        project_onto_obstacle(SphereObstacle([1, 1, 1], 0.2), 0.0, [1, 1, 1])


def test_projection_on_surface_and_optimal():
    rng = np.random.default_rng(0)
    obs = SphereObstacle([0.3, -0.2, 0.5], 0.4)
    ra = 0.08
    for _ in range(200):
        x = obs.center + rng.standard_normal(3) * 2
        p = project_onto_obstacle(obs, ra, x)
        assert abs(np.linalg.norm(p - obs.center) - (obs.radius + ra)) <= 1e-12
        dirs = rng.standard_normal((1000, 3))
        pts = obs.center + dirs / np.linalg.norm(dirs, axis=1)[:, None] * (obs.radius + ra)
        assert np.linalg.norm(x - p) <= np.min(np.linalg.norm(pts - x, axis=1)) + 1e-12


def test_projection_non_expansive():
    rng = np.random.default_rng(2)
    obs = SphereObstacle([0, 0, 0], 1.0)
    for _ in range(2000):
        d1, d2 = rng.standard_normal((2, 3))
        x1 = d1 / np.linalg.norm(d1) * rng.uniform(1.0, 3.0)
        x2 = d2 / np.linalg.norm(d2) * rng.uniform(1.0, 3.0)
        p1, p2 = project_onto_obstacle(obs, 0.0, x1), project_onto_obstacle(obs, 0.0, x2)
        assert np.linalg.norm(p1 - p2) <= np.linalg.norm(x1 - x2) + 1e-12


def test_halfspace_examples():
    unit = SphereObstacle([0, 0, 0], 1.0)
    hs = halfspace_approximation(unit, 0.0, XI, _state([2, 0, 0]))
    np.testing.assert_allclose(hs.normal, -XI.T @ [1, 0, 0])
    assert hs.offset == pytest.approx(-1.0)  # -p_x <= -1  <=>  p_x >= 1
    hs = halfspace_approximation(unit, 0.0, XI, _state([0, 3, 0]))
    np.testing.assert_allclose(hs.normal[:3], [0, -1, 0])
    assert hs.offset == pytest.approx(-1.0)
    assert np.linalg.norm(hs.normal) == pytest.approx(1.0)


def test_halfspace_validation():
    with pytest.raises(ValueError):
        Halfspace(np.zeros(3), 1.0)
    with pytest.raises(DegenerateProjection):
        halfspace_approximation(SphereObstacle([0, 0, 0], 1.0), 0.0, XI, np.zeros(9))


def test_state_admissibility_examples():
    scene = quadrotor_scene([])
    ok, margin = is_state_admissible(scene, np.zeros(9))
    assert ok and margin == pytest.approx(min(scene.x_max))
    obs = SphereObstacle([1, 1, 1], 0.3)
    scene = quadrotor_scene([obs])
    ok, margin = is_state_admissible(scene, _state([1, 1, 1]))
    assert not ok and margin == pytest.approx(-(0.3 + 0.08))
    # binary-exact radii so the surface point has clearance exactly zero
    scene = quadrotor_scene([SphereObstacle([0, 0, 0], 0.5)], agent_radius=0.25)
    ok, margin = is_state_admissible(scene, _state([0.75, 0, 0]))
    assert ok and margin == 0.0


def test_strict_admissibility(quad_model, scene_problem):
    assert is_reference_strictly_admissible(scene_problem.scene, quad_model, [2.5, 2.5, 1.0])
    obs = scene_problem.scene.obstacles[0]
    assert not is_reference_strictly_admissible(scene_problem.scene, quad_model, obs.center)
    scene = quadrotor_scene([SphereObstacle([0, 0, 0], 0.5)], epsilon=0.02)
    r = np.array([0.5 + 0.08 + 0.01, 0, 0])  # clearance epsilon / 2
    assert reference_margin(scene, quad_model, r) == pytest.approx(0.01)
    assert not is_reference_strictly_admissible(scene, quad_model, r)


def test_thrust_box_contains_hover_deviation(quad_model):
    scene = quadrotor_scene([])
    assert scene.u_min[0] < 0.0 < scene.u_max[0]
    assert scene.u_min[0] == pytest.approx(-0.31392)
    assert scene.u_max[0] == pytest.approx(0.59 - 0.31392)


def _exterior_points(rng, center, keep, n):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return center + d * (keep + rng.uniform(1e-6, 3.0, (n, 1)))


@pytest.mark.parametrize("center,rad,ra", [([0.0, 0.0, 0.0], 1.0, 0.0), ([1.35, 1.2, 0.65], 0.35, 0.08)])
def test_halfspace_soundness(center, rad, ra):
    """10^5 (x, y) pairs: y in the half-space built at x never enters the inflated sphere."""
    rng = np.random.default_rng(42)
    obs = SphereObstacle(center, rad)
    keep = rad + ra
    violations = 0
    for x_pos in _exterior_points(rng, obs.center, keep, 1000):
        hs = halfspace_approximation(obs, ra, XI, _state(x_pos))
        n = hs.normal[:3]
        y = obs.center + rng.uniform(-4, 4, (100, 3))
        slack = hs.offset - y @ n
        y = np.where((slack < 0)[:, None], y + (slack - rng.uniform(0, 1, 100))[:, None] * n, y)
        assert np.all(y @ n <= hs.offset + 1e-12)
        violations += int(np.sum(np.linalg.norm(y - obs.center, axis=1) - keep < -1e-12))
    assert violations == 0


@pytest.mark.parametrize("center,rad,ra", [([0.0, 0.0, 0.0], 1.0, 0.0), ([1.35, 1.2, 0.65], 0.35, 0.08)])
def test_halfspace_interiority(center, rad, ra):
    rng = np.random.default_rng(43)
    obs = SphereObstacle(center, rad)
    for x_pos in _exterior_points(rng, obs.center, rad + ra, 10_000):
        x = _state(x_pos)
        hs = halfspace_approximation(obs, ra, XI, x)
        assert hs.normal @ x < hs.offset


def test_halfspace_function_matches_vectorized_rows():
    rng = np.random.default_rng(3)
    obs = SphereObstacle([0.5, 0.5, 0.5], 0.3)
    for _ in range(100):
        x = _state(obs.center + rng.uniform(-2, 2, 3))
        if np.linalg.norm(x[:3] - obs.center) <= 0.38:
            continue
        hs = halfspace_approximation(obs, 0.08, XI, x)
        assert hs.contains(x)
        assert hs.margin(x) > 0


def test_segment_clearance_exact():
    scene = quadrotor_scene([SphereObstacle([1.0, 0.0, 0.0], 0.2)], agent_radius=0.0)
    assert segment_clearance(scene, [0, 1, 0], [2, 1, 0]) == pytest.approx(0.8)
    assert segment_clearance(scene, [0, 0, 0], [2, 0, 0]) == pytest.approx(-0.2)
    assert segment_clearance(scene, [3, 0, 0], [4, 0, 0]) == pytest.approx(1.8)
    assert segment_clearance(quadrotor_scene([]), [0, 0, 0], [1, 1, 1]) == np.inf


def test_scene_validation():
    with pytest.raises(ValueError):
        Scene(x_min=[1.0], x_max=[0.0], u_min=[-1.0], u_max=[1.0])
    with pytest.raises(ValueError):
        Scene(x_min=[-1.0], x_max=[1.0], u_min=[-1.0], u_max=[1.0], epsilon=0.0)
    with pytest.raises(ValueError):
        SphereObstacle([0, 0, 0], -0.1)
    with pytest.raises(ValueError):
        quadrotor_scene([], agent_radius=-0.1)
