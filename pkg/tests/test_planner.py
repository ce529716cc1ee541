import numpy as np
import pytest

from pathfg.geometry import SphereObstacle, quadrotor_scene, reference_margin
from pathfg.planner import (PiecewisePath, PlannerConfig, PlanningError, PotentialFieldConfig, RrtStarConfig,
                            path_eval, plan, validate_path)
from pathfg.sim import build_problem

START = np.array([0.1, 0.1, 0.3])
GOAL = np.array([2.5, 2.5, 1.0])


def test_empty_scene_straight_path(quad_model):
    scene = quadrotor_scene([])
    path = plan(scene, quad_model, [0.0, 0.0, 0.3], [1.0, 0.0, 0.3], PlannerConfig())
    assert len(path) == 2
    np.testing.assert_array_equal(path.waypoints, [[0.0, 0.0, 0.3], [1.0, 0.0, 0.3]])


def test_path_eval_examples():
    p = PiecewisePath([[0, 0, 0], [1, 0, 0]])
    np.testing.assert_allclose(path_eval(p, 0.5), [0.5, 0, 0])
    q = PiecewisePath([[0, 0, 0], [1, 0, 0], [1, 3, 0]])
    np.testing.assert_array_equal(path_eval(q, 0.0), [0, 0, 0])
    np.testing.assert_array_equal(path_eval(q, 1.0), [1, 3, 0])
    np.testing.assert_allclose(path_eval(q, 0.25), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(q.eval_many([0.0, 0.25, 1.0]), [[0, 0, 0], [1, 0, 0], [1, 3, 0]], atol=1e-15)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            path_eval(q, bad)


def test_path_eval_continuity():
    q = PiecewisePath([[0, 0, 0], [1, 0, 0], [1, 3, 0], [2, 3, 1]])
    s = np.linspace(0, 1, 10_001)
    pts = q.eval_many(s)
    step = np.max(np.linalg.norm(np.diff(pts, axis=0), axis=1))
    assert step <= q.length * 1e-4 + 1e-12


@pytest.mark.parametrize("kind", ["rrt_star", "potential_field"])
def test_reference_scene_paths_are_collision_free(scene_problem, quad_model, kind):
    scene = scene_problem.scene
    cfg = PlannerConfig(kind=kind, seed=0, clearance=0.1, bounds_padding=0.5,
                        pf=PotentialFieldConfig(influence_distance=0.3))
    path = plan(scene, quad_model, START, GOAL, cfg)
    np.testing.assert_array_equal(path.goal, GOAL)
    np.testing.assert_array_equal(path.start, START)
    report = validate_path(path, scene, quad_model, scene_problem.spec, np.r_[START, np.zeros(6)])
    assert report.passed, report.failures
    assert report.dense_worst_margin >= scene.epsilon - 1e-9


def test_plan_is_deterministic(scene_problem, quad_model):
    cfg = PlannerConfig(kind="rrt_star", seed=7, clearance=0.1, bounds_padding=0.5)
    a = plan(scene_problem.scene, quad_model, START, GOAL, cfg)
    b = plan(scene_problem.scene, quad_model, START, GOAL, cfg)
    np.testing.assert_array_equal(a.waypoints, b.waypoints)


def test_rrt_star_more_iterations_never_longer(scene_problem, quad_model):
    for seed in range(5):
        lengths = []
        for iters in (500, 1000, 2000):
            cfg = PlannerConfig(kind="rrt_star", seed=seed, clearance=0.1, bounds_padding=0.5, shortcut=False,
                                rrt=RrtStarConfig(max_iters=iters))
            lengths.append(plan(scene_problem.scene, quad_model, START, GOAL, cfg).raw_length)
        assert lengths[1] <= lengths[0] + 1e-12 and lengths[2] <= lengths[1] + 1e-12, (seed, lengths)


def test_goal_inside_obstacle_rejected(scene_problem, quad_model):
    obs = scene_problem.scene.obstacles[0]
    with pytest.raises(ValueError):
        plan(scene_problem.scene, quad_model, START, obs.center, PlannerConfig())


def test_start_outside_box_rejected(quad_model):
    with pytest.raises(ValueError):
        plan(quadrotor_scene([]), quad_model, [50.0, 0.0, 0.0], [1.0, 0.0, 0.0], PlannerConfig())


def test_budget_exhausted_raises(quad_model):
    # goal enclosed by a shell of obstacles
    obs = [SphereObstacle([2.0 + dx, dy, dz], 0.45) for dx, dy, dz in
           [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]]
    obs += [SphereObstacle([2.0 + a, b, c], 0.5) for a in (-0.6, 0.6) for b in (-0.6, 0.6) for c in (-0.6, 0.6)]
    scene = quadrotor_scene(obs)
    for kind in ("rrt_star", "potential_field"):
        cfg = PlannerConfig(kind=kind, rrt=RrtStarConfig(max_iters=200), pf=PotentialFieldConfig(max_steps=300))
        with pytest.raises(PlanningError):
            plan(scene, quad_model, [-1.0, 0.0, 0.0], [2.0, 0.0, 0.0], cfg)


def test_validate_path_flags_bad_waypoint(scene_problem, quad_model):
    scene = scene_problem.scene
    obs = scene.obstacles[0]
    path = PiecewisePath([START, obs.center, GOAL])
    report = validate_path(path, scene, quad_model)
    assert not report.passed
    assert report.waypoint_admissible == [True, False, True]
    assert not report.dense_ok
    assert any("waypoint 1" in f for f in report.failures)


def test_validate_path_flags_unreachable_start(empty_setup, quad_model):
    _, scene, _, spec = empty_setup
    path = PiecewisePath([[3.0, 3.0, 1.0], [3.5, 3.0, 1.0]])
    x0 = np.zeros(9)
    x0[3:6] = [-1.0, -1.0, 0.0]
    report = validate_path(path, scene, quad_model, spec, x0)
    assert report.gamma_ok is False and not report.passed


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(kind="a_star")
    with pytest.raises(ValueError):
        RrtStarConfig(goal_bias=1.5)
    with pytest.raises(ValueError):
        PotentialFieldConfig(step_size=0.0)
