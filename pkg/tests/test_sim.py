import copy
import json

import numpy as np
import pytest

from pathfg.sim import (CONVERGED, INFEASIBLE, NO_PATH, TRAJECTORY_HEADER, ConfigError, config_from_dict,
                        load_config, run_closed_loop, run_horizon_study, scene_path, write_outputs, write_study)

HEADER = ("k,t,px,py,pz,vx,vy,vz,roll,pitch,yaw,thrust,wx,wy,wz,s,ref_x,ref_y,ref_z,err,cost,"
          "solve_time,gov_time,clearance,feasible")


@pytest.fixture(scope="module")
def raw():
    return json.loads(scene_path("paper_quadrotor").read_text())


@pytest.fixture(scope="module")
def scene_run(scene_config):
    return run_closed_loop(scene_config)


def _empty(raw, start, goal, **extra):
    d = copy.deepcopy(raw)
    d["scene"]["obstacles"] = []
    d["start"]["position_m"] = start
    d["goal_position_m"] = goal
    d.update(extra)
    return config_from_dict(d)


def test_shipped_scene_loads(scene_config):
    assert scene_config.N == 5
    assert scene_config.params.Ts == 0.1
    assert len(scene_config.obstacles) == 6
    np.testing.assert_array_equal(scene_config.goal, [2.5, 2.5, 1.0])


def test_missing_obstacles_names_key(raw):
    d = copy.deepcopy(raw)
    del d["scene"]["obstacles"]
    with pytest.raises(ConfigError, match="obstacles") as info:
        config_from_dict(d)
    assert info.value.path == "scene.obstacles"


def test_negative_radius_rejected(raw):
    d = copy.deepcopy(raw)
    d["scene"]["obstacles"][2]["radius_m"] = -0.1
    with pytest.raises(ConfigError) as info:
        config_from_dict(d)
    assert info.value.path == "scene.obstacles[2].radius_m"


def test_unknown_key_rejected(raw):
    d = copy.deepcopy(raw)
    d["cost"]["q_yaw"] = 1.0
    with pytest.raises(ConfigError, match="q_yaw"):
        config_from_dict(d)


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d["model"].__setitem__("sample_time_s", 0.0), "model.sample_time_s"),
    (lambda d: d.__setitem__("horizon", 0), "horizon"),
    (lambda d: d["planner"].__setitem__("kind", "dijkstra"), "planner.kind"),
    (lambda d: d.__setitem__("goal_position_m", [1.35, 1.2, 0.65]), "goal_position_m"),
    (lambda d: d["start"].__setitem__("position_m", [1.35, 1.2, 0.65]), "start"),
])
def test_invalid_values_name_field(raw, mutate, field):
    d = copy.deepcopy(raw)
    mutate(d)
    with pytest.raises(ConfigError) as info:
        config_from_dict(d)
    assert info.value.path == field


def test_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_scene_run_converges_safely(scene_run):
    log = scene_run
    assert log.verdict == CONVERGED
    assert log.summary()["violation_count"] == 0
    s = log.column("s")
    assert np.all(np.diff(s) >= 0) and s[-1] == 1.0
    assert log.records[-1].err <= 1e-2
    assert all(r.feasible for r in log.records)


def test_outputs(scene_run, tmp_path):
    files = write_outputs(scene_run, tmp_path)
    assert {f.name for f in files} == {"trajectory.csv", "timing.csv", "path.csv", "summary.json"}
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == HEADER == ",".join(TRAJECTORY_HEADER)
    assert len(lines) - 1 == scene_run.steps + 1
    summ = json.loads((tmp_path / "summary.json").read_text())
    assert summ["verdict"] == "converged" and summ["violation_count"] == 0
    assert len((tmp_path / "path.csv").read_text().splitlines()) == len(scene_run.path) + 1


def test_rerun_is_byte_identical(scene_config, scene_run, tmp_path):
    write_outputs(scene_run, tmp_path / "a")
    write_outputs(run_closed_loop(scene_config), tmp_path / "b")
    for name in ("trajectory.csv", "path.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_wall_times_opt_in(scene_run, tmp_path):
    write_outputs(scene_run, tmp_path / "a")
    write_outputs(scene_run, tmp_path / "b", wall_times=True)
    i = TRAJECTORY_HEADER.index("solve_time")
    row_a = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()[1].split(",")
    row_b = (tmp_path / "b" / "trajectory.csv").read_text().splitlines()[1].split(",")
    assert row_a[i] == "nan" and float(row_b[i]) > 0
    timing = (tmp_path / "a" / "timing.csv").read_text().splitlines()
    assert timing[0] == "k,solve_time,gov_time,gov_evals" and len(timing) == len(scene_run.records) + 1


def test_start_equals_goal(raw):
    cfg = _empty(raw, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    log = run_closed_loop(cfg)
    assert log.verdict == CONVERGED
    assert log.steps <= 1
    assert log.records[-1].s == 1.0


def test_empty_scene_matches_long_horizon_oracle(raw):
    cfg = _empty(raw, [0.0, 0.0, 0.3], [1.0, 0.0, 0.3])
    log = run_closed_loop(cfg)
    assert log.verdict == CONVERGED
    assert len(log.path) == 2
    assert np.all(np.diff(log.column("s")) >= 0)
    oracle = run_closed_loop(cfg, governed=False, N=50)
    assert oracle.verdict == CONVERGED
    assert log.records[-1].err <= 1e-2 and oracle.records[-1].err <= 1e-2


def test_no_path_verdict(raw):
    d = copy.deepcopy(raw)
    d["scene"]["obstacles"] = [{"center_m": [2.5 + dx, 2.5 + dy, 1.0 + dz], "radius_m": 0.45}
                               for dx, dy, dz in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1),
                                                  (0, 0, -1)]]
    d["scene"]["obstacles"] += [{"center_m": [2.5 + a, 2.5 + b, 1.0 + c], "radius_m": 0.5}
                                for a in (-0.6, 0.6) for b in (-0.6, 0.6) for c in (-0.6, 0.6)]
    d["planner"]["rrt_star"]["max_iters"] = 200
    log = run_closed_loop(config_from_dict(d))
    assert log.verdict == NO_PATH and log.steps == 0


def test_horizon_study_and_outputs(scene_config, tmp_path):
    report = run_horizon_study(scene_config, [5], [5])
    runs = {(r["mode"], r["N"]): r for r in report["runs"]}
    assert runs[("governed", 5)]["verdict"] == CONVERGED
    assert runs[("ungoverned", 5)]["verdict"] == INFEASIBLE and runs[("ungoverned", 5)]["infeasible_at_k0"]
    files = write_study(report, tmp_path)
    assert (tmp_path / "study.json").exists() and (tmp_path / "study.csv").exists()
    assert (tmp_path / "governed_N5" / "trajectory.csv") in files
    json.loads((tmp_path / "study.json").read_text())
