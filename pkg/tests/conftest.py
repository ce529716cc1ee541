import numpy as np
import pytest

from pathfg.geometry import SphereObstacle, quadrotor_scene
from pathfg.model import QuadrotorParams, build_quadrotor_model
from pathfg.mpc import OcpSpec
from pathfg.sim import load_config, scene_path
from pathfg.terminal import synthesize_terminal_ingredients

Q_REF = np.diag([10.0] * 3 + [0.5] * 3 + [2.5] * 3)
R_REF = np.eye(4) / 10


@pytest.fixture(scope="session")
def quad_model():
    return build_quadrotor_model(QuadrotorParams())


@pytest.fixture(scope="session")
def scene_config():
    return load_config(scene_path("paper_quadrotor"))


@pytest.fixture(scope="session")
def scene_problem(scene_config):
    from pathfg.sim import build_problem
    return build_problem(scene_config)


@pytest.fixture(scope="session")
def one_obstacle_setup(quad_model):
    scene = quadrotor_scene([SphereObstacle([1.0, 0.0, 0.5], 0.3)])
    ts = synthesize_terminal_ingredients(quad_model, scene, Q_REF, R_REF)
    spec = OcpSpec(model=quad_model, scene=scene, terminal=ts, N=5, Q=Q_REF, R=R_REF)
    return quad_model, scene, ts, spec


@pytest.fixture(scope="session")
def empty_setup(quad_model):
    scene = quadrotor_scene([])
    ts = synthesize_terminal_ingredients(quad_model, scene, Q_REF, R_REF)
    spec = OcpSpec(model=quad_model, scene=scene, terminal=ts, N=5, Q=Q_REF, R=R_REF)
    return quad_model, scene, ts, spec
