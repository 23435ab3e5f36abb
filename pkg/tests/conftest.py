"""Shared fixtures: the bundled benchmarks are synthesized and simulated once per session."""

import time

import numpy as np
import pytest

from ph_shape import pipeline, sim
from ph_shape.config import bundled_config_path, load_config
from ph_shape.mechanics import PhaseState, acrobot, cart_pole

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cp_sys():
    return cart_pole()


@pytest.fixture(scope="session")
def ac_sys():
    return acrobot()


@pytest.fixture(scope="session")
def cp_config():
    return load_config(bundled_config_path("cartpole"))


@pytest.fixture(scope="session")
def ac_config():
    return load_config(bundled_config_path("acrobot"))


def _timed_synth(cfg):
    t0 = time.perf_counter()
    ctrl, info = pipeline.synthesize(cfg)
    info["elapsed"] = time.perf_counter() - t0
    return ctrl, info


@pytest.fixture(scope="session")
def cp_synth(cp_config):
    return _timed_synth(cp_config)


@pytest.fixture(scope="session")
def ac_synth(ac_config):
    return _timed_synth(ac_config)


@pytest.fixture(scope="session")
def cp_ctrl(cp_synth):
    return cp_synth[0]


@pytest.fixture(scope="session")
def ac_ctrl(ac_synth):
    return ac_synth[0]


def _init(cfg):
    s = cfg.simulation
    return PhaseState(np.array(s.q0), np.zeros(len(s.q0)))


@pytest.fixture(scope="session")
def cp_traj(cp_ctrl, cp_config):
    return sim.simulate_closed_loop(cp_ctrl, _init(cp_config), cp_config.simulation.T)


@pytest.fixture(scope="session")
def cp_traj_cbi(cp_ctrl, cp_config):
    return sim.simulate_interconnected(cp_ctrl, _init(cp_config), cp_config.simulation.T)


@pytest.fixture(scope="session")
def cp_traj_undamped(cp_ctrl, cp_config):
    return sim.simulate_closed_loop(cp_ctrl.with_kd(0.0), _init(cp_config), 5.0)


@pytest.fixture(scope="session")
def ac_traj(ac_ctrl, ac_config):
    return sim.simulate_closed_loop(ac_ctrl, _init(ac_config), ac_config.simulation.T)


@pytest.fixture(scope="session")
def ac_traj_cbi(ac_ctrl, ac_config):
    return sim.simulate_interconnected(ac_ctrl, _init(ac_config), ac_config.simulation.T)


def random_states(ctrl, count, seed=0, spread=1.0):
    """In-domain ``(q, p)`` pairs."""
    rng = np.random.default_rng(seed)
    sys = ctrl.sys
    lo, hi = ctrl.domain
    out = []
    for _ in range(count):
        q = rng.uniform(-spread, spread, size=sys.n)
        q[sys.mass_coord] = rng.uniform(lo, hi)
        out.append((q, rng.normal(size=sys.n)))
    return out
