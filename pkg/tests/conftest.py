import numpy as np
import pytest

from vtcoord.mission import GammaBounds
from vtcoord.mpc import Consensus, MpcConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_config(K=1, h=0.1, weights=(1.0, 1.0, 1.0), bounds=(0.0, 2.0, 2.0), cost=None):
    return MpcConfig(tuple(weights), K, h, GammaBounds(*bounds), cost=cost or Consensus())


def consensus_doc(n=3, K=1, h=0.1, gamma0=None, T=20.0, weights=(1.0, 1.0, 1.0), normalize=True,
                  bounds=(0.0, 2.0, 2.0), topology=None, **extra):
    """Minimal consensus scenario on concentric circles."""
    doc = {
        "schema": 1,
        "name": "test",
        "topology": topology or {"kind": "complete", "n_agents": n},
        "trajectories": {"generator": "concentric_circles", "center": [0, 0, 0], "base_radius": 4.0,
                         "radius_step": 1.5, "speed": 1.0, "duration": 200.0},
        "gamma_bounds": dict(zip(("rate_min", "rate_max", "accel_max"), bounds)),
        "mpc": {"weights": list(weights), "horizon": K, "h": h},
        "cost": {"variant": "consensus", "normalize": normalize},
        "initial": {"gamma0": list(gamma0) if gamma0 is not None else [float(i) for i in range(n)],
                    "gamma_dot0": 1.0},
        "mission": {"T": T},
    }
    doc.update(extra)
    return doc


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        passed, label, detail = RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key}. {label}: {detail}")
