import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cardmil.model import (
    NEGATIVE,
    POSITIVE,
    Bag,
    InstanceModel,
    NormalPotential,
    RatioPotential,
    UniformPotential,
)

# first inference call may trigger jit compilation; keep hypothesis from
# flagging it as a slow example
settings.register_profile(
    "cardmil",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("cardmil")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_bag(rng, m=None, d=None, label=None, bag_id="bag"):
    m = m or int(rng.integers(1, 8))
    d = d or int(rng.integers(1, 5))
    return Bag(bag_id, rng.standard_normal((m, d)), label)


def random_model(rng, d, include_bias=False, scale=2.0):
    theta = rng.uniform(-scale, scale, d + int(include_bias))
    return InstanceModel(theta, include_bias=include_bias)


def rotating_potential(rng, index):
    if index % 3 == 0:
        return NormalPotential(mu=float(rng.uniform(0, 1)), sigma=float(rng.uniform(0.05, 0.5)))
    if index % 3 == 1:
        return RatioPotential(rho=float(rng.uniform(0.05, 1.0)))
    return UniformPotential()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
