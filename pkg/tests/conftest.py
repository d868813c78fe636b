import numpy as np
import pytest

from piconoise.operators import EncodingOperator
from piconoise.solvers import ReconSpec
from piconoise.synthetic import (
    make_pattern_cartesian,
    make_pattern_radial,
    make_pattern_variable_density,
    phantom_support,
    shepp_logan,
    synth_coils,
)
from piconoise.numerics import SeedSpec


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def coils16():
    return synth_coils((16, 16), 4)


@pytest.fixture(scope="session")
def cart_r2(coils16):
    """16x16, 4 coils, uniform Cartesian R=2, normalized."""
    return EncodingOperator(coils16, make_pattern_cartesian((16, 16), 2, 0)).normalized()


@pytest.fixture(scope="session")
def radial_r2(coils16):
    return EncodingOperator(coils16, make_pattern_radial((16, 16), 32, 16, 2)).normalized()


@pytest.fixture(scope="session")
def identity_op():
    """Single uniform coil, fully sampled: a unitary operator."""
    return EncodingOperator(np.ones((1, 8, 8)), make_pattern_cartesian((8, 8), 1, 0))


@pytest.fixture(scope="session")
def cs_system(coils16):
    pat = make_pattern_variable_density((16, 16), 2, 4, SeedSpec(3))
    op = EncodingOperator(coils16, pat).normalized()
    x = shepp_logan(16, 16)
    return ReconSpec.total_variation(op, 1e-2), x, op.forward(x)


@pytest.fixture(scope="session")
def support16():
    return phantom_support(16, 16)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
