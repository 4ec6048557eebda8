import pytest

from boxgas.model import IntensitySequence, ModelSpec, Potential

ACCEPTANCE_LINES: list[str] = []


def reference_model() -> ModelSpec:
    """d=1, v(0)=1, v(+-1)=1/2, q_k = 2^-k."""
    return ModelSpec(1, Potential.from_mapping(1, {0: 1.0, 1: 0.5}), IntensitySequence.geometric(1.0, 0.5))


def free_model(q=None) -> ModelSpec:
    return ModelSpec(1, Potential.zero(1), q or IntensitySequence.geometric(1.0, 0.5))


def nn2_model() -> ModelSpec:
    """d=2 nearest-neighbour model, v(0)=1, v(unit)=1/4."""
    pot = Potential.from_mapping(2, {(0, 0): 1.0, (1, 0): 0.25, (0, 1): 0.25})
    return ModelSpec(2, pot, IntensitySequence.geometric(1.0, 0.5))


@pytest.fixture
def ref():
    return reference_model()


@pytest.fixture
def free():
    return free_model()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
