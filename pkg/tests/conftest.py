import numpy as np
import pytest

from nvbsm.circuits import BELL_LABELS, PulseLibrary, bell_prep_stage, bsm_stages, synthesize
from nvbsm.readout import tomography_stages

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def library() -> PulseLibrary:
    """Every pulse the pipelines use, synthesized once per session."""
    stages = bsm_stages() + list(tomography_stages()) + [bell_prep_stage(w) for w in BELL_LABELS]
    lib, _ = synthesize(stages)
    return lib


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
