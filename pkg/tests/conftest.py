from __future__ import annotations

import numpy as np
import pytest

from reciperec import tensor as T
from reciperec.config import SyntheticSpec
from reciperec.synth import generate, write_synthetic


@pytest.fixture(autouse=True)
def _clean_tape():
    T.get_tape().reset()
    yield
    T.get_tape().reset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_graph():
    g, clusters = generate(SyntheticSpec())
    return g


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    write_synthetic(SyntheticSpec(), d)
    return d


# Acceptance tests append "PASS/FAIL ..." lines here; they are echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
