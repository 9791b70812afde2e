import numpy as np
import pytest

from brepseq import VocabLayout, generate_procedural, train_codebook
from brepseq.codebook import solid_latents

# (kind, params) for the procedural fixture suite
FIXTURES = (
    [("box", {"size": (1.0, 1.0, 1.0)})]
    + [("n_prism", {"n": n}) for n in range(3, 9)]
    + [("l_bracket", {}), ("cylinder_approx", {})]
)
FIXTURE_SEED = 1


def fixture_solids():
    return [generate_procedural(k, p, seed=FIXTURE_SEED) for k, p in FIXTURES]


@pytest.fixture(scope="session")
def cube():
    return generate_procedural("box", {"size": (1.0, 1.0, 1.0), "center": (0, 0, 0), "angle": 0.0})


@pytest.fixture(scope="session")
def solids():
    return fixture_solids()


@pytest.fixture(scope="session")
def layout():
    return VocabLayout()


@pytest.fixture(scope="session")
def codebook(solids, cube):
    """Lossless on the fixture suite: fewer distinct patches than codewords."""
    cb = train_codebook(solid_latents(solids + [cube]), n_geo=4096, epochs=1, seed=0)
    assert cb.max_error == 0.0
    return cb


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
