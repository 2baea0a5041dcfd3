import numpy as np
import pytest

from cemgms.aux_space import build_aux
from cemgms.fem import discretize
from cemgms.grid import GridSpec, build_grid
from cemgms.medium import preset_medium
from cemgms.models import model_problem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_setup(Nc, nf, model="1", E=1e4, nbf=3, medium=None):
    grid = build_grid(GridSpec(Nc, Nc, nf, nf))
    mp = model_problem(model, grid)
    med = preset_medium(medium or mp.medium, grid, E)
    disc = discretize(grid, med)
    aux = build_aux(disc, nbf)
    return grid, mp, disc, aux


@pytest.fixture(scope="module")
def small_model1():
    return make_setup(4, 4, "1", 1e4)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
