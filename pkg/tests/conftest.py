import sys

import numpy as np
import pytest
from hypothesis import settings

from gesurrogate.gp import fit
from gesurrogate.lattice import ModelSpec, exact_moments
from gesurrogate.training import TrainingTable, make_design

settings.register_profile("pkg", deadline=None, max_examples=60)
settings.load_profile("pkg")


def exact_table(spec, shape, bounds, counts, tau2=1e-8):
    """Training table of exact moments, with fixed small Monte Carlo variances."""
    design = make_design(bounds, counts)
    mv = [exact_moments(spec, b, shape) for b in design.points]
    m = np.array([x[0] for x in mv])
    v = np.array([x[1] for x in mv])
    return TrainingTable.from_moments(design.points, design.bounds, m, v, q=100, tau2_mu=tau2, tau2_sigma=tau2)


@pytest.fixture(scope="session")
def potts2():
    return ModelSpec.potts(2)


@pytest.fixture(scope="session")
def exact_table_3x3():
    return exact_table(ModelSpec.potts(2), (3, 3), [[0.3, 1.3]], 21)


@pytest.fixture(scope="session")
def fitted_3x3(exact_table_3x3):
    return {kind: fit(kind, exact_table_3x3, seed=0) for kind in ("S-GP", "NS-GP", "GE-NS-GP")}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
