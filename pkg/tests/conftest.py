import numpy as np
import pytest

from attrition.diffusion import DiffusionSpec, resolve_truncation
from attrition.forms import affine, exponential
from attrition.payoffs import GameModel, validate


@pytest.fixture(scope="session")
def abm_model():
    """Workhorse arithmetic model: mu=-0.1, sigma=1, r=0.2, pi=x, l=(1, 1.5)."""
    spec = resolve_truncation(DiffusionSpec.abm(-0.1, 1.0), 0.2, center=0.25)
    m = GameModel.basic(spec, 0.2, affine(0, 1), exponential(10, 0.3, 2.0), 1.0, 1.5)
    validate(m)
    return m


@pytest.fixture(scope="session")
def homogeneous_model():
    from attrition.benchmarks import homogeneous_benchmark
    return homogeneous_benchmark()


@pytest.fixture(scope="session")
def gbm_model():
    spec = resolve_truncation(DiffusionSpec.gbm(0.03, 0.3), 0.15, center=1.0)
    m = GameModel.basic(spec, 0.15, affine(0, 1), affine(1.0, 17.0), 0.5, 0.8)
    validate(m)
    return m


@pytest.fixture(scope="session")
def ou_model():
    spec = resolve_truncation(DiffusionSpec.ou(0.5, 1.0, 0.6), 0.2, center=0.3)
    m = GameModel.basic(spec, 0.2, affine(0, 1), affine(14.0, 2.0), 0.1, 0.3)
    validate(m)
    return m


@pytest.fixture()
def rng():
    # fresh deterministic stream per test so draws do not depend on execution order
    return np.random.default_rng(20260810)
