import warnings

import pytest

from wecslab import gfs, mlp, rbf
from wecslab.refgen import PitchSaturationWarning, build_training_set
from wecslab.turbine import OperatingPoint, TurbineParams


@pytest.fixture(scope="session")
def params():
    return TurbineParams()


@pytest.fixture(scope="session")
def op(params):
    return OperatingPoint.from_params(params)


@pytest.fixture(scope="session")
def full_dataset(params):
    """Cut-in to cut-out grid, as the reference generator tabulates it."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PitchSaturationWarning)
        return build_training_set(params)


@pytest.fixture(scope="session")
def dataset(params):
    """Above-rated grid the controllers are trained on."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PitchSaturationWarning)
        return build_training_set(params, v_min=params.v_rated)


@pytest.fixture(scope="session")
def split(dataset):
    return dataset.split(0.2)


@pytest.fixture(scope="session")
def mlp_fit(split):
    return mlp.fit(split[0], mlp.MlpTrainConfig(seed=0))


@pytest.fixture(scope="session")
def rbf_fit(split):
    return rbf.fit(split[0], rbf.RbfTrainConfig(seed=0))


@pytest.fixture(scope="session")
def evolved(dataset, params):
    return gfs.evolve(gfs.GaConfig(seed=0), dataset, params)
