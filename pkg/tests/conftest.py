import numpy as np
import pytest

from gptorque import ExperimentConfig, TwoLinkPlanarArm, bundled_config_path


@pytest.fixture(scope="session")
def arm():
    return TwoLinkPlanarArm()


@pytest.fixture(scope="session")
def reference_config():
    return ExperimentConfig.from_json(bundled_config_path())


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
