import numpy as np
import pytest

from measured_qubit import DetectorModel, DriveProtocol

import oracles


@pytest.fixture(scope="session")
def default_protocol() -> DriveProtocol:
    d = oracles.DEFAULT
    return DriveProtocol(g=d["g"], nu=d["nu"], tau=d["tau"], epsilon=d["eps"])


@pytest.fixture(scope="session")
def default_detector() -> DetectorModel:
    d = oracles.DEFAULT
    return DetectorModel(delta_i=d["delta_i"], s0=d["s0"], i0=d["i0"])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
