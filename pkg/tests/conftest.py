"""Shared fixtures: the default scenes and their receive banks.

Session scoped because bank construction and the scenes themselves are
immutable; tests must not mutate them in place.
"""

import numpy as np
import pytest

from widemimo import bank_for_scene, mimo_scene, phased_array_scene, true_delays


@pytest.fixture(scope="session")
def scene():
    return mimo_scene()


@pytest.fixture(scope="session")
def bank(scene):
    return bank_for_scene(scene)


@pytest.fixture(scope="session")
def tau0(scene):
    return true_delays(scene)


@pytest.fixture(scope="session")
def pa_scene():
    return phased_array_scene()


@pytest.fixture(scope="session")
def pa_bank(pa_scene):
    return bank_for_scene(pa_scene)


@pytest.fixture(scope="session")
def pa_tau0(pa_scene):
    return true_delays(pa_scene)


@pytest.fixture()
def rng():
    return np.random.default_rng(0xC0FFEE)
