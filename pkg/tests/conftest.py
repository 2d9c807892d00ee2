"""Shared fixtures. The expensive artifacts (profiled maps on the default
model) are session-scoped so the whole suite pays for them once."""

import numpy as np
import pytest

from layercache.estimator import AdaptiveKPolicy
from layercache.model import (
    SyntheticModel,
    affine_config,
    default_heterogeneous_config,
    linear_mixing_config,
)
from layercache.pipeline import profile_model
from layercache.sampler import linear_sigma_schedule


@pytest.fixture(scope="session")
def default_model():
    return SyntheticModel(default_heterogeneous_config())


@pytest.fixture(scope="session")
def desk_schedule(default_model):
    return linear_sigma_schedule(default_model.config.num_steps)


@pytest.fixture(scope="session")
def default_maps(default_model, desk_schedule):
    """(group map, velocity map) profiled once on the default model."""
    return profile_model(default_model, desk_schedule)


@pytest.fixture(scope="session")
def affine_model():
    return SyntheticModel(affine_config())


@pytest.fixture(scope="session")
def affine_maps(affine_model):
    schedule = linear_sigma_schedule(affine_model.config.num_steps)
    return profile_model(affine_model, schedule)


@pytest.fixture(scope="session")
def linear_model():
    return SyntheticModel(linear_mixing_config())


@pytest.fixture(scope="session")
def linear_maps(linear_model):
    schedule = linear_sigma_schedule(linear_model.config.num_steps)
    return profile_model(linear_model, schedule)


@pytest.fixture()
def policy():
    return AdaptiveKPolicy()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
