"""Shared fixtures: the default mixture and its exact denoiser."""

import pytest

from guidefit.denoisers import AnalyticDenoiser, MogSpec


@pytest.fixture(scope="session")
def mog():
    return MogSpec.default_2d()


@pytest.fixture(scope="session")
def exact(mog):
    # stateless, so session scope is safe
    return AnalyticDenoiser(mog)
