# -*- coding: utf-8 -*-
"""
Pytest configuration and shared fixtures.
"""

import os
import sys

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from lung_dpn.config.settings import PipelineConfig  # noqa: E402
from lung_dpn.data.synth import SynthVolume, synth_crops, synth_generate  # noqa: E402

SLOW_ENV = "LUNG_DPN_RUN_SLOW"


@pytest.fixture(scope="session")
def desk_config() -> PipelineConfig:
    """Provide the desk-scale configuration (never mutate; use fresh_config for that)."""
    config = PipelineConfig.desk()
    config.progress = False
    return config


@pytest.fixture(scope="function")
def fresh_config() -> PipelineConfig:
    """Provide a desk-scale configuration a test may modify."""
    config = PipelineConfig.desk()
    config.progress = False
    return config


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    """Provide a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_volumes(desk_config: PipelineConfig) -> list:
    """Provide four small planted-nodule volumes."""
    return synth_generate(4, extent=48, config=desk_config.data, seed=7)


@pytest.fixture(scope="session")
def synth_volume(synth_volumes) -> SynthVolume:
    """Provide one planted-nodule volume."""
    return synth_volumes[0]


@pytest.fixture(scope="session")
def crop_set(desk_config: PipelineConfig):
    """Provide 40 balanced classifier crops."""
    return synth_crops(40, config=desk_config.data, seed=11)


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers automatically."""
    run_slow = os.environ.get(SLOW_ENV) == "1"

    for item in items:
        if "slow" in item.keywords and not run_slow:
            item.add_marker(pytest.mark.skip(reason=f"Set {SLOW_ENV}=1 to run slow tests"))

        # Mark integration tests
        if "integration" in item.nodeid or "pipeline" in item.nodeid:
            item.add_marker(pytest.mark.integration)

        if "gradcheck" in item.nodeid or "gradient" in item.nodeid:
            item.add_marker(pytest.mark.gradcheck)

        if "brute_force" in item.nodeid or "oracle" in item.nodeid:
            item.add_marker(pytest.mark.oracle)
