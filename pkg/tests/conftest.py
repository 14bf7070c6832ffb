"""Shared fixtures: one mid-size reference channel and one small channel."""

import numpy as np
import pytest

from nfloc.channel import StateModel, build_channel
from nfloc.measurement import MeasurementSet, noise_floor_from_crlb
from nfloc.scenario import reference_scenario


@pytest.fixture(scope="session")
def ref_scenario():
    """Default-shape scenario (5 anchors, 100 elements, 2 slots)."""
    return reference_scenario(seed=7)


@pytest.fixture(scope="session")
def ref_channel(ref_scenario):
    return build_channel(ref_scenario)


@pytest.fixture(scope="session")
def small_scenario():
    """Cheap scenario for structural and finite-difference tests."""
    return reference_scenario(
        num_anchors=3,
        num_elements=4,
        num_slots=2,
        seed=5,
        anchor_velocity_mode="distinct",
    )


@pytest.fixture(scope="session")
def small_channel(small_scenario):
    return build_channel(small_scenario)


@pytest.fixture(scope="session")
def exact_measurements():
    """Factory: measurement set equal to the true tables, CRLB-floor sigmas."""

    def _make(channel):
        sigma_tau, sigma_doppler = noise_floor_from_crlb(channel)
        return MeasurementSet(
            delay_meas=channel.tables.delay.copy(),
            doppler_meas=channel.tables.doppler.copy(),
            sigma_tau=sigma_tau,
            sigma_doppler=sigma_doppler,
            seed=0,
        )

    return _make


@pytest.fixture(scope="session")
def state_model():
    """Factory: estimator-facing model frozen from a channel."""

    def _make(channel):
        return StateModel.from_channel(channel)

    return _make
