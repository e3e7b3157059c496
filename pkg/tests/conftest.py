"""Shared scenario builders for the test suite."""

import pytest

from tbstat import FilterConfig, TrafficSpec

REFERENCE_SIZES = (1, 2, 3, 4)
REFERENCE_PROBS = (0.4, 0.3, 0.2, 0.1)


def reference_traffic(rate: float) -> TrafficSpec:
    """Four-class mix over sizes 1..4 at the given packet rate."""
    return TrafficSpec(REFERENCE_SIZES, REFERENCE_PROBS, rate)


@pytest.fixture(scope="session")
def reference_config() -> FilterConfig:
    return FilterConfig(bucket=5, buffer=5, period=1.0)
