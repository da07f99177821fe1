import numpy as np
import pytest

from app.schemas import StopRule, SystemConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def psm_qpsk() -> SystemConfig:
    return SystemConfig.psm(4, 2, "QPSK")


@pytest.fixture
def mdpsm_qpsk() -> SystemConfig:
    return SystemConfig.mdpsm(4, 4, 2, "QPSK", "QPSK", theta=30.0)


@pytest.fixture
def small_stop_rule() -> StopRule:
    return StopRule(min_bit_errors=50, max_channel_uses=20_000, batch_size=2_000)
