import numpy as np
import pytest

from qmemory import channel as ch

T1_REF, T2_REF = 11902.0, 4235.0


def oracle_e(t, T):
    return float(np.exp(-t / T))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def chi_960():
    return ch.memory_channel(ch.MemoryChannelParams(960.0, T1_REF, T2_REF))
