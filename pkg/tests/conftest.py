import numpy as np
import pytest

from kerrfluor.model import DriveField, benchmark_params, device_params


@pytest.fixture
def bench():
    """K/2pi = -20 MHz, kappa_ex = kappa_in = 2pi 0.5 MHz, gamma_p = 2pi 0.1 MHz."""
    return benchmark_params()


@pytest.fixture
def device():
    return device_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def drive_at(params, f_over_sqrt_kex, omega_d=None):
    return DriveField.from_normalized(f_over_sqrt_kex, params, omega_d)
