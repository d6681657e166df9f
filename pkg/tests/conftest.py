import numpy as np
import pytest

import run_monitor

# Two-asset instance: mu_A = 0.1, mu_B = 0.6, sigma_AA = 0.2, sigma_AB = -0.1, sigma_BB = 0.4
TWO_ASSET_MU = np.array([0.1, 0.6])
TWO_ASSET_SIGMA = np.array([[0.2, -0.1], [-0.1, 0.4]])


@pytest.fixture(autouse=True)
def quiet_status():
    """Keep status lines out of test output"""
    previous = run_monitor._VERBOSE
    run_monitor.set_verbose(False)
    yield
    run_monitor.set_verbose(previous)


@pytest.fixture
def two_asset():
    return TWO_ASSET_MU.copy(), TWO_ASSET_SIGMA.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, n, rank=None, shift=0.0):
    """G G^T / k (+ shift I) with G n x k standard normal"""
    k = n if rank is None else rank
    G = rng.standard_normal((n, k))
    S = G @ G.T / k + shift * np.eye(n)
    return 0.5 * (S + S.T)
