import numpy as np
import pytest

from eddybox import standard_params


@pytest.fixture(scope="session")
def p_md():
    """Reference parameters, mean-diffusion (single-equilibrium) regime."""
    return standard_params()


@pytest.fixture(scope="session")
def p_nmd():
    """No-mean-diffusion (bistable) regime at P_e = 32."""
    return standard_params(P_e=32.0, mean_diffusion=False)


class CountingRNG:
    """Generator wrapper that counts Gaussian draws, for stream accounting."""

    def __init__(self, seed=0):
        self._rng = np.random.default_rng(seed)
        self.n_draws = 0

    def standard_normal(self, size=None):
        out = self._rng.standard_normal(size)
        self.n_draws += out.size if size is not None else 1
        return out


@pytest.fixture
def counting_rng():
    return CountingRNG
