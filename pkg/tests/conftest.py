import numpy as np
import pytest

from viwo.lie import ErrorMode, so3_exp
from viwo.states import CameraClone, FilterState, ImuState

MODES = list(ErrorMode)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_rotation(rng, scale=1.0):
    return so3_exp(rng.normal(size=3) * scale)


def make_imu_state(rng):
    return ImuState(rot=random_rotation(rng),
                    vel=rng.normal(size=3) * 3.0,
                    pos=rng.normal(size=3) * 10.0,
                    bg=rng.normal(size=3) * 0.02,
                    ba=rng.normal(size=3) * 0.05)


def make_filter_state(rng, mode, n_clones=2, cov_scale=1e-3):
    imu = make_imu_state(rng)
    clones = [CameraClone(rot=random_rotation(rng),
                          pos=rng.normal(size=3) * 10.0, stamp=0.1 * (i + 1))
              for i in range(n_clones)]
    dim = 15 + 6 * n_clones
    A = rng.normal(size=(dim, dim))
    cov = cov_scale * (A @ A.T) / dim
    return FilterState(imu=imu, mode=mode, cov=cov, clones=clones)
