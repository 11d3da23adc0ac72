import numpy as np
import pytest

from mheipg import NoiseSpec, Weights, ramp_inputs, simulate, unicycle_model


@pytest.fixture(scope="session")
def uni():
    return unicycle_model(0.2)


@pytest.fixture(scope="session")
def paper_weights():
    # residual weights from the benchmark noise levels (variances of the
    # 0.1 / 0.4 standard deviations)
    return Weights(q_diag=[0.01, 0.01, 0.01], r_diag=[0.16, 0.16])


@pytest.fixture(scope="session")
def nominal_traj(uni):
    noise = NoiseSpec(process_std=[0.1] * 3, meas_std=[0.4] * 2, clip=1.5, seed=314)
    return simulate(uni, [0.0, 0.0, 0.0], ramp_inputs(60), noise, dt=0.2)


@pytest.fixture(scope="session")
def noisefree_traj(uni):
    noise = NoiseSpec(process_std=[0.0] * 3, meas_std=[0.0] * 2, clip=1.5, seed=0)
    return simulate(uni, [0.0, 0.0, 0.0], ramp_inputs(60), noise, dt=0.2)
