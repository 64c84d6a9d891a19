import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualrail_dd.noise import NoiseConfig
from dualrail_dd.operators import Gate, base_gate, circuit_unitary
from dualrail_dd.simulate import monte_carlo_channel, protected_wait, unitary_ptm
from dualrail_dd.tomography import (
    process_tomography,
    project_to_density,
    state_fidelity,
    state_tomography,
    trace_distance,
)

from conftest import random_density, random_unitary

BELL = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


def test_exact_state_tomography_returns_state():
    res = state_tomography(BELL)
    assert state_fidelity(res.estimate, BELL) == pytest.approx(1.0)
    assert res.to_dict()["shotsPerSetting"] == 0


def test_sampled_state_error_shrinks_with_shots():
    rho = random_density(np.random.default_rng(3), 2)
    errs = [
        np.mean([trace_distance(state_tomography(rho, s, seed=k).estimate, rho) for k in range(5)])
        for s in (100, 10000)
    ]
    assert errs[1] < errs[0] / 4
    assert errs[1] < 0.03


@settings(max_examples=20)
@given(st.integers(0, 10**6))
def test_projected_estimates_are_physical(seed):
    rho = random_density(np.random.default_rng(seed), 2, rank=1)
    est = state_tomography(rho, 50, seed=seed).estimate
    w = np.linalg.eigvalsh(est)
    assert w.min() > -1e-12
    assert np.trace(est).real == pytest.approx(1.0)


@given(st.integers(0, 10**6))
def test_projection_fixes_physical_states(seed):
    rho = random_density(np.random.default_rng(seed), 2)
    assert np.allclose(project_to_density(rho), rho, atol=1e-10)


def test_projection_clips_negative_eigenvalues():
    out = project_to_density(np.diag([1.2, -0.2]).astype(complex))
    assert np.allclose(out, np.diag([1.0, 0.0]))


@pytest.mark.parametrize("n", [1, 2])
def test_process_tomography_of_unitary(n):
    u = random_unitary(np.random.default_rng(n), 2**n)
    res = process_tomography(u, n)
    assert np.allclose(res.estimate, unitary_ptm(u), atol=1e-10)


def test_sampled_process_tomography_close():
    u = circuit_unitary([Gate.make("SQRT_ISWAP", (0, 1))], 2)
    res = process_tomography(u, 2, shots_per_setting=20000, seed=1)
    assert np.max(np.abs(res.estimate - unitary_ptm(u))) < 0.05


def test_process_tomography_of_simulated_channel():
    cfg = NoiseConfig(1, t1=20.0, t2=3.8, seed=0)
    est = monte_carlo_channel(protected_wait(None, 1, 1.0, 1.0), cfg, 200)
    res = process_tomography(est, 1)
    assert np.allclose(res.estimate, est.ptm, atol=1e-10)


def test_validation():
    with pytest.raises(ValueError):
        process_tomography(np.eye(8), 3)
    with pytest.raises(ValueError):
        process_tomography(np.eye(2), 2)
    with pytest.raises(ValueError):
        state_tomography(BELL, -1)
    with pytest.raises(ValueError):
        state_fidelity(np.eye(2) / 2, BELL)
    with pytest.raises(ValueError):
        state_fidelity(np.eye(4) / 4, 2 * BELL)
    with pytest.raises(ValueError):
        state_tomography(np.ones(3))


def test_fidelity_of_hadamard_state():
    plus = base_gate("H") @ np.array([1, 0], dtype=complex)
    assert state_fidelity(np.eye(2) / 2, plus) == pytest.approx(0.5)
