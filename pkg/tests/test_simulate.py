import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualrail_dd.noise import NoiseConfig, sample_realization
from dualrail_dd.operators import Gate, circuit_unitary, ket_to_dm, basis_state
from dualrail_dd.simulate import (
    DensityState,
    InvariantViolation,
    Schedule,
    apply_depolarizing,
    choi_fidelity,
    evolve_shot,
    gate_schedule,
    matrix_units,
    monte_carlo_channel,
    process_fidelity,
    propagate,
    propagate_states,
    protected_wait,
    sequence_schedule,
    superop_from_outputs,
)
from dualrail_dd.toggling import build_sequence

from conftest import random_density

QUIET2 = NoiseConfig(2, t1=math.inf, t2=math.inf)


def memory_fidelity_cp(tau, t2, t1):
    """Identity fidelity of quasi-static dephasing composed with amplitude damping."""
    coh = math.exp(-((tau / t2) ** 2)) * math.exp(-tau / (2 * t1))
    return (2 * coh + math.exp(-tau / t1) + 1) / 4


def test_noiseless_gates_reproduce_unitary():
    gates = [Gate.make("H", [0]), Gate.make("ISWAP", [0, 1]), Gate.make("RZ", [1], 0.4)]
    sched = gate_schedule(gates, 2, layer_time=0.1)
    est = monte_carlo_channel(sched, QUIET2, 1)
    assert process_fidelity(est, circuit_unitary(gates, 2)) == pytest.approx(1.0, abs=1e-12)


def test_gate_schedule_packs_parallel_layers():
    gates = [Gate.make("X", [0]), Gate.make("X", [1]), Gate.make("CZ", [0, 1])]
    sched = gate_schedule(gates, 2, layer_time=0.05)
    assert sched.duration == pytest.approx(0.1)
    assert [e.time for e in sched.events] == pytest.approx([0.0, 0.0, 0.05])


@pytest.mark.parametrize("tau", [0.5, 2.0, 4.5])
def test_single_qubit_memory_matches_closed_form(tau):
    cfg = NoiseConfig(1, t1=20.0, t2=3.8, transverse_fraction=0.0, seed=1)
    sched = protected_wait(None, 1, tau, 1.0)
    est = monte_carlo_channel(sched, cfg, 40000)
    f = process_fidelity(est, np.eye(2))
    # Monte Carlo error on the Gaussian factor is ~ 1/sqrt(shots)
    assert f == pytest.approx(memory_fidelity_cp(tau, 3.8, 20.0), abs=3e-3)


def test_pure_damping_is_exact():
    cfg = NoiseConfig(1, t1=5.0, t2=math.inf)
    est = monte_carlo_channel(protected_wait(None, 1, 2.0, 1.0), cfg, 1)
    assert process_fidelity(est, np.eye(2)) == pytest.approx(
        memory_fidelity_cp(2.0, math.inf, 5.0), abs=1e-12
    )


def test_collective_dephasing_leaves_codespace_alone():
    cfg = NoiseConfig(2, t1=math.inf, t2=3.0, z_correlation=1.0, transverse_fraction=0.0)
    psi = (basis_state("01") + 1j * basis_state("10")) / math.sqrt(2)
    out = propagate(ket_to_dm(psi), protected_wait(None, 2, 5.0, 1.0), cfg, 200)
    assert np.max(np.abs(out - ket_to_dm(psi))) < 1e-12


def test_dd_pulses_leave_net_identity():
    for name, n in (("D2", 2), ("D2STAR", 2), ("D4", 4)):
        cfg = NoiseConfig(n, t1=math.inf, t2=math.inf)
        est = monte_carlo_channel(protected_wait(name, n, 3.0, 1.0), cfg, 1)
        assert process_fidelity(est, np.eye(2**n)) == pytest.approx(1.0, abs=1e-12)


def test_d2_protects_codespace_from_static_dephasing():
    cfg = NoiseConfig(2, t1=math.inf, t2=(3.8, 4.2), transverse_fraction=0.0, seed=2)
    psi = (basis_state("01") + basis_state("10")) / math.sqrt(2)
    tau = 4.0
    bare = propagate(ket_to_dm(psi), protected_wait(None, 2, tau, 1.0), cfg, 500).mean(0)[0]
    dd = propagate(ket_to_dm(psi), protected_wait("D2", 2, tau, 1.0), cfg, 500).mean(0)[0]
    assert abs(dd[1, 2]) > 0.49
    assert abs(bare[1, 2]) < 0.2


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.sampled_from([None, "D2", "D2STAR"]), st.floats(0.0, 3.0))
def test_outputs_are_density_matrices(seed, name, tau):
    cfg = NoiseConfig(2, t1=(20.0, 15.0), t2=(3.8, 4.2), transverse_fraction=0.2, seed=seed)
    sched = protected_wait(name, 2, tau, 1.0, error_rate=0.01, trotter_divisions=16)
    rho = random_density(np.random.default_rng(seed), 2)
    out = evolve_shot(DensityState(2, rho), sched, sample_realization(cfg, 0), cfg)
    assert out.rho.shape == (4, 4)


@settings(max_examples=10)
@given(st.integers(0, 10**6))
def test_channel_is_trace_preserving_and_cp(seed):
    cfg = NoiseConfig(2, t1=(20.0, 10.0), t2=(3.8, 4.2), transverse_fraction=0.3, seed=seed)
    outs = propagate(matrix_units(4), protected_wait("D2", 2, 2.0, 1.0, 0.02, 8), cfg, 20)
    mean = outs.mean(0)
    est_s = superop_from_outputs(mean)
    # trace preservation: Tr E(|a><b|) = delta_ab
    traces = np.trace(mean, axis1=-2, axis2=-1).reshape(4, 4)
    assert np.allclose(traces, np.eye(4), atol=1e-12)
    # Choi matrix positive semidefinite
    choi = mean.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(16, 16)
    assert np.linalg.eigvalsh((choi + choi.conj().T) / 2)[0] > -1e-10
    assert est_s.shape == (16, 16)


def test_trotter_refinement_converges():
    cfg = NoiseConfig(2, t1=(20.0, 5.0), t2=(3.8, 4.2), transverse_fraction=0.5, seed=7)
    rho = ket_to_dm((basis_state("01") + basis_state("11")) / math.sqrt(2))
    results = []
    for div in (10, 40, 160, 640):
        sched = Schedule(2, 3.0, (), 3.0 / div)
        results.append(propagate(rho, sched, cfg, 50).mean(0)[0])
    errs = [np.max(np.abs(r - results[-1])) for r in results[:-1]]
    assert errs[0] > errs[1] > errs[2]
    # second-order splitting: 4x finer step cuts the error ~16x
    assert errs[0] / errs[1] > 8


def test_split_schedule_matches_whole():
    cfg = NoiseConfig(2, t1=(20.0, 15.0), t2=(3.8, 4.2), seed=3)
    a = protected_wait("D2", 2, 1.0, 1.0, trotter_divisions=16)
    b = protected_wait("D2", 2, 2.0, 1.0, trotter_divisions=16)
    rho = ket_to_dm(basis_state("01"))
    whole = propagate(rho, a.then(b), cfg, 30)
    first = propagate(rho, a, cfg, 30)
    parts = propagate_states(first, b, cfg)
    assert np.max(np.abs(whole - parts)) < 1e-12


def test_choi_fidelity_matches_process_fidelity():
    cfg = NoiseConfig(1, t1=20.0, t2=3.8, transverse_fraction=0.0, seed=0)
    outs = propagate(matrix_units(2), protected_wait(None, 1, 2.0, 1.0), cfg, 500)
    per = choi_fidelity(outs, np.eye(2))
    est = monte_carlo_channel(protected_wait(None, 1, 2.0, 1.0), cfg, 500)
    assert per.mean() == pytest.approx(process_fidelity(est, np.eye(2)), abs=1e-12)


def test_sampled_mode_scatters_around_analytic():
    cfg = NoiseConfig(1, t1=20.0, t2=3.8, seed=4)
    sched = protected_wait(None, 1, 2.0, 1.0)
    exact = process_fidelity(monte_carlo_channel(sched, cfg, 2000), np.eye(2))
    est = monte_carlo_channel(sched, cfg, 2000, mode="sampled", shots_per_setting=20000)
    assert process_fidelity(est, np.eye(2), tol=0.05) == pytest.approx(exact, abs=0.02)
    with pytest.raises(ValueError):
        monte_carlo_channel(sched, cfg, 10, mode="bogus")


def test_depolarizing_limits():
    rho = random_density(np.random.default_rng(0), 2)
    full = apply_depolarizing(rho, [0, 1], 2, 1.0)
    assert np.allclose(full, np.eye(4) / 4)
    assert np.allclose(apply_depolarizing(rho, [0], 2, 0.0), rho)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(1, 1.0, (), 0.5)
    with pytest.raises(ValueError):
        Schedule(1, -1.0)
    with pytest.raises(ValueError):
        protected_wait(None, 1, -1.0, 1.0)
    seq = build_sequence("D2", 2, 1.0)
    assert sequence_schedule(seq, trotter_divisions=1).trotter_step <= 0.1


def test_invariant_violation_on_bad_state():
    with pytest.raises(InvariantViolation):
        DensityState(1, np.diag([1.2, -0.2]).astype(complex)).validate()
    with pytest.raises(InvariantViolation):
        DensityState(1, np.diag([0.4, 0.4]).astype(complex)).validate()


def test_process_fidelity_rejects_leaky_estimate():
    from dualrail_dd.simulate import ChannelEstimate

    ptm = np.eye(4)
    ptm[0, 0] = 0.8
    with pytest.raises(ValueError):
        process_fidelity(ChannelEstimate(1, ptm), np.eye(2))
