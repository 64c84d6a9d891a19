"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (echoed in the terminal summary) before
asserting, so a single run shows the status of all criteria.
"""
import math
import time

import numpy as np
import pytest

from dualrail_dd.experiments import MESSAGES, ExperimentConfig, run_experiment
from dualrail_dd.fitting import EXPONENTIAL, GAUSSIAN, fidelity_model, fit_decay
from dualrail_dd.logical import (
    LogicalCircuit,
    LogicalOp,
    LogicalRegister,
    compiled_unitary,
)
from dualrail_dd.noise import NoiseConfig
from dualrail_dd.operators import base_gate, equal_up_to_phase, pauli_matrix
from dualrail_dd.simulate import monte_carlo_channel, process_fidelity, protected_wait
from dualrail_dd.toggling import build_sequence, verify_symmetrization

from conftest import record_criterion

QUIET = {"t1": None, "t2": None}


def _cfg(**kw):
    return ExperimentConfig.from_dict(kw)


@pytest.fixture(scope="module")
def memory_run():
    t0 = time.perf_counter()
    res = run_experiment(_cfg(experiment="memory", shots=10_000, compareSequences=["D2STAR"]))
    return res, time.perf_counter() - t0


def test_two_qubit_symmetrization():
    t0 = time.perf_counter()
    ok, rep = verify_symmetrization(build_sequence("D2", 2, 1.0))
    elapsed = time.perf_counter() - t0
    passed = ok and abs(rep.collective_coefficient - 0.5) <= 1e-10 and elapsed < 1.0
    record_criterion(1, "D2 symmetrization", passed,
                     f"coefficient {rep.collective_coefficient:.12f}, cancelled "
                     f"{sorted(rep.cancelled)}, {elapsed:.3f} s")
    assert passed


def test_four_and_six_qubit_symmetrization():
    t0 = time.perf_counter()
    results = {}
    for name, n in (("D4", 4), ("DN", 6)):
        ok, rep = verify_symmetrization(build_sequence(name, n, 1.0))
        results[f"{name}({n})"] = (ok, rep.collective_coefficient)
    elapsed = time.perf_counter() - t0
    passed = all(ok for ok, _ in results.values()) and elapsed < 5.0
    detail = ", ".join(f"{k} pass={ok} c={c:.6f}" for k, (ok, c) in results.items())
    record_criterion(2, "D4 and DN(6) symmetrization", passed, f"{detail}, {elapsed:.2f} s")
    assert passed


def test_iswap_algebra():
    u, s = base_gate("ISWAP"), base_gate("SQRT_ISWAP")
    zz = np.kron(pauli_matrix("Z"), pauli_matrix("Z"))
    errs = [
        np.max(np.abs(u @ u - zz)),
        np.max(np.abs(np.linalg.matrix_power(u, 4) - np.eye(4))),
        np.max(np.abs(s @ s - u)),
    ]
    passed = max(errs) <= 1e-12
    record_criterion(3, "iSWAP algebra", passed, f"max error {max(errs):.1e}")
    assert passed


def _single_qubit_memory(taus, shots):
    cfg = NoiseConfig(1, t1=20.0, t2=3.8, transverse_fraction=0.0, seed=0)
    out = []
    for tau in taus:
        est = monte_carlo_channel(protected_wait(None, 1, float(tau), 1.0), cfg, shots)
        out.append(process_fidelity(est, np.eye(2)))
    return np.array(out)


def test_gaussian_memory_law():
    """Simulated identity fidelity against (2 exp(-(t/T2)^2) + exp(-t/T1) + 1) / 4.

    Amplitude damping also damps coherence by exp(-t / 2 T1), which this law
    omits, so the relative gap reaches a few percent at long delays.
    """
    taus = np.linspace(0.0, 6.0, 12)
    t0 = time.perf_counter()
    sim = _single_qubit_memory(taus, 100_000)
    elapsed = time.perf_counter() - t0
    law = 0.25 * (2 * np.exp(-((taus / 3.8) ** 2)) + np.exp(-taus / 20.0) + 1)
    rel = np.abs(sim - law) / law
    passed = bool(rel.max() <= 0.005) and elapsed < 30
    record_criterion(4, "Gaussian memory law within 0.5%", passed,
                     f"max relative error {rel.max():.4f} at tau={taus[rel.argmax()]:.2f} us, "
                     f"{elapsed:.1f} s")
    assert passed


def test_gaussian_memory_law_with_damped_coherence():
    """Companion check: the completely positive form matches within 0.5%."""
    taus = np.linspace(0.0, 6.0, 12)
    sim = _single_qubit_memory(taus, 100_000)
    coh = np.exp(-((taus / 3.8) ** 2)) * np.exp(-taus / 40.0)
    law = 0.25 * (2 * coh + np.exp(-taus / 20.0) + 1)
    rel = np.abs(sim - law) / law
    assert rel.max() <= 0.005


def test_collective_dephasing_immunity():
    grid = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    res = run_experiment(_cfg(
        experiment="memory", shots=200, tauGrid=grid,
        # collective means identical offsets, so both qubits share one T2
        noise={"t1": None, "t2": [3.8, 3.8], "zCorrelation": 1.0, "transverseFraction": 0.0},
    ))
    worst = 0.0
    for label in ("L1 unprotected", "L1 D2"):
        worst = max(worst, float(np.max(np.abs(res.curve(label).values() - 1.0))))
    passed = worst <= 1e-6
    record_criterion(5, "collective dephasing immunity", passed, f"max |1 - F| = {worst:.1e}")
    assert passed


def test_protection_ordering(memory_run):
    res, elapsed = memory_run
    t2p = {lab: res.fit(lab, EXPONENTIAL)["T2p_us"] for lab in
           ("L1 D2STAR", "L1 D2", "L1 unprotected")}
    t2p = {k: math.inf if v is None else v for k, v in t2p.items()}
    best_phys = max(res.fit(q, GAUSSIAN)["T2_us"] for q in ("Q1", "Q2"))
    passed = (
        t2p["L1 D2STAR"] >= t2p["L1 D2"] > t2p["L1 unprotected"]
        and t2p["L1 D2"] >= 1.5 * best_phys
        and elapsed < 120
    )
    record_criterion(6, "protection ordering", passed,
                     f"T2p D2*={t2p['L1 D2STAR']:.4f}, D2={t2p['L1 D2']:.4f}, "
                     f"unprotected={t2p['L1 unprotected']:.4f}, best physical T2={best_phys:.3f} us, "
                     f"{elapsed:.1f} s")
    assert passed


def test_unprotected_logical_decays_faster(memory_run):
    res, _ = memory_run
    logical = res.curve("L1 unprotected")
    q1, q2 = res.curve("Q1").values(), res.curve("Q2").values()
    mask = logical.taus() > 0
    gaps = np.minimum(q1, q2)[mask] - logical.values()[mask]
    passed = bool(np.all(gaps > 0))
    record_criterion(7, "unprotected logical below each physical qubit", passed,
                     f"smallest margin {gaps.min():.4f} over {mask.sum()} delays")
    assert passed


def test_logical_gate_correctness():
    r1, r2 = LogicalRegister(1), LogicalRegister(2)
    rx = r1.restrict(compiled_unitary(LogicalCircuit(1, (LogicalOp("RXM90", (0,)),)), r1))
    target = np.cos(np.pi / 4) * np.eye(2) + 1j * np.sin(np.pi / 4) * pauli_matrix("X")
    err_rx = float(np.max(np.abs(rx - target)))
    cz = r2.restrict(compiled_unitary(LogicalCircuit(2, (LogicalOp("CZ", (0, 1)),)), r2))
    cz_ok = equal_up_to_phase(cz, np.diag([1, 1, 1, -1]), tol=1e-12)
    rng = np.random.default_rng(2024)
    singles = ["RZ", "RXM90", "H", "X", "Z"]
    random_ok = 0
    for _ in range(100):
        ops = []
        for _ in range(6):
            if rng.random() < 0.25:
                ops.append(LogicalOp("CZ", tuple(rng.permutation(2))))
            else:
                g = singles[rng.integers(len(singles))]
                ops.append(LogicalOp(g, (int(rng.integers(2)),),
                                     float(rng.uniform(-np.pi, np.pi)) if g == "RZ" else None))
        circ = LogicalCircuit(2, tuple(ops))
        random_ok += equal_up_to_phase(r2.restrict(compiled_unitary(circ, r2)), circ.unitary(), tol=1e-10)
    passed = err_rx <= 1e-12 and cz_ok and random_ok == 100
    record_criterion(8, "logical gate compilation", passed,
                     f"Rx error {err_rx:.1e}, CZ ok={cz_ok}, random circuits {random_ok}/100")
    assert passed


def test_fit_self_consistency():
    taus = np.linspace(0.0, 6.0, 13)
    worst = 0.0
    for model, values in ((GAUSSIAN, (3.8, 4.1, 4.2)), (EXPONENTIAL, (9.2, 12.5, 15.0))):
        for t2 in values:
            pts = list(zip(taus, fidelity_model(taus, t2, 20.0, model)))
            fit = fit_decay(pts, model)
            worst = max(worst, abs(fit.t2 - t2) / t2)
    passed = worst <= 0.005
    record_criterion(9, "fit recovers planted times", passed, f"max relative error {worst:.2e}")
    assert passed


def test_ramsey_consistency():
    w = 2.0
    grid = list(np.round(np.linspace(0.0, 6.0, 13), 10))
    quiet = run_experiment(_cfg(experiment="ramsey", noise=QUIET, shots=1, detuning=w, tauGrid=grid))
    c = quiet.curve("L1 <Z>")
    err = float(np.max(np.abs(c.values() + np.cos(w * c.taus()))))
    noisy = run_experiment(_cfg(experiment="ramsey", shots=10_000, detuning=w, tauGrid=grid))
    rel = noisy.extras.get("relativeDifference", math.inf)
    passed = err <= 1e-6 and rel <= 0.10
    record_criterion(10, "Ramsey fringe and envelope", passed,
                     f"noiseless error {err:.1e}; envelope T2p {noisy.extras.get('ramseyT2p_us')} "
                     f"vs memory {noisy.extras.get('memoryT2p_us')} (relative {rel:.3%})")
    assert passed


def test_bell_preparation():
    quiet = run_experiment(_cfg(experiment="bell", noise=QUIET, shots=1))
    f_quiet = quiet.extras["fidelities"]["compiled"]["exact"]
    noisy = run_experiment(_cfg(experiment="bell", shots=2000, gateErrorRate=0.002))
    f = {k: v["exact"] for k, v in noisy.extras["fidelities"].items()}
    passed = abs(f_quiet - 1) <= 1e-10 and f["encodeLast"] >= f["compiled"]
    record_criterion(11, "Bell preparation", passed,
                     f"noiseless {f_quiet:.12f}; noisy encode-last {f['encodeLast']:.4f} "
                     f">= compiled {f['compiled']:.4f}")
    assert passed


def test_superdense_coding():
    grid = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0]
    quiet = run_experiment(_cfg(experiment="superdense", noise=QUIET, shots=1, tauGrid=[0.0]))
    per = quiet.extras["messageSuccess"]
    quiet_ok = all(abs(per[v][m][0] - 1) <= 1e-9 for v in ("physical", "logical") for m in MESSAGES)
    base = dict(experiment="superdense", shots=300, tauGrid=grid, trotterDivisions=2)
    ideal = run_experiment(_cfg(**base))
    crossover = ideal.extras["crossoverTauUs"]
    diff = np.array(ideal.extras["logicalMinusPhysical"])
    crossover_ok = crossover is not None and bool(np.any(diff < 0)) and crossover > grid[0]
    gated = run_experiment(_cfg(**base, gateErrorRate=0.002))
    p0, l0 = gated.curve("physical").values()[0], gated.curve("logical").values()[0]
    passed = quiet_ok and crossover_ok and p0 > l0
    record_criterion(12, "superdense coding", passed,
                     f"noiseless all messages = 1: {quiet_ok}; crossover tau* = {crossover} us; "
                     f"with gate errors at tau=0 physical {p0:.4f} vs logical {l0:.4f}")
    assert passed


def test_determinism():
    configs = [
        dict(experiment="memory", shots=30, tauGrid=[0, 1, 2, 3]),
        dict(experiment="ramsey", shots=30, detuning=1.0, tauGrid=[0, 1, 2, 3]),
        dict(experiment="bell", shots=30, gateErrorRate=0.002),
        dict(experiment="superdense", shots=10, tauGrid=[0.0, 1.0], trotterDivisions=2),
        dict(experiment="verify-sequence", sequence="D4"),
    ]
    same = []
    for d in configs:
        a = run_experiment(_cfg(**d)).to_json().encode()
        b = run_experiment(_cfg(**d)).to_json().encode()
        same.append(a == b)
    passed = all(same)
    record_criterion(13, "byte-identical reruns", passed,
                     ", ".join(f"{d['experiment']}={s}" for d, s in zip(configs, same)))
    assert passed
