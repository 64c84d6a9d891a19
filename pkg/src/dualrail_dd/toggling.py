"""Toggling frames and first-order average Hamiltonians of decoupling sequences.

A sequence is a list of instantaneous pulses.  Between pulses the couplings are
seen through the accumulated pulse product ``U_k = P_k ... P_1``; the first-order
average Hamiltonian is the time-weighted mean of ``U_k^dagger H U_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .operators import (
    Coupling,
    Gate,
    PauliTerm,
    circuit_unitary,
    conjugate,
    decompose_pauli,
    interaction_couplings,
    pauli_labels,
)

CANCEL_TOL = 1e-10

SEQUENCE_NAMES = ("D2", "D2STAR", "D4", "DN")


@dataclass(frozen=True, eq=False)
class Pulse:
    time: float
    gates: tuple[Gate, ...]
    unitary: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class PulseSequence:
    """Timed instantaneous pulses; one cycle of length ``period`` repeated ``reps`` times."""

    n: int
    period: float
    pulses: tuple[Pulse, ...]
    name: str = "custom"
    reps: int = 1

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        times = [p.time for p in self.pulses]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("pulse times must be strictly increasing")
        if times and (times[0] <= 0 or times[-1] > self.duration * (1 + 1e-12)):
            raise ValueError("pulse times must lie in (0, period * reps]")
        d = 2**self.n
        for p in self.pulses:
            if p.unitary.shape != (d, d):
                raise ValueError("pulse unitary does not match register size")

    @property
    def duration(self) -> float:
        return self.period * self.reps

    def cycle_pulses(self) -> tuple[Pulse, ...]:
        return tuple(p for p in self.pulses if p.time <= self.period * (1 + 1e-12))


@dataclass(frozen=True, eq=False)
class TogglingFrame:
    index: int
    frame_unitary: np.ndarray = field(repr=False)
    weight: float


@dataclass
class AverageReport:
    per_coupling: dict[str, list[PauliTerm]]
    survivors: list[str]
    cancelled: list[str]
    cycle_closure: float
    second_order_norm: float = 0.0
    passed: bool | None = None
    collective_coefficient: float | None = None

    def to_dict(self) -> dict:
        return {
            "perCoupling": {
                k: [t.to_dict() for t in v] for k, v in self.per_coupling.items()
            },
            "survivors": list(self.survivors),
            "cancelled": list(self.cancelled),
            "cycleClosure": float(self.cycle_closure),
            "secondOrderNorm": float(self.second_order_norm),
            "passed": self.passed,
            "collectiveCoefficient": self.collective_coefficient,
        }


def custom_sequence(
    n: int,
    period: float,
    pulses: Sequence[tuple[float, Sequence[Gate]]],
    name: str = "custom",
    reps: int = 1,
) -> PulseSequence:
    """Sequence from ``(time, gates)`` pairs given for one cycle."""
    out = []
    for r in range(reps):
        for t, gates in pulses:
            gates = tuple(gates)
            touched = [q for g in gates for q in g.targets]
            if len(touched) != len(set(touched)):
                raise ValueError("gates within one pulse must act on disjoint qubits")
            out.append(Pulse(r * period + t, gates, circuit_unitary(gates, n)))
    return PulseSequence(n, period, tuple(out), name, reps)


def brickwork_layers(n: int) -> tuple[tuple[Gate, ...], tuple[Gate, ...]]:
    """Even-bond and odd-bond parallel iSWAP layers on a ring of n qubits."""
    even = tuple(Gate.make("ISWAP", (q, q + 1)) for q in range(0, n, 2))
    odd = tuple(Gate.make("ISWAP", (q, (q + 1) % n)) for q in range(1, n, 2))
    return even, odd


def build_sequence(name: str, n: int, period: float, reps: int = 1) -> PulseSequence:
    """One of the named protection procedures.

    ``D2`` and ``D2STAR`` put 4 and 8 iSWAPs on a pair at equal spacing.  ``DN``
    on a ring of 2N qubits cycles the layer word ``(even, even, even, odd)`` N
    times; ``D4`` is its 4-qubit instance and ``D2`` coincides with N = 1.
    """
    key = str(name).upper().replace("*", "STAR")
    if key not in SEQUENCE_NAMES:
        raise ValueError(f"unknown sequence {name!r}; expected one of {SEQUENCE_NAMES}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if key in ("D2", "D2STAR"):
        if n != 2:
            raise ValueError(f"{key} acts on 2 qubits, got n={n}")
        count = 4 if key == "D2" else 8
        gates = (Gate.make("ISWAP", (0, 1)),)
        layers = [gates] * count
    else:
        if key == "D4" and n != 4:
            raise ValueError(f"D4 acts on 4 qubits, got n={n}")
        if n < 2 or n % 2:
            raise ValueError(f"DN needs an even register size, got n={n}")
        even, odd = brickwork_layers(n)
        layers = [even, even, even, odd] * (n // 2)
    m = len(layers)
    seq = custom_sequence(
        n, period, [(period * (k + 1) / m, g) for k, g in enumerate(layers)], key, reps
    )
    if key == "DN":
        ok, report = verify_symmetrization(seq)
        if not ok:
            raise RuntimeError(f"generated DN sequence for n={n} failed symmetrization")
    return seq


def enumerate_frames(seq: PulseSequence) -> list[TogglingFrame]:
    """Frames of every nonzero-length interval; frame 0 is the identity."""
    d = 2**seq.n
    bounds = [0.0] + [p.time for p in seq.pulses] + [seq.duration]
    u = np.eye(d, dtype=complex)
    frames = []
    for k in range(len(bounds) - 1):
        if k > 0:
            u = seq.pulses[k - 1].unitary @ u
        length = bounds[k + 1] - bounds[k]
        if length > 1e-12 * seq.duration:
            frames.append(TogglingFrame(len(frames), u.copy(), length / seq.duration))
    total = sum(f.weight for f in frames)
    return [TogglingFrame(f.index, f.frame_unitary, f.weight / total) for f in frames]


def _cycle_closure(seq: PulseSequence) -> float:
    d = 2**seq.n
    u = np.eye(d, dtype=complex)
    for p in seq.cycle_pulses():
        u = p.unitary @ u
    tr = np.trace(u)
    phase = tr / abs(tr) if abs(tr) > 1e-12 else 1.0
    return float(np.max(np.abs(u - phase * np.eye(d))))


def _second_order_norm(frames, images) -> float:
    # Omega_2 = (-i/2) sum_{j>k} [H_j, H_k] w_j w_k  (per unit coupling and period)
    acc = np.zeros_like(images[0])
    run = np.zeros_like(images[0])
    for f, h in zip(frames, images):
        acc += f.weight * (h @ run - run @ h)
        run = run + f.weight * h
    return float(np.linalg.norm(acc, 2) / 2)


def average_coupling(seq: PulseSequence, couplings: Sequence[Coupling]) -> AverageReport:
    """First-order average of each coupling's system operator over the sequence."""
    frames = enumerate_frames(seq)
    per, survivors, cancelled = {}, [], []
    second = 0.0
    for c in couplings:
        if c.system.n != seq.n:
            raise ValueError(
                f"coupling {c.label} has {c.system.n} qubits, sequence has {seq.n}"
            )
        p = c.system.to_matrix()
        images = [conjugate(f.frame_unitary, p) for f in frames]
        avg = sum(f.weight * h for f, h in zip(frames, images))
        terms = decompose_pauli(avg, tol=CANCEL_TOL)
        per[c.label] = terms
        (survivors if terms else cancelled).append(c.label)
        second = max(second, _second_order_norm(frames, images))
    return AverageReport(per, survivors, cancelled, _cycle_closure(seq), second)


def verify_symmetrization(seq: PulseSequence) -> tuple[bool, AverageReport]:
    """Check z couplings become ``c * sum_k Z_k`` (common c > 0) and x/y cancel."""
    n = seq.n
    couplings = interaction_couplings(n)
    report = average_coupling(seq, couplings)
    target = np.zeros(4**n)
    labels = pauli_labels(n)
    z_idx = [labels.index("".join("Z" if j == k else "I" for j in range(n))) for k in range(n)]
    target[z_idx] = 1.0
    ok = True
    coeffs = []
    for c in couplings:
        terms = report.per_coupling[c.label]
        axis = c.label[2]
        if axis in "xy":
            ok &= not terms
            continue
        vec = np.zeros(4**n, dtype=complex)
        for t in terms:
            vec[labels.index(t.letters)] = t.coefficient
        cval = vec[z_idx[0]].real
        coeffs.append(cval)
        ok &= bool(np.max(np.abs(vec - cval * target)) <= CANCEL_TOL)
    c0 = float(np.mean(coeffs)) if coeffs else 0.0
    ok &= c0 > CANCEL_TOL and bool(np.max(np.abs(np.array(coeffs) - c0)) <= CANCEL_TOL)
    report.passed = bool(ok)
    report.collective_coefficient = c0
    return bool(ok), report
