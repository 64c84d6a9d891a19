"""Density-matrix evolution under sampled classical noise, gates and T1 decay.

Shots are processed as a batch: the working array has shape ``(S, K, d, d)``
holding K input operators for each of S noise realizations.  Averaging the
per-shot outputs over S gives the effective channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .noise import (
    ORNSTEIN_UHLENBECK,
    NoiseConfig,
    NoiseRealization,
    damping_probability,
    sample_batch,
)
from .operators import (
    Gate,
    embed,
    pauli_basis,
    pauli_labels,
    superop_from_map,
    superop_to_ptm,
    ptm_to_superop,
    unitary_superop,
    vec,
)
from .toggling import PulseSequence, build_sequence

DEFAULT_TROTTER_DIVISIONS = 64

# cap on complex entries held per shot chunk
_CHUNK_ENTRIES = 2**22


class InvariantViolation(RuntimeError):
    """An evolved state or channel broke a physical invariant."""


@dataclass(frozen=True, eq=False)
class DensityState:
    n: int
    rho: np.ndarray = field(repr=False)

    def validate(self, tol: float = 1e-9) -> "DensityState":
        rho = self.rho
        if rho.shape != (2**self.n, 2**self.n):
            raise InvariantViolation(f"density matrix has shape {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise InvariantViolation("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1) > tol:
            raise InvariantViolation(f"trace {np.trace(rho).real:.12g} differs from 1")
        if np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0] < -tol:
            raise InvariantViolation("density matrix has a negative eigenvalue")
        return self

    @classmethod
    def from_ket(cls, psi: np.ndarray) -> "DensityState":
        psi = np.asarray(psi, dtype=complex)
        n = psi.size.bit_length() - 1
        return cls(n, np.outer(psi, psi.conj()))


@dataclass(frozen=True, eq=False)
class Event:
    """Instantaneous gate at ``time``; ``gate`` is the full register matrix."""

    time: float
    gate: np.ndarray = field(repr=False)
    targets: tuple[int, ...] = ()
    error_rate: float = 0.0
    label: str = ""


@dataclass(frozen=True, eq=False)
class Schedule:
    n: int
    duration: float
    events: tuple[Event, ...] = ()
    trotter_step: float | None = None
    # (start time, step) pairs overriding trotter_step from that time onward
    segment_steps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("events must be time-ordered")
        if times and (times[0] < 0 or times[-1] > self.duration * (1 + 1e-12) + 1e-15):
            raise ValueError("event times must lie in [0, duration]")
        if self.trotter_step is None:
            object.__setattr__(
                self, "trotter_step", self.duration / DEFAULT_TROTTER_DIVISIONS or 1.0
            )
        if not self.trotter_step > 0:
            raise ValueError("trotterStep must be positive")
        if self.duration > 0 and self.trotter_step > self.duration / 10 * (1 + 1e-12):
            raise ValueError("trotterStep must not exceed duration / 10")
        d = 2**self.n
        for e in self.events:
            if e.gate.shape != (d, d):
                raise ValueError("event gate does not match register size")
            if not 0 <= e.error_rate <= 1:
                raise ValueError("gate error rate must lie in [0, 1]")
        if any(not st > 0 for _, st in self.segment_steps):
            raise ValueError("segment steps must be positive")

    def step_at(self, t: float) -> float:
        """Trotter step for an interval starting at ``t``."""
        step = self.trotter_step
        for start, st in self.segment_steps:
            if start <= t + 1e-12:
                step = st
        return step

    def _segments(self) -> tuple[tuple[float, float], ...]:
        return self.segment_steps or ((0.0, self.trotter_step),)

    def then(self, other: "Schedule") -> "Schedule":
        """Concatenate, shifting ``other`` to start at this schedule's end."""
        if other.n != self.n:
            raise ValueError("register sizes differ")
        shifted = tuple(
            Event(e.time + self.duration, e.gate, e.targets, e.error_rate, e.label)
            for e in other.events
        )
        step = min(self.trotter_step, other.trotter_step)
        total = self.duration + other.duration
        if total > 0:
            step = min(step, total / 10)
        segs = self._segments() + tuple(
            (t + self.duration, st) for t, st in other._segments()
        )
        return Schedule(self.n, total, self.events + shifted, step, segs)


def gate_event(gate: Gate, n: int, time: float = 0.0, error_rate: float = 0.0) -> Event:
    return Event(time, gate.matrix(n), tuple(gate.targets), error_rate, gate.name)


def gate_schedule(
    gates: Sequence[Gate], n: int, error_rate: float = 0.0, layer_time: float = 0.0
) -> Schedule:
    """Gates packed greedily into parallel layers, ``layer_time`` apart.

    Layer k fires at ``k * layer_time``; the schedule lasts ``L * layer_time``.
    """
    busy: dict[int, int] = {}
    placed = []
    for g in gates:
        layer = max((busy.get(q, -1) for q in g.targets), default=-1) + 1
        for q in g.targets:
            busy[q] = layer
        placed.append((layer, g))
    layers = 1 + max((lay for lay, _ in placed), default=-1)
    events = tuple(
        gate_event(g, n, lay * layer_time, error_rate)
        for lay, g in sorted(placed, key=lambda x: x[0])
    )
    duration = layers * layer_time
    step = duration / DEFAULT_TROTTER_DIVISIONS if duration > 0 else None
    return Schedule(n, duration, events, step)


def sequence_schedule(
    seq: PulseSequence,
    error_rate: float = 0.0,
    trotter_divisions: int = DEFAULT_TROTTER_DIVISIONS,
) -> Schedule:
    """Realize a pulse sequence in time, one event per gate."""
    events = []
    for p in seq.pulses:
        for g in p.gates:
            events.append(gate_event(g, seq.n, p.time, error_rate))
    times = [0.0] + [p.time for p in seq.pulses] + [seq.duration]
    gaps = [b - a for a, b in zip(times, times[1:]) if b - a > 0]
    step = min(min(gaps) / trotter_divisions, seq.duration / 10)
    return Schedule(seq.n, seq.duration, tuple(events), step)


def protected_wait(
    name: str | None,
    n: int,
    duration: float,
    period: float,
    error_rate: float = 0.0,
    trotter_divisions: int = DEFAULT_TROTTER_DIVISIONS,
) -> Schedule:
    """Idle of ``duration``, optionally filled with whole cycles of a sequence.

    The cycle count is ``ceil(duration / period)`` and the cycle is compressed to
    fit exactly, so the net frame at the end is the closed-cycle product.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if name is None or duration == 0:
        step = duration / max(trotter_divisions, 10) if duration > 0 else None
        return Schedule(n, duration, (), step)
    cycles = max(1, math.ceil(duration / period - 1e-9))
    seq = build_sequence(name, n, duration / cycles, cycles)
    return sequence_schedule(seq, error_rate, trotter_divisions)


# --- batched propagation ---------------------------------------------------------

def _damp_axis(rho: np.ndarray, n: int, q: int, p: float) -> np.ndarray:
    if p == 0:
        return rho
    a, b = 2**q, 2 ** (n - q - 1)
    r = rho.reshape(*rho.shape[:-2], a, 2, b, a, 2, b)
    out = r.copy()
    s = math.sqrt(1.0 - p)
    out[..., :, 0, :, :, 0, :] += p * r[..., :, 1, :, :, 1, :]
    out[..., :, 1, :, :, 1, :] *= 1.0 - p
    out[..., :, 0, :, :, 1, :] *= s
    out[..., :, 1, :, :, 0, :] *= s
    return out.reshape(rho.shape)


def apply_damping(rho: np.ndarray, t1: Sequence[float], dt: float) -> np.ndarray:
    """Independent amplitude damping on every qubit over ``dt``. Batched."""
    n = len(t1)
    for q in range(n):
        rho = _damp_axis(rho, n, q, damping_probability(t1[q], dt))
    return rho


def apply_depolarizing(rho: np.ndarray, targets: Sequence[int], n: int, p: float) -> np.ndarray:
    """``(1-p) rho + p Tr_T(rho) (x) I_T / d_T`` via a Pauli twirl. Batched."""
    if p == 0:
        return rho
    k = len(targets)
    twirl = np.zeros_like(rho)
    for m in pauli_basis(k):
        big = embed(m, targets, n)
        twirl = twirl + big @ rho @ big.conj().T
    return (1 - p) * rho + p * twirl / 4**k


def _z_signs(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    bits = (idx[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    return 1.0 - 2.0 * bits  # (n, d): eigenvalue of Z_k on basis state


def _transverse_ops(n: int) -> np.ndarray:
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    y = np.array([[0, -1j], [1j, 0]], dtype=complex)
    return np.stack([np.stack([embed(x, [k], n), embed(y, [k], n)]) for k in range(n)])


def _hermitian_expm(h: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)[..., None, :]) @ v.conj().swapaxes(-1, -2)


class _Propagator:
    def __init__(self, sched: Schedule, cfg: NoiseConfig, reals: Sequence[NoiseRealization], k: int):
        if cfg.n != sched.n:
            raise ValueError(f"noise config has n={cfg.n}, schedule has n={sched.n}")
        self.sched, self.cfg, self.reals, self.k = sched, cfg, reals, k
        self.n = n = sched.n
        self.d = 2**n
        self.t1 = cfg.t1
        self.zs = _z_signs(n)
        z = np.array([r.z_offsets for r in reals]).reshape(len(reals), n)
        tr = np.array([r.transverse_offsets for r in reals]).reshape(len(reals), n, 2)
        self.hdiag = z @ self.zs / 2  # (S, d)
        self.transverse = bool(np.any(tr != 0))
        if self.transverse:
            self.htr = np.einsum("skc,kcij->sij", tr, _transverse_ops(n)) / 2
        self.ou = cfg.model == ORNSTEIN_UHLENBECK and bool(np.any(cfg.sigmas > 0))
        self._cache: dict = {}
        self._intervals = self._split()
        if self.ou:
            self._prepare_ou_paths()

    def _split(self):
        # (start, length) of each gap between events, plus counts per length
        out, t = [], 0.0
        for e in self.sched.events:
            out.append((t, e.time - t))
            t = e.time
        out.append((t, self.sched.duration - t))
        return [(a, max(0.0, b)) for a, b in out]

    def _steps(self, start: float, length: float) -> int:
        return max(1, math.ceil(length / self.sched.step_at(start) - 1e-9))

    def _prepare_ou_paths(self):
        mids = []
        for start, length in self._intervals:
            if length > 0:
                m = self._steps(start, length)
                mids.extend(start + (np.arange(m) + 0.5) * length / m)
        self._ou_times = np.array(mids)
        paths = np.stack([r.z_path(self._ou_times) for r in self.reals])  # (S, T, n)
        self._ou_hdiag = paths @ self.zs / 2  # (S, T, d)
        self._ou_pos = 0

    def run(self, stack: np.ndarray) -> np.ndarray:
        events = iter(self.sched.events)
        for i, (start, length) in enumerate(self._intervals):
            if length > 0:
                stack = self._interval(stack, start, length)
            if i < len(self.sched.events):
                e = next(events)
                stack = e.gate @ stack @ e.gate.conj().T
                if e.error_rate > 0:
                    stack = apply_depolarizing(stack, e.targets, self.n, e.error_rate)
        return stack

    def _interval(self, stack, start, length):
        if self.ou:
            return self._interval_ou(stack, start, length)
        if not self.transverse:
            # diagonal Hamiltonian commutes with damping: exact in one step
            ph = np.exp(-1j * self.hdiag * length)
            stack = stack * (ph[:, None, :, None] * ph.conj()[:, None, None, :])
            return apply_damping(stack, self.t1, length)
        m = self._steps(start, length)
        dt = length / m
        key = (round(length, 12), m)
        count = sum(
            1 for a, l in self._intervals if (round(l, 12), self._steps(a, l)) == key
        )
        d, k = self.d, stack.shape[1]
        stepping = count * m * k * 2 * d**3
        powering = (2 + 2 * math.log2(max(m, 2))) * d**6 + count * k * d**4
        u = self._cache.get(("u", dt))
        if u is None:
            h = self.htr + np.einsum("sd,de->sde", self.hdiag, np.eye(d))
            u = self._cache[("u", dt)] = _hermitian_expm(h, dt)
        # tiny superoperators: per-call overhead dominates, so always power
        if d <= 4 or powering < stepping:
            mp = self._cache.get(("m", key))
            if mp is None:
                half = superop_from_map(lambda x: apply_damping(x, self.t1, dt / 2), d)
                step = half @ unitary_superop(u) @ half
                mp = self._cache[("m", key)] = np.linalg.matrix_power(step, m)
            v = vec(stack)
            out = np.einsum("sij,skj->ski", mp, v)
            return out.reshape(stack.shape)
        ud = u.conj().swapaxes(-1, -2)[:, None]
        u = u[:, None]
        stack = apply_damping(stack, self.t1, dt / 2)
        for j in range(m):
            stack = u @ stack @ ud
            stack = apply_damping(stack, self.t1, dt if j < m - 1 else dt / 2)
        return stack

    def _interval_ou(self, stack, start, length):
        m = self._steps(start, length)
        dt = length / m
        d = self.d
        stack = apply_damping(stack, self.t1, dt / 2)
        for j in range(m):
            hd = self._ou_hdiag[:, self._ou_pos]
            self._ou_pos += 1
            if self.transverse:
                h = self.htr + np.einsum("sd,de->sde", hd, np.eye(d))
                u = _hermitian_expm(h, dt)[:, None]
                stack = u @ stack @ u.conj().swapaxes(-1, -2)
            else:
                ph = np.exp(-1j * hd * dt)
                stack = stack * (ph[:, None, :, None] * ph.conj()[:, None, None, :])
            stack = apply_damping(stack, self.t1, dt if j < m - 1 else dt / 2)
        return stack


def propagate(
    inputs: np.ndarray,
    sched: Schedule,
    cfg: NoiseConfig,
    shots: int,
    start: int = 0,
) -> np.ndarray:
    """Evolve K input operators under ``shots`` noise draws.

    ``inputs`` has shape ``(K, d, d)``; the result has shape ``(shots, K, d, d)``.
    Shot ``s`` uses ``sample_realization(cfg, start + s)``.
    """
    inputs = np.asarray(inputs, dtype=complex)
    if inputs.ndim == 2:
        inputs = inputs[None]
    k, d = inputs.shape[0], inputs.shape[-1]
    if d != 2**sched.n:
        raise ValueError("input dimension does not match schedule register size")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    per_shot = max(k * d * d, d**4)
    chunk = max(1, _CHUNK_ENTRIES // per_shot)
    out = np.empty((shots, k, d, d), dtype=complex)
    for lo in range(0, shots, chunk):
        hi = min(shots, lo + chunk)
        reals = sample_batch(cfg, hi - lo, start + lo)
        stack = np.broadcast_to(inputs, (hi - lo, k, d, d)).copy()
        out[lo:hi] = _Propagator(sched, cfg, reals, k).run(stack)
    return out


def propagate_states(states: np.ndarray, sched: Schedule, cfg: NoiseConfig, start: int = 0) -> np.ndarray:
    """Continue per-shot operators, shape ``(S, K, d, d)``, on their own noise draws.

    Shot ``s`` again uses ``sample_realization(cfg, start + s)``, so a run can be
    split into consecutive schedules.
    """
    states = np.asarray(states, dtype=complex)
    shots, k, d = states.shape[0], states.shape[1], states.shape[-1]
    if d != 2**sched.n:
        raise ValueError("state dimension does not match schedule register size")
    chunk = max(1, _CHUNK_ENTRIES // max(k * d * d, d**4))
    out = np.empty_like(states)
    for lo in range(0, shots, chunk):
        hi = min(shots, lo + chunk)
        reals = sample_batch(cfg, hi - lo, start + lo)
        out[lo:hi] = _Propagator(sched, cfg, reals, k).run(states[lo:hi].copy())
    return out


def evolve_shot(
    state: DensityState, sched: Schedule, noise: NoiseRealization, cfg: NoiseConfig
) -> DensityState:
    """Single-realization evolution; raises :class:`InvariantViolation` on a bad result."""
    if state.n != sched.n:
        raise ValueError("state and schedule register sizes differ")
    out = _Propagator(sched, cfg, [noise], 1).run(state.rho[None, None].copy())
    return DensityState(state.n, out[0, 0]).validate()


# --- channels ---------------------------------------------------------------------

def matrix_units(d: int) -> np.ndarray:
    units = np.zeros((d * d, d, d), dtype=complex)
    units[np.arange(d * d), np.arange(d * d) // d, np.arange(d * d) % d] = 1
    return units


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    """Channel in Pauli-transfer form, ``R_ij = Tr(P_i E(P_j)) / d``.

    ``leakage`` is the worst-case population lost from an encoded subspace
    (only set for channels extracted on logical qubits).
    """

    n: int
    ptm: np.ndarray = field(repr=False)
    shots: int = 0
    leakage: float = 0.0

    def superop(self) -> np.ndarray:
        return ptm_to_superop(self.ptm)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        d = 2**self.n
        out = np.einsum("ij,...j->...i", self.superop(), vec(np.asarray(rho, dtype=complex)))
        return out.reshape(*np.shape(rho)[:-2], d, d)

    @classmethod
    def from_superop(cls, s: np.ndarray, shots: int = 0, leakage: float = 0.0) -> "ChannelEstimate":
        d = int(round(math.sqrt(s.shape[0])))
        return cls(d.bit_length() - 1, superop_to_ptm(s), shots, leakage)

    @classmethod
    def identity(cls, n: int) -> "ChannelEstimate":
        return cls(n, np.eye(4**n))

    def pauli_labels(self) -> tuple[str, ...]:
        return pauli_labels(self.n)


def superop_from_outputs(outputs: np.ndarray) -> np.ndarray:
    """Superoperator whose columns are the images of the matrix units."""
    return vec(outputs).T


def monte_carlo_channel(
    sched: Schedule,
    cfg: NoiseConfig,
    shots: int,
    mode: str = "analytic",
    shots_per_setting: int = 1000,
) -> ChannelEstimate:
    """Shot-averaged channel of a schedule.

    ``analytic`` averages the exact per-shot linear maps.  ``sampled`` then runs
    finite-shot process tomography on that average (seeded by ``cfg.seed``).
    """
    d = 2**sched.n
    outs = propagate(matrix_units(d), sched, cfg, shots).mean(axis=0)
    est = ChannelEstimate.from_superop(superop_from_outputs(outs), shots)
    if mode == "analytic":
        return est
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    from .tomography import process_tomography

    res = process_tomography(est, sched.n, shots_per_setting, seed=cfg.seed)
    return ChannelEstimate(sched.n, res.estimate, shots)


def unitary_ptm(u: np.ndarray) -> np.ndarray:
    return superop_to_ptm(unitary_superop(np.asarray(u, dtype=complex)))


def process_fidelity(est: ChannelEstimate, ideal: np.ndarray, tol: float = 1e-6) -> float:
    """Entanglement fidelity with a target unitary, ``Tr(R_U^T R_E) / d^2``."""
    d = 2**est.n
    ideal = np.asarray(ideal, dtype=complex)
    if ideal.shape != (d, d):
        raise ValueError(f"ideal has shape {ideal.shape}, channel acts on dimension {d}")
    first = est.ptm[0]
    expected = np.zeros_like(first)
    expected[0] = 1
    if np.max(np.abs(first - expected)) > tol:
        raise ValueError("channel estimate is not trace preserving")
    f = float(np.trace(unitary_ptm(ideal).T @ est.ptm) / d**2)
    return min(1.0, max(0.0, f))


def choi_fidelity(outputs: np.ndarray, ideal: np.ndarray) -> np.ndarray:
    """Entanglement fidelity from images of matrix units. Batched over leading axes.

    ``outputs[..., a*d + b]`` is the image of ``|a><b|``.
    """
    d = ideal.shape[0]
    o = outputs.reshape(*outputs.shape[:-3], d, d, d, d)
    # sum_ab <a| U^dag out_ab U |b>
    w = np.einsum("xa,...abxy,yb->...", ideal.conj(), o, ideal, optimize=True)
    return np.real(w) / d**2
