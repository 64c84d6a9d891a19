"""Dual-rail logical qubits: encoding, the logical gate compiler, channel extraction.

Each logical qubit lives on a pair of physical qubits, ``|0>_L = |01>`` and
``|1>_L = |10>``.  The first qubit of a pair carries the logical amplitude after
decoding; the second is the ancilla that ends in ``|0>``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .noise import NoiseConfig
from .operators import Gate, base_gate, circuit_unitary, partial_trace
from .simulate import ChannelEstimate, Schedule, gate_schedule, matrix_units, propagate

MAX_LOGICAL = 2

LOGICAL_GATES = ("RZ", "RXM90", "H", "CZ", "X", "Z")
_LOGICAL_ALIASES = {"RXm90".upper(): "RXM90", "RX_M90": "RXM90"}


def _logical_name(name: str) -> str:
    key = str(name).upper()
    key = _LOGICAL_ALIASES.get(key, key)
    if key not in LOGICAL_GATES:
        raise ValueError(f"unknown logical gate {name!r}; expected one of {LOGICAL_GATES}")
    return key


@dataclass(frozen=True)
class LogicalRegister:
    """N logical qubits on pairs of a ring of 2N physical qubits."""

    num_logical: int
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not 1 <= self.num_logical <= MAX_LOGICAL:
            raise ValueError(f"numLogical must be 1..{MAX_LOGICAL}, got {self.num_logical}")
        pairs = self.pairs or tuple((2 * j, 2 * j + 1) for j in range(self.num_logical))
        pairs = tuple((int(a), int(b)) for a, b in pairs)
        object.__setattr__(self, "pairs", pairs)
        if len(pairs) != self.num_logical:
            raise ValueError("one pair per logical qubit is required")
        flat = [q for p in pairs for q in p]
        if sorted(flat) != list(range(self.n_physical)):
            raise ValueError(f"pairs must partition qubits 0..{self.n_physical - 1}")
        for a, b in pairs:
            if not self.adjacent(a, b):
                raise ValueError(f"pair {(a, b)} is not nearest-neighbour on the ring")

    @property
    def n_physical(self) -> int:
        return 2 * self.num_logical

    def adjacent(self, a: int, b: int) -> bool:
        m = self.n_physical
        return a != b and (abs(a - b) == 1 or {a, b} == {0, m - 1})

    def codeword(self, bits: Sequence[int]) -> int:
        """Physical basis index of the logical basis state ``bits``."""
        out = ["0"] * self.n_physical
        for (first, second), b in zip(self.pairs, bits):
            out[first], out[second] = ("1", "0") if b else ("0", "1")
        return int("".join(out), 2)

    def isometry(self) -> np.ndarray:
        """``V`` with ``V |x>_L`` the physical codeword; shape ``(2^2N, 2^N)``."""
        nl = self.num_logical
        v = np.zeros((2**self.n_physical, 2**nl), dtype=complex)
        for x in range(2**nl):
            bits = [(x >> (nl - 1 - j)) & 1 for j in range(nl)]
            v[self.codeword(bits), x] = 1
        return v

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Codespace block ``V^dagger U V`` of a physical operator."""
        v = self.isometry()
        return v.conj().T @ u @ v

    def encode_operator(self, rho_l: np.ndarray) -> np.ndarray:
        v = self.isometry()
        return v @ rho_l @ v.conj().T


@dataclass(frozen=True)
class LogicalOp:
    gate: str
    targets: tuple[int, ...]
    angle: float | None = None

    def to_dict(self) -> dict:
        d = {"gate": self.gate, "targets": list(self.targets)}
        if self.angle is not None:
            d["angle"] = self.angle
        return d


@dataclass(frozen=True)
class LogicalCircuit:
    num_logical: int
    ops: tuple[LogicalOp, ...] = ()
    durations: tuple[float, ...] = field(default=())

    def __post_init__(self):
        ops = []
        for op in self.ops:
            if isinstance(op, dict):
                op = LogicalOp(op["gate"], tuple(op["targets"]), op.get("angle"))
            name = _logical_name(op.gate)
            targets = tuple(int(t) for t in op.targets)
            want = 2 if name == "CZ" else 1
            if len(targets) != want:
                raise ValueError(f"{name} takes {want} target(s), got {targets}")
            if any(not 0 <= t < self.num_logical for t in targets):
                raise ValueError(f"logical target out of range: {targets}")
            if len(set(targets)) != len(targets):
                raise ValueError("CZ targets must be distinct")
            angle = op.angle
            if name == "RZ":
                if angle is None:
                    raise ValueError("RZ requires an angle")
                angle = float(angle)
            ops.append(LogicalOp(name, targets, angle))
        object.__setattr__(self, "ops", tuple(ops))
        if self.durations and len(self.durations) != len(self.ops):
            raise ValueError("durations must have one entry per op")
        if any(t < 0 for t in self.durations):
            raise ValueError("durations must be >= 0")

    def unitary(self) -> np.ndarray:
        """Ideal ``2^N``-dimensional action, first op applied first."""
        n = self.num_logical
        u = np.eye(2**n, dtype=complex)
        for op in self.ops:
            u = logical_gate_matrix(op, n) @ u
        return u

    def to_json(self) -> str:
        return json.dumps([op.to_dict() for op in self.ops])

    @classmethod
    def from_json(cls, text: str | list, num_logical: int) -> "LogicalCircuit":
        data = json.loads(text) if isinstance(text, str) else text
        ops = tuple(LogicalOp(d["gate"], tuple(d["targets"]), d.get("angle")) for d in data)
        return cls(num_logical, ops)


def logical_gate_matrix(op: LogicalOp, n: int) -> np.ndarray:
    """Target unitary of one logical op on ``n`` logical qubits."""
    name = _logical_name(op.gate)
    if name == "CZ":
        return Gate("CZ", op.targets).matrix(n)
    if name == "RZ":
        return Gate("RZ", op.targets, op.angle).matrix(n)
    if name == "RXM90":
        return Gate("RX", op.targets, -math.pi / 2).matrix(n)
    return Gate(name, op.targets).matrix(n)


# --- physical circuits --------------------------------------------------------

def encode_circuit(reg: LogicalRegister) -> list[Gate]:
    """``(a|0> + b|1>) |0>`` on each pair to ``a|01> + b|10>``."""
    out = []
    for first, second in reg.pairs:
        out += [Gate.make("CNOT", (first, second)), Gate.make("X", (second,))]
    return out


def decode_circuit(reg: LogicalRegister) -> list[Gate]:
    """Inverse of :func:`encode_circuit`."""
    out = []
    for first, second in reg.pairs:
        out += [Gate.make("X", (second,)), Gate.make("CNOT", (first, second))]
    return out


def compile_logical(circ: LogicalCircuit, reg: LogicalRegister) -> list[Gate]:
    """Physical gates realizing ``circ`` on the codespace up to a global phase.

    Logical X is an in-pair iSWAP, which acts as ``i X_L``.
    """
    if circ.num_logical != reg.num_logical:
        raise ValueError("circuit and register sizes differ")
    out: list[Gate] = []
    for op in circ.ops:
        pair = reg.pairs[op.targets[0]]
        if op.gate == "RZ":
            if op.angle % (4 * math.pi) != 0:
                out.append(Gate.make("RZ", (pair[0],), op.angle))
        elif op.gate == "Z":
            out.append(Gate.make("Z", (pair[0],)))
        elif op.gate == "RXM90":
            out.append(Gate.make("SQRT_ISWAP", pair))
        elif op.gate == "X":
            out.append(Gate.make("ISWAP", pair))
        elif op.gate == "H":
            # Rz(pi/2) Rx(pi/2) Rz(pi/2), with Rx(pi/2) = -(Rx(-pi/2))^3
            out.append(Gate.make("RZ", (pair[0],), math.pi / 2))
            out += [Gate.make("SQRT_ISWAP", pair)] * 3
            out.append(Gate.make("RZ", (pair[0],), math.pi / 2))
        elif op.gate == "CZ":
            j, k = op.targets
            a, b = reg.pairs[j][1], reg.pairs[k][0]
            if not reg.adjacent(a, b):
                raise ValueError(
                    f"logical CZ({j},{k}) needs adjacent qubits {a} and {b} on the ring"
                )
            out.append(Gate.make("CZ", (a, b)))
            out.append(Gate.make("RZ", (b,), math.pi))
    return out


def compiled_unitary(circ: LogicalCircuit, reg: LogicalRegister) -> np.ndarray:
    return circuit_unitary(compile_logical(circ, reg), reg.n_physical)


@dataclass
class PauliFrame:
    """Logical X byproducts of in-pair iSWAPs, folded into readout.

    Each in-pair iSWAP multiplies the codespace action by ``i X_L``.
    """

    reg: LogicalRegister
    flips: list[int] = field(default_factory=list)
    quarter_turns: int = 0

    def __post_init__(self):
        if not self.flips:
            self.flips = [0] * self.reg.num_logical

    def absorb(self, gates: Iterable[Gate]) -> "PauliFrame":
        for g in gates:
            if g.name == "ISWAP" and tuple(g.targets) in self.reg.pairs:
                j = self.reg.pairs.index(tuple(g.targets))
                self.flips[j] ^= 1
                self.quarter_turns = (self.quarter_turns + 1) % 4
        return self

    @property
    def phase(self) -> complex:
        return 1j**self.quarter_turns

    def operator(self) -> np.ndarray:
        """Logical operator accumulated so far, ``phase * prod X_j^flip_j``."""
        x = base_gate("X")
        u = np.eye(1, dtype=complex)
        for f in self.flips:
            u = np.kron(u, x if f else np.eye(2))
        return self.phase * u

    def interpret(self, bits: Sequence[int]) -> tuple[int, ...]:
        """Logical Z outcomes corrected for the tracked flips."""
        return tuple(int(b) ^ f for b, f in zip(bits, self.flips))


# --- logical channels ---------------------------------------------------------

def ancilla_qubits(reg: LogicalRegister) -> list[int]:
    return [second for _, second in reg.pairs]


def _decode_unitary(reg: LogicalRegister) -> np.ndarray:
    return circuit_unitary(decode_circuit(reg), reg.n_physical)


def decoded_outputs(outputs: np.ndarray, reg: LogicalRegister) -> tuple[np.ndarray, np.ndarray]:
    """Decode physical outputs; return logical marginals and ancilla-excited weight.

    ``outputs`` has shape ``(..., d_phys, d_phys)``.  The marginal traces out the
    ancillas, so leaked population lands on logical states; the second return
    value is the trace of the part with any ancilla left excited.
    """
    u = _decode_unitary(reg)
    dec = u @ outputs @ u.conj().T
    n = reg.n_physical
    firsts = [first for first, _ in reg.pairs]
    marginal = partial_trace(dec, firsts, n)
    clean = np.zeros(2**n, dtype=bool)
    anc = ancilla_qubits(reg)
    for idx in range(2**n):
        clean[idx] = all(((idx >> (n - 1 - q)) & 1) == 0 for q in anc)
    diag = np.real(np.diagonal(dec, axis1=-2, axis2=-1))
    leaked = diag[..., ~clean].sum(axis=-1)
    return marginal, leaked


def logical_inputs(reg: LogicalRegister) -> np.ndarray:
    """Encoded images of the logical matrix units, ``V |a><b| V^dagger``."""
    dl = 2**reg.num_logical
    return np.array([reg.encode_operator(m) for m in matrix_units(dl)])


def _leakage_from_unit_outputs(leaked: np.ndarray, dl: int) -> float:
    # diagonal units |a><a| are the logical basis inputs
    diag = leaked[..., np.arange(dl) * (dl + 1)]
    return float(np.max(diag)) if diag.size else 0.0


def extract_logical_channel(est: ChannelEstimate, reg: LogicalRegister) -> ChannelEstimate:
    """Logical channel seen through ideal encode and decode.

    Ancillas are traced after decoding.  ``leakage`` is the largest ancilla-excited
    weight over logical basis inputs.
    """
    if est.n != reg.n_physical:
        raise ValueError(f"channel acts on {est.n} qubits, register has {reg.n_physical}")
    dl = 2**reg.num_logical
    outs = est(logical_inputs(reg))
    marginal, leaked = decoded_outputs(outs, reg)
    s = marginal.reshape(dl * dl, dl * dl).T
    est_l = ChannelEstimate.from_superop(s, est.shots)
    return ChannelEstimate(est_l.n, est_l.ptm, est.shots, _leakage_from_unit_outputs(leaked, dl))


@dataclass(frozen=True, eq=False)
class LogicalRun:
    """Per-shot logical images of the matrix units, plus leakage."""

    outputs: np.ndarray = field(repr=False)  # (S, dl*dl, dl, dl)
    leakage: float

    def channel(self) -> ChannelEstimate:
        dl = self.outputs.shape[-1]
        s = self.outputs.mean(axis=0).reshape(dl * dl, dl * dl).T
        est = ChannelEstimate.from_superop(s, self.outputs.shape[0])
        return ChannelEstimate(est.n, est.ptm, est.shots, self.leakage)


def simulate_logical_channel(
    reg: LogicalRegister,
    sched: Schedule,
    cfg: NoiseConfig,
    shots: int,
    prefix: Sequence[Gate] = (),
    suffix: Sequence[Gate] = (),
) -> LogicalRun:
    """Noisy physical evolution of encoded inputs, ideally decoded.

    ``prefix`` and ``suffix`` are noiseless physical gates applied before and
    after the schedule (e.g. compiled logical operations).
    """
    n = reg.n_physical
    if sched.n != n:
        raise ValueError("schedule register size does not match")
    inputs = logical_inputs(reg)
    if prefix:
        u = circuit_unitary(prefix, n)
        inputs = u @ inputs @ u.conj().T
    outs = propagate(inputs, sched, cfg, shots)
    if suffix:
        u = circuit_unitary(suffix, n)
        outs = u @ outs @ u.conj().T
    marginal, leaked = decoded_outputs(outs, reg)
    dl = 2**reg.num_logical
    return LogicalRun(marginal, _leakage_from_unit_outputs(leaked.mean(axis=0), dl))


def logical_gate_schedule(
    circ: LogicalCircuit, reg: LogicalRegister, error_rate: float = 0.0, layer_time: float = 0.0
) -> Schedule:
    return gate_schedule(compile_logical(circ, reg), reg.n_physical, error_rate, layer_time)
