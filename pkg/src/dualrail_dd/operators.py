"""Pauli strings, dense gate matrices and channel representations.

Qubit 0 is the leftmost tensor factor, i.e. the most significant bit of a
computational-basis index.  Every operator is a plain ``numpy.ndarray``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

MAX_QUBITS = 8

PAULI_LETTERS = "IXYZ"

_PAULIS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_PAULI_STACK = np.stack([_PAULIS[c] for c in PAULI_LETTERS])

UNITARY_TOL = 1e-9


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"register size must be in [1, {MAX_QUBITS}], got {n}")


def pauli_matrix(letters: str) -> np.ndarray:
    """Dense matrix of a Pauli string such as ``"XIZ"``."""
    _check_n(len(letters))
    out = np.ones((1, 1), dtype=complex)
    for c in letters:
        try:
            out = np.kron(out, _PAULIS[c])
        except KeyError:
            raise ValueError(f"invalid Pauli letter {c!r}") from None
    return out


@lru_cache(maxsize=None)
def pauli_labels(n: int) -> tuple[str, ...]:
    """All 4**n Pauli strings in lexicographic ``IXYZ`` order."""
    return tuple("".join(p) for p in itertools.product(PAULI_LETTERS, repeat=n))


@lru_cache(maxsize=8)
def _pauli_basis(n: int) -> np.ndarray:
    return np.stack([pauli_matrix(s) for s in pauli_labels(n)])


def pauli_basis(n: int) -> np.ndarray:
    """Stack of all Pauli matrices, shape ``(4**n, 2**n, 2**n)``."""
    return _pauli_basis(n).copy()


@dataclass(frozen=True)
class PauliTerm:
    """A weighted Pauli string ``coefficient * letters``."""

    coefficient: complex
    letters: str

    def __post_init__(self):
        if not self.letters or any(c not in PAULI_LETTERS for c in self.letters):
            raise ValueError(f"invalid Pauli string {self.letters!r}")
        _check_n(len(self.letters))
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    @property
    def n(self) -> int:
        return len(self.letters)

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.letters)

    def to_matrix(self) -> np.ndarray:
        return self.coefficient * pauli_matrix(self.letters)

    def to_dict(self) -> dict:
        return {
            "coefficient": [float(self.coefficient.real), float(self.coefficient.imag)],
            "letters": self.letters,
        }

    def __str__(self):
        c = self.coefficient
        if abs(c.imag) < 1e-15:
            return f"{c.real:+.6g}*{self.letters}"
        return f"({c:.6g})*{self.letters}"


def single_pauli(letter: str, qubit: int, n: int, coefficient: complex = 1.0) -> PauliTerm:
    """``coefficient * sigma_letter`` acting on ``qubit`` of an n-qubit register."""
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range for n={n}")
    letters = ["I"] * n
    letters[qubit] = letter
    return PauliTerm(coefficient, "".join(letters))


def terms_to_matrix(terms: Sequence[PauliTerm], n: int) -> np.ndarray:
    out = np.zeros((2**n, 2**n), dtype=complex)
    for t in terms:
        if t.n != n:
            raise ValueError("term size does not match register size")
        out += t.to_matrix()
    return out


def decompose_pauli(a: np.ndarray, tol: float = 1e-12) -> list[PauliTerm]:
    """Expand ``a`` in the Pauli basis, dropping terms with ``|c| <= tol``.

    Coefficients are ``Tr(P^dagger a) / 2**n``, computed one qubit at a time.
    """
    a = np.asarray(a, dtype=complex)
    dim = a.shape[0]
    if a.ndim != 2 or a.shape[1] != dim or dim < 2 or dim & (dim - 1):
        raise ValueError(f"expected a square matrix with power-of-2 dimension, got {a.shape}")
    n = dim.bit_length() - 1
    _check_n(n)
    coeffs = pauli_coefficients(a)
    labels = pauli_labels(n)
    return [PauliTerm(c, labels[i]) for i, c in enumerate(coeffs) if abs(c) > tol]


# _PAULI_CONTRACT[p, 2*i + j] = P_p[j, i], so that sum_ij contracts Tr(P a)
_PAULI_CONTRACT = np.transpose(_PAULI_STACK, (0, 2, 1)).reshape(4, 4)


def pauli_coefficients(a: np.ndarray) -> np.ndarray:
    """Vector of ``Tr(P a) / 2**n`` over :func:`pauli_labels` order.

    Accepts a batch ``(..., d, d)``.
    """
    a = np.asarray(a, dtype=complex)
    d = a.shape[-1]
    n = d.bit_length() - 1
    batch = a.shape[:-2]
    nb = len(batch)
    t = a.reshape(*batch, *(2,) * (2 * n))
    # interleave (i_k, j_k) pairs and merge them into one axis of size 4
    order = list(range(nb)) + [nb + x for k in range(n) for x in (k, k + n)]
    t = t.transpose(order).reshape(*batch, *(4,) * n)
    for k in range(n):
        ax = nb + k
        t = np.moveaxis(np.tensordot(t, _PAULI_CONTRACT, axes=([ax], [1])), -1, ax)
    return t.reshape(*batch, 4**n) / d


def is_unitary(u: np.ndarray, tol: float = 1e-12) -> bool:
    u = np.asarray(u)
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol)


def is_hermitian(h: np.ndarray, tol: float = 1e-12) -> bool:
    h = np.asarray(h)
    return bool(np.max(np.abs(h - h.conj().T)) <= tol)


def conjugate(u: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Toggling-frame image ``u^dagger a u``."""
    u = np.asarray(u, dtype=complex)
    a = np.asarray(a, dtype=complex)
    if u.shape != a.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"dimension mismatch: {u.shape} vs {a.shape}")
    if not is_unitary(u, UNITARY_TOL):
        raise ValueError("conjugating operator is not unitary")
    return u.conj().T @ a @ u


# --- gates -----------------------------------------------------------------

_S2 = 1 / np.sqrt(2)

_FIXED_GATES = {
    "ISWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
    # principal root: restriction to span{|01>,|10>} is exp(+i pi/4 X)
    "SQRT_ISWAP": np.array(
        [[1, 0, 0, 0], [0, _S2, 1j * _S2, 0], [0, 1j * _S2, _S2, 0], [0, 0, 0, 1]],
        dtype=complex,
    ),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _S2,
    "X": _PAULIS["X"].copy(),
    "Y": _PAULIS["Y"].copy(),
    "Z": _PAULIS["Z"].copy(),
    "I": _PAULIS["I"].copy(),
}
_ROTATIONS = {"RZ": "Z", "RX": "X"}
_ALIASES = {"SQISWAP": "SQRT_ISWAP", "√ISWAP": "SQRT_ISWAP", "CX": "CNOT"}

GATE_NAMES = tuple(sorted(set(_FIXED_GATES) | set(_ROTATIONS)))


def canonical_gate_name(name: str) -> str:
    key = str(name).upper()
    key = _ALIASES.get(key, key)
    if key not in _FIXED_GATES and key not in _ROTATIONS:
        raise ValueError(f"unknown gate {name!r}")
    return key


def gate_arity(name: str) -> int:
    key = canonical_gate_name(name)
    if key in _ROTATIONS:
        return 1
    return _FIXED_GATES[key].shape[0].bit_length() - 1


def base_gate(name: str, angle: float | None = None) -> np.ndarray:
    """The gate on its own qubits (2x2 or 4x4)."""
    key = canonical_gate_name(name)
    if key in _ROTATIONS:
        if angle is None:
            raise ValueError(f"gate {key} requires an angle")
        p = _PAULIS[_ROTATIONS[key]]
        return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * p
    return _FIXED_GATES[key].copy()


def embed(op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Embed a k-qubit operator acting on ``targets`` into an n-qubit register."""
    _check_n(n)
    targets = [int(t) for t in targets]
    k = len(targets)
    if op.shape != (2**k, 2**k):
        raise ValueError(f"operator shape {op.shape} does not match {k} targets")
    if len(set(targets)) != k:
        raise ValueError(f"targets must be distinct, got {targets}")
    if any(not 0 <= t < n for t in targets):
        raise ValueError(f"target out of range for n={n}: {targets}")
    rest = [q for q in range(n) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest)))
    # full acts on qubit order targets + rest; permute back to 0..n-1
    order = targets + rest
    inv = np.argsort(order)
    t = full.reshape((2,) * (2 * n))
    t = t.transpose(list(inv) + [n + i for i in inv])
    return t.reshape(2**n, 2**n)


def gate_matrix(
    name: str, targets: Sequence[int], n: int, angle: float | None = None
) -> np.ndarray:
    """Full 2**n embedding of a named gate.

    >>> u = gate_matrix("iSWAP", [0, 1], 2)
    >>> np.allclose(u @ u, np.diag([1, -1, -1, 1]))
    True
    """
    g = base_gate(name, angle)
    if len(targets) != g.shape[0].bit_length() - 1:
        raise ValueError(f"gate {name} expects {g.shape[0].bit_length() - 1} targets")
    return embed(g, targets, n)


class Gate(NamedTuple):
    """A named gate on specific qubits; ``angle`` only for RZ/RX."""

    name: str
    targets: tuple
    angle: float | None = None

    def matrix(self, n: int) -> np.ndarray:
        return gate_matrix(self.name, self.targets, n, self.angle)

    def to_dict(self) -> dict:
        d = {"gate": self.name, "targets": list(self.targets)}
        if self.angle is not None:
            d["angle"] = float(self.angle)
        return d

    @classmethod
    def make(cls, name: str, targets, angle: float | None = None) -> "Gate":
        key = canonical_gate_name(name)
        if key in _ROTATIONS and angle is None:
            raise ValueError(f"gate {key} requires an angle")
        return cls(key, tuple(int(t) for t in targets), None if angle is None else float(angle))


def circuit_unitary(gates: Sequence[Gate], n: int) -> np.ndarray:
    """Product of a gate list, first gate applied first."""
    u = np.eye(2**n, dtype=complex)
    for g in gates:
        u = g.matrix(n) @ u
    return u


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    """True when ``a = exp(i phi) b`` entrywise within ``tol``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    idx = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(b[idx]) < tol:
        return bool(np.max(np.abs(a)) <= tol)
    phase = a[idx] / b[idx]
    if abs(abs(phase) - 1) > tol:
        return False
    return bool(np.max(np.abs(a - phase * b)) <= tol)


# --- states and channels -----------------------------------------------------

def basis_state(bits: str) -> np.ndarray:
    """Computational basis ket, e.g. ``basis_state("01")``."""
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int(bits, 2)] = 1
    return v


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def partial_trace(rho: np.ndarray, keep: Sequence[int], n: int) -> np.ndarray:
    """Reduced operator on qubits ``keep`` (in the given order). Batched."""
    rho = np.asarray(rho)
    batch = rho.shape[:-2]
    nb = len(batch)
    keep = list(keep)
    drop = [q for q in range(n) if q not in keep]
    t = rho.reshape(*batch, *(2,) * (2 * n))
    letters = "abcdefghijklmnopqrstuvwxyz"
    bidx = "".join(letters[i] for i in range(nb))
    rows = [letters[nb + q] for q in range(n)]
    cols = [letters[nb + n + q] for q in range(n)]
    for q in drop:
        cols[q] = rows[q]
    out = bidx + "".join(rows[q] for q in keep) + "".join(cols[q] for q in keep)
    t = np.einsum(f"{bidx}{''.join(rows)}{''.join(cols)}->{out}", t)
    dk = 2 ** len(keep)
    return t.reshape(*batch, dk, dk)


def vec(rho: np.ndarray) -> np.ndarray:
    """Row-major vectorization; ``vec(A X B) = (A kron B^T) vec(X)``."""
    rho = np.asarray(rho)
    return rho.reshape(*rho.shape[:-2], -1)


def unitary_superop(u: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> u X u^dagger`` for row-major :func:`vec`. Batched."""
    u = np.asarray(u)
    d = u.shape[-1]
    s = np.einsum("...ij,...kl->...ikjl", u, u.conj())
    return s.reshape(*u.shape[:-2], d * d, d * d)


def superop_from_map(fn, d: int) -> np.ndarray:
    """Build the superoperator of a linear map by acting on matrix units."""
    units = np.zeros((d * d, d, d), dtype=complex)
    units[np.arange(d * d), np.arange(d * d) // d, np.arange(d * d) % d] = 1
    out = fn(units)
    return vec(out).T


def superop_to_ptm(s: np.ndarray) -> np.ndarray:
    """Pauli-transfer matrix ``R_ij = Tr(P_i E(P_j)) / d``."""
    d = int(round(np.sqrt(s.shape[-1])))
    n = d.bit_length() - 1
    b = vec(_pauli_basis(n)).T  # columns vec(P_j)
    r = b.conj().T @ s @ b / d
    return r.real


def ptm_to_superop(r: np.ndarray) -> np.ndarray:
    dsq = r.shape[0]
    d = int(round(np.sqrt(dsq)))
    n = d.bit_length() - 1
    b = vec(_pauli_basis(n)).T
    return b @ r @ b.conj().T / d


def apply_superop(s: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[-1]
    out = np.einsum("ij,...j->...i", s, vec(rho))
    return out.reshape(*rho.shape[:-2], d, d)


# --- system-environment couplings --------------------------------------------

class Coupling(NamedTuple):
    """One term ``system (x) E[label]``; the environment side stays symbolic."""

    system: PauliTerm
    label: str


def interaction_couplings(n: int) -> list[Coupling]:
    """Independent single-qubit couplings ``sigma_a^k (x) E_a^k`` for a in x, y, z."""
    _check_n(n)
    return [
        Coupling(single_pauli(a.upper(), k, n), f"E_{a}^{k + 1}")
        for k in range(n)
        for a in "xyz"
    ]
