"""State and process tomography on simulated data.

Finite-shot mode measures every qubit in the X, Y or Z basis (3^n settings),
draws multinomial counts, and reconstructs by linear inversion.  State estimates
are then projected onto the nearest density matrix in Frobenius norm.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators import base_gate, pauli_coefficients, pauli_labels, pauli_matrix
from .simulate import ChannelEstimate

STATE = "state"
PROCESS = "process"

# rotate the measured axis onto Z before a computational readout
_BASIS_CHANGE = {
    "Z": np.eye(2, dtype=complex),
    "X": base_gate("H"),
    "Y": base_gate("H") @ np.diag([1, -1j]),
}

_PROCESS_INPUTS = (
    np.array([1, 0], dtype=complex),
    np.array([0, 1], dtype=complex),
    np.array([1, 1], dtype=complex) / np.sqrt(2),
    np.array([1, 1j], dtype=complex) / np.sqrt(2),
)


@dataclass(frozen=True, eq=False)
class TomographyResult:
    kind: str
    n: int
    estimate: np.ndarray = field(repr=False)
    shots_per_setting: int = 0

    def to_dict(self) -> dict:
        est = np.asarray(self.estimate)
        d = {"kind": self.kind, "n": self.n, "shotsPerSetting": self.shots_per_setting}
        if np.iscomplexobj(est):
            d["real"] = est.real.tolist()
            d["imag"] = est.imag.tolist()
        else:
            d["real"] = est.tolist()
        return d


def _as_density(prep) -> np.ndarray:
    a = np.asarray(prep, dtype=complex)
    if a.ndim == 1:
        a = np.outer(a, a.conj())
    d = a.shape[0]
    if a.shape != (d, d) or d & (d - 1):
        raise ValueError(f"state has shape {a.shape}; expected a 2^n ket or density matrix")
    return a


def project_to_density(a: np.ndarray) -> np.ndarray:
    """Nearest unit-trace positive semidefinite matrix in Frobenius norm."""
    h = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(h)
    # Euclidean projection of the spectrum onto the probability simplex
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(u) + 1)
    r = k[u - css / k > 0][-1]
    lam = np.maximum(w - css[r - 1] / r, 0.0)
    return (v * lam) @ v.conj().T


def _setting_probabilities(rho: np.ndarray, setting: str) -> np.ndarray:
    rot = np.eye(1, dtype=complex)
    for s in setting:
        rot = np.kron(rot, _BASIS_CHANGE[s])
    p = np.real(np.diagonal(rot @ rho @ rot.conj().T))
    p = np.clip(p, 0, None)
    return p / p.sum()


def _sampled_pauli_expectations(rho: np.ndarray, n: int, shots: int, rng) -> np.ndarray:
    """Estimates of ``Tr(P rho)`` for all Pauli strings, ``P`` lexicographic IXYZ."""
    labels = pauli_labels(n)
    sums = np.zeros(len(labels))
    counts = np.zeros(len(labels))
    sums[0], counts[0] = 1.0, 1.0
    outcomes = np.arange(2**n)
    bits = (outcomes[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    signs = 1 - 2 * bits  # (2^n, n)
    for setting in itertools.product("XYZ", repeat=n):
        freq = rng.multinomial(shots, _setting_probabilities(rho, setting)) / shots
        # every Pauli string whose letters are I or the setting's letter
        for mask in itertools.product((0, 1), repeat=n):
            if not any(mask):
                continue
            letters = "".join(s if m else "I" for s, m in zip(setting, mask))
            val = float(freq @ np.prod(np.where(np.array(mask)[None, :], signs, 1), axis=1))
            i = labels.index(letters)
            sums[i] += val
            counts[i] += 1
    return sums / counts


def _from_pauli_vector(c: np.ndarray, n: int) -> np.ndarray:
    d = 2**n
    rho = np.zeros((d, d), dtype=complex)
    for coef, lab in zip(c, pauli_labels(n)):
        rho += coef * pauli_matrix(lab)
    return rho / d


def state_tomography(
    prep, shots_per_setting: int = 0, seed: int | None = 0, project: bool = True
) -> TomographyResult:
    """Reconstruct a state from a ket or density matrix.

    ``shots_per_setting = 0`` returns the state itself.
    """
    if shots_per_setting < 0:
        raise ValueError("shotsPerSetting must be >= 0")
    rho = _as_density(prep)
    n = rho.shape[0].bit_length() - 1
    if shots_per_setting == 0:
        return TomographyResult(STATE, n, rho.copy(), 0)
    rng = np.random.default_rng(seed)
    c = _sampled_pauli_expectations(rho, n, shots_per_setting, rng)
    est = _from_pauli_vector(c, n)
    if project:
        est = project_to_density(est)
    return TomographyResult(STATE, n, est, shots_per_setting)


def process_inputs(n: int) -> list[np.ndarray]:
    """Product inputs from ``{|0>, |1>, |+>, |+i>}`` on each qubit."""
    out = []
    for combo in itertools.product(_PROCESS_INPUTS, repeat=n):
        psi = np.ones(1, dtype=complex)
        for k in combo:
            psi = np.kron(psi, k)
        out.append(np.outer(psi, psi.conj()))
    return out


def _as_map(channel, n: int) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(channel, ChannelEstimate):
        if channel.n != n:
            raise ValueError(f"channel acts on {channel.n} qubits, expected {n}")
        return channel
    if callable(channel):
        return channel
    u = np.asarray(channel, dtype=complex)
    if u.shape != (2**n, 2**n):
        raise ValueError(f"unitary has shape {u.shape}, expected {(2**n, 2**n)}")
    return lambda rho: u @ rho @ u.conj().T


def process_tomography(
    channel, n: int, shots_per_setting: int = 0, seed: int | None = 0
) -> TomographyResult:
    """PTM of a channel (callable on density matrices, ChannelEstimate or unitary)."""
    if n not in (1, 2):
        raise ValueError(f"process tomography supports n in {{1, 2}}, got {n}")
    if shots_per_setting < 0:
        raise ValueError("shotsPerSetting must be >= 0")
    fn = _as_map(channel, n)
    rng = np.random.default_rng(seed)
    ins = process_inputs(n)
    r_in = np.real(pauli_coefficients(np.array(ins))).T * 2**n
    cols = []
    for rho in ins:
        out = np.asarray(fn(rho), dtype=complex)
        if shots_per_setting == 0:
            cols.append(np.real(pauli_coefficients(out)) * 2**n)
        else:
            cols.append(_sampled_pauli_expectations(out, n, shots_per_setting, rng))
    r_out = np.array(cols).T
    ptm = r_out @ np.linalg.inv(r_in)
    return TomographyResult(PROCESS, n, ptm, shots_per_setting)


def state_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """``<b|a|b>`` for a density matrix ``a`` and a normalized ket ``b``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex).ravel()
    if a.shape != (b.size, b.size):
        raise ValueError(f"state of shape {a.shape} does not match ket of size {b.size}")
    if abs(np.vdot(b, b) - 1) > 1e-9:
        raise ValueError("reference ket is not normalized")
    return float(np.real(np.vdot(b, a @ b)))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    w = np.linalg.eigvalsh((a - b + (a - b).conj().T) / 2)
    return float(np.sum(np.abs(w)) / 2)
