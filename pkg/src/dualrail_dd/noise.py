"""Classical stochastic environment: dephasing offsets, transverse offsets, T1 decay.

Frequencies are in rad/us and times in us.  A qubit with offset ``delta`` evolves
under ``delta * Z / 2``; quasi-static offsets with standard deviation
``sqrt(2) / T2`` reproduce the Gaussian coherence ``exp(-(t / T2)**2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

QUASI_STATIC = "quasiStatic"
ORNSTEIN_UHLENBECK = "ornsteinUhlenbeck"

DEFAULT_T1 = 20.0
DEFAULT_TRANSVERSE_FRACTION = 0.05

_MISSING = object()


def sigma_from_t2(t2: float) -> float:
    """Standard deviation of the quasi-static offset giving ``exp(-(t/T2)^2)``."""
    if not t2 > 0:
        raise ValueError(f"T2 must be positive, got {t2}")
    if math.isinf(t2):
        return 0.0
    return math.sqrt(2.0) / t2


def _times(values, n, what) -> tuple[float, ...]:
    if np.isscalar(values):
        values = [values] * n
    out = tuple(float(v) for v in values)
    if len(out) != n:
        raise ValueError(f"{what} must have {n} entries, got {len(out)}")
    if any(not v > 0 for v in out):
        raise ValueError(f"{what} entries must be positive or infinite")
    return out


@dataclass(frozen=True)
class NoiseConfig:
    n: int
    t1: tuple[float, ...] = ()
    t2: tuple[float, ...] = ()
    z_correlation: float = 0.0
    transverse_fraction: float = DEFAULT_TRANSVERSE_FRACTION
    model: str = QUASI_STATIC
    ou_correlation_time: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        object.__setattr__(self, "t1", _times(self.t1 or DEFAULT_T1, self.n, "t1"))
        object.__setattr__(self, "t2", _times(self.t2 or math.inf, self.n, "t2"))
        if not -1.0 <= self.z_correlation <= 1.0:
            raise ValueError(f"zCorrelation must lie in [-1, 1], got {self.z_correlation}")
        if self.n > 2 and self.z_correlation < -1.0 / (self.n - 1):
            raise ValueError(
                "correlation matrix is not positive semi-definite for "
                f"rho={self.z_correlation}, n={self.n}"
            )
        if self.transverse_fraction < 0:
            raise ValueError("transverseFraction must be >= 0")
        if self.model not in (QUASI_STATIC, ORNSTEIN_UHLENBECK):
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.model == ORNSTEIN_UHLENBECK and not (self.ou_correlation_time or 0) > 0:
            raise ValueError("ornsteinUhlenbeck needs a positive ouCorrelationTime")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([sigma_from_t2(t) for t in self.t2])

    @property
    def is_noiseless(self) -> bool:
        return all(math.isinf(t) for t in self.t1 + self.t2)

    def subset(self, qubits: Sequence[int]) -> "NoiseConfig":
        """Configuration restricted to some qubits (same seed and model)."""
        qubits = list(qubits)
        return replace(
            self,
            n=len(qubits),
            t1=tuple(self.t1[q] for q in qubits),
            t2=tuple(self.t2[q] for q in qubits),
        )

    def to_dict(self) -> dict:
        def enc(v):
            return None if math.isinf(v) else v

        d = {
            "n": self.n,
            "t1": [enc(v) for v in self.t1],
            "t2": [enc(v) for v in self.t2],
            "zCorrelation": self.z_correlation,
            "transverseFraction": self.transverse_fraction,
            "model": self.model,
            "seed": int(self.seed),
        }
        if self.ou_correlation_time is not None:
            d["ouCorrelationTime"] = self.ou_correlation_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        def dec(vals):
            # missing means default; an explicit null means infinite
            if vals is _MISSING:
                return ()
            if vals is None:
                return (math.inf,) * n
            if np.isscalar(vals):
                vals = [vals]
            return tuple(math.inf if v is None else float(v) for v in vals)

        n = int(d["n"])
        return cls(
            n=n,
            t1=dec(d.get("t1", _MISSING)),
            t2=dec(d.get("t2", _MISSING)),
            z_correlation=float(d.get("zCorrelation", 0.0)),
            transverse_fraction=float(d.get("transverseFraction", DEFAULT_TRANSVERSE_FRACTION)),
            model=d.get("model", QUASI_STATIC),
            ou_correlation_time=d.get("ouCorrelationTime"),
            seed=int(d.get("seed", 0)),
        )


def _correlated_normals(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    # unit-variance normals with pairwise correlation rho; one-factor form keeps
    # rho = 1 draws exactly identical
    if rho >= 0:
        g0 = rng.standard_normal()
        g = rng.standard_normal(n)
        return math.sqrt(rho) * g0 + math.sqrt(1.0 - rho) * g
    g = rng.standard_normal(n + 1)[:n]
    corr = np.full((n, n), rho)
    np.fill_diagonal(corr, 1.0)
    w, v = np.linalg.eigh(corr)
    return v @ (np.sqrt(np.clip(w, 0, None)) * (v.T @ g))


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """One classical noise draw.

    ``z_offsets`` are the offsets at t = 0 (constant for the quasi-static model);
    use :meth:`z_path` for the values on a time grid.
    """

    shot_index: int
    z_offsets: np.ndarray
    transverse_offsets: np.ndarray
    config: NoiseConfig = field(repr=False)

    def z_path(self, times: Sequence[float]) -> np.ndarray:
        """Offsets at each time, shape ``(len(times), n)``; deterministic."""
        times = np.asarray(times, dtype=float)
        if self.config.model == QUASI_STATIC:
            return np.broadcast_to(self.z_offsets, (len(times), self.config.n)).copy()
        tc = self.config.ou_correlation_time
        rng = np.random.default_rng([int(self.config.seed), int(self.shot_index), 1])
        sig = self.config.sigmas
        out = np.empty((len(times), self.config.n))
        x = self.z_offsets.copy()
        t_prev = 0.0
        for i, t in enumerate(times):
            if t < t_prev:
                raise ValueError("times must be non-decreasing")
            a = math.exp(-(t - t_prev) / tc)
            kick = _correlated_normals(rng, self.config.n, self.config.z_correlation)
            x = a * x + sig * math.sqrt(1.0 - a * a) * kick
            out[i] = x
            t_prev = t
        return out


def sample_realization(cfg: NoiseConfig, shot: int) -> NoiseRealization:
    """Deterministic draw for ``(cfg.seed, shot)``."""
    rng = np.random.default_rng([int(cfg.seed), int(shot)])
    sig = cfg.sigmas
    z = sig * _correlated_normals(rng, cfg.n, cfg.z_correlation)
    tr = cfg.transverse_fraction * sig[:, None] * rng.standard_normal((cfg.n, 2))
    return NoiseRealization(int(shot), z, tr, cfg)


@lru_cache(maxsize=16)
def _cached_batch(cfg: NoiseConfig, shots: int, start: int) -> tuple[NoiseRealization, ...]:
    return tuple(sample_realization(cfg, s) for s in range(start, start + shots))


def sample_batch(cfg: NoiseConfig, shots: int, start: int = 0) -> list[NoiseRealization]:
    """Realizations for shots ``start .. start + shots - 1``."""
    return list(_cached_batch(cfg, int(shots), int(start)))


def damping_probability(t1: float, dt: float) -> float:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if not t1 > 0:
        raise ValueError(f"T1 must be positive, got {t1}")
    if math.isinf(t1) or dt == 0:
        return 0.0
    return -math.expm1(-dt / t1)


def damping_channel(t1: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Kraus pair of amplitude damping over ``dt`` with relaxation time ``t1``."""
    p = damping_probability(t1, dt)
    k0 = np.array([[1, 0], [0, math.sqrt(1 - p)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(p)], [0, 0]], dtype=complex)
    return k0, k1
