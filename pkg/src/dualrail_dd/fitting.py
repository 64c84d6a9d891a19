"""Decay-law fits of identity-operation fidelity and logical Ramsey curves.

Fidelity models, with coherence factor ``c(tau)``::

    F = (2 c(tau) + exp(-tau / T1) + 1) / 4
    gaussianT2:     c = exp(-(tau / T2)^2)
    exponentialT2:  c = exp(-tau / T2p)

Parameters are searched as dimensionless rates ``tau_max / T`` so that rescaling
every ``tau`` rescales the fitted times by the same factor.  A rate of 0 is an
unbounded time (no decay), reported as ``inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

GAUSSIAN = "gaussianT2"
EXPONENTIAL = "exponentialT2"
MODELS = (GAUSSIAN, EXPONENTIAL)

_RATE_GRID = np.concatenate([[0.0], np.logspace(-3, 2, 101)])
_GOLDEN = (math.sqrt(5) - 1) / 2


def fidelity_model(tau, t2: float, t1: float, model: str = GAUSSIAN) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    x = tau / t2
    coh = np.exp(-(x**2)) if model == GAUSSIAN else np.exp(-x)
    return (2 * coh + np.exp(-tau / t1) + 1) / 4


def _model_rates(u, r2, r1, model):
    # u = tau / tau_max; broadcasting over r2, r1
    x = u * r2
    coh = np.exp(-(x**2)) if model == GAUSSIAN else np.exp(-x)
    return (2 * coh + np.exp(-u * r1) + 1) / 4


def golden_section(f: Callable[[float], float], lo: float, hi: float, rtol: float = 1e-6) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; endpoints are also considered."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > rtol * max(abs(a), abs(b), 1e-300) and b - a > 1e-15:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    best = min(((fc, c), (fd, d), (f(lo), lo), (f(hi), hi)))
    return best[1], best[0]


_GRID_RATIO = float(_RATE_GRID[2] / _RATE_GRID[1])


def _bracket(v: float) -> tuple[float, float]:
    # one grid spacing either side of v; below the first node, reach down to 0
    if v <= _RATE_GRID[1]:
        return 0.0, max(v, float(_RATE_GRID[1])) * _GRID_RATIO
    return v / _GRID_RATIO, v * _GRID_RATIO


def _grid_local_minima(vals: np.ndarray, limit: int = 4) -> list[tuple[int, ...]]:
    """Indices of discrete local minima (8-neighbourhood), best first."""
    pad = np.pad(vals, 1, constant_values=np.inf)
    core = pad[tuple(slice(1, -1) for _ in vals.shape)]
    is_min = np.ones(vals.shape, dtype=bool)
    for shift in np.ndindex(*(3,) * vals.ndim):
        if all(s == 1 for s in shift):
            continue
        window = pad[tuple(slice(s, s + n) for s, n in zip(shift, vals.shape))]
        is_min &= core <= window
    idx = np.argwhere(is_min)
    order = np.argsort(vals[tuple(idx.T)], kind="stable")
    return [tuple(int(v) for v in idx[i]) for i in order[:limit]]


def _refine(sse, x, free, rtol, max_sweeps):
    for _ in range(max_sweeps):
        prev = x.copy()
        for k, f in enumerate(free):
            if not f:
                continue

            def line(v, k=k):
                y = x.copy()
                y[k] = v
                return float(sse(*y))

            x[k], _ = golden_section(line, *_bracket(x[k]), rtol=rtol)
        step = x - prev
        if sum(free) > 1 and np.any(step != 0):
            # pattern move along the sweep displacement, for narrow valleys
            neg = step < 0
            t_hi = min(64.0, *(x[neg] / -step[neg])) if np.any(neg) else 64.0

            def along(t):
                return float(sse(*(x + t * step)))

            t, _ = golden_section(along, 0.0, t_hi, rtol=1e-6)
            x = np.maximum(x + t * step, 0.0)
        if np.all(np.abs(x - prev) <= rtol * np.maximum(np.abs(x), 1e-12)):
            break
    return x


def _newton_polish(sse, x, free, rtol, iters=200):
    """Damped Newton steps with finite-difference derivatives, for curved valleys."""
    idx = [k for k, f in enumerate(free) if f]
    if not idx:
        return x
    f0 = float(sse(*x))
    lam = 1e-3
    for _ in range(iters):
        h = np.array([1e-4 * max(abs(x[k]), 1e-3) for k in idx])

        def at(dv):
            y = x.copy()
            y[idx] += dv
            return float(sse(*np.maximum(y, 0.0)))

        m = len(idx)
        g = np.empty(m)
        hess = np.empty((m, m))
        e = np.eye(m)
        for i in range(m):
            fp, fm = at(h[i] * e[i]), at(-h[i] * e[i])
            g[i] = (fp - fm) / (2 * h[i])
            hess[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
            for j in range(i):
                hess[i, j] = hess[j, i] = (
                    at(h[i] * e[i] + h[j] * e[j]) - at(h[i] * e[i] - h[j] * e[j])
                    - at(-h[i] * e[i] + h[j] * e[j]) + at(-h[i] * e[i] - h[j] * e[j])
                ) / (4 * h[i] * h[j])
        scale = np.abs(np.diag(hess)) + 1e-300
        improved = False
        while lam < 1e12:
            try:
                step = -np.linalg.solve(hess + lam * np.diag(scale), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            y = x.copy()
            y[idx] = np.maximum(y[idx] + step, 0.0)
            fy = float(sse(*y))
            if fy < f0:
                moved = np.abs(y - x)
                x, f0, improved = y, fy, True
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        if not improved or np.all(moved <= rtol * np.maximum(np.abs(x), 1e-12)):
            break
    return x


def _minimize_rates(sse, free: Sequence[bool], rtol: float = 1e-6, max_sweeps: int = 200) -> np.ndarray:
    """Grid search, then coordinate-wise golden-section refinement of each
    discrete local minimum of the grid; the best refined point wins."""
    grids = [_RATE_GRID if f else np.array([0.0]) for f in free]
    mesh = np.meshgrid(*grids, indexing="ij")
    vals = sse(*[m[..., None] for m in mesh])
    best, best_val = None, math.inf
    for idx in _grid_local_minima(vals):
        x0 = np.array([g[i] for g, i in zip(grids, idx)], dtype=float)
        x = _refine(sse, x0, free, rtol, max_sweeps)
        x = _newton_polish(sse, x, free, rtol)
        v = float(sse(*x))
        if v < best_val:
            best, best_val = x, v
    return best


def _covariance_diag(resid_fn, params: np.ndarray, dof: int) -> list[float | None]:
    """Gauss-Newton variance estimates from a finite-difference Jacobian."""
    finite = np.isfinite(params)
    if dof <= 0 or not np.any(finite):
        return [None] * len(params)
    r0 = resid_fn(params)
    cols = []
    for k in np.flatnonzero(finite):
        h = 1e-6 * abs(params[k])
        up, dn = params.copy(), params.copy()
        up[k] += h
        dn[k] -= h
        cols.append((resid_fn(up) - resid_fn(dn)) / (2 * h))
    jac = np.array(cols).T
    s2 = float(r0 @ r0) / dof
    try:
        cov = np.linalg.pinv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        return [None] * len(params)
    out: list[float | None] = [None] * len(params)
    for j, k in enumerate(np.flatnonzero(finite)):
        out[k] = float(cov[j, j])
    return out


@dataclass
class DecayFit:
    model: str
    t2: float
    t1: float
    residual: float
    covariance_diag: list = field(default_factory=list)
    t1_fixed: bool = False

    def to_dict(self) -> dict:
        def enc(v):
            return None if v is None or not math.isfinite(v) else float(v)

        key = "T2_us" if self.model == GAUSSIAN else "T2p_us"
        return {
            "model": self.model,
            key: enc(self.t2),
            "T1_us": enc(self.t1),
            "t1Fixed": self.t1_fixed,
            "residual": float(self.residual),
            "covarianceDiag": [enc(v) for v in self.covariance_diag],
        }


def _check_points(tau, y):
    tau = np.asarray(tau, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if tau.shape != y.shape:
        raise ValueError("tau and values must have the same length")
    if tau.size < 4:
        raise ValueError(f"at least 4 points are required, got {tau.size}")
    if np.any(tau < 0) or not np.all(np.isfinite(tau)):
        raise ValueError("tau must be finite and >= 0")
    if not np.all(np.isfinite(y)):
        raise ValueError("values must be finite")
    return tau, y


class DecayCurveRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of a fidelity decay law.

    ``X`` is a single column of delays in microseconds.  Pass ``t1`` to hold the
    energy-relaxation time fixed; otherwise T1 and T2 are fitted jointly.
    """

    def __init__(self, model: str = GAUSSIAN, t1: float | None = None, rtol: float = 1e-6):
        self.model = model
        self.t1 = t1
        self.rtol = rtol

    def fit(self, X, y):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        tau, y = _check_points(np.asarray(X, dtype=float)[..., 0] if np.ndim(X) == 2 else X, y)
        if np.any(y < -1e-9) or np.any(y > 1 + 1e-9):
            raise ValueError("fidelities must lie in [0, 1]")
        scale = float(tau.max()) or 1.0
        u = tau / scale
        fixed = self.t1 is not None
        r1_fixed = 0.0 if not fixed or math.isinf(self.t1) else scale / float(self.t1)
        model = self.model

        def sse(r2, r1):
            r1 = r1_fixed if fixed else r1
            return np.sum((_model_rates(u, r2, r1, model) - y) ** 2, axis=-1)

        r2, r1 = _minimize_rates(sse, [True, not fixed], self.rtol)
        if fixed:
            r1 = r1_fixed
        self.t2_ = scale / r2 if r2 > 0 else math.inf
        self.t1_ = scale / r1 if r1 > 0 else math.inf
        self.residual_ = float(math.sqrt(sse(r2, r1) / tau.size))

        def resid(p):
            return fidelity_model(tau, p[0], p[1], model) - y

        params = np.array([self.t2_, self.t1_])
        free = 1 if fixed else 2
        cov = _covariance_diag(
            lambda p: resid(p if not fixed else np.array([p[0], self.t1_])),
            params if not fixed else np.array([self.t2_, math.inf]),
            tau.size - free,
        )
        self.covariance_diag_ = cov
        return self

    def predict(self, X):
        check_is_fitted(self, "t2_")
        tau = np.asarray(X, dtype=float)
        tau = tau[..., 0] if tau.ndim == 2 else tau
        return fidelity_model(tau, self.t2_, self.t1_, self.model)

    def to_fit(self) -> DecayFit:
        check_is_fitted(self, "t2_")
        return DecayFit(
            self.model, self.t2_, self.t1_, self.residual_, list(self.covariance_diag_),
            self.t1 is not None,
        )


def fit_decay(points, model: str = GAUSSIAN, t1: float | None = None) -> DecayFit:
    """Fit ``[(tau, fidelity), ...]`` to one of the decay laws."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise ValueError("points must be a sequence of (tau, fidelity) pairs")
    reg = DecayCurveRegressor(model, t1).fit(pts[:, :1], pts[:, 1])
    return reg.to_fit()


def fit_population_decay(points) -> float:
    """T1 from ``[(tau, p), ...]`` with ``p = exp(-tau / T1)``; ``inf`` if flat."""
    pts = np.asarray(points, dtype=float)
    tau, y = _check_points(pts[:, 0], pts[:, 1])
    scale = float(tau.max()) or 1.0
    u = tau / scale

    def sse(r, _unused):
        return np.sum((np.exp(-u * r) - y) ** 2, axis=-1)

    r, _ = _minimize_rates(sse, [True, False])
    return scale / r if r > 0 else math.inf


def ramsey_model(t, t2p: float, t1: float, detuning: float) -> np.ndarray:
    """Logical ``<Z>`` after two Rx(-pi/2) pulses around a wait ``t``.

    Population lost from the codespace decodes to logical 0, hence the offset.
    """
    t = np.asarray(t, dtype=float)
    return 1 - np.exp(-t / t1) - np.exp(-t / t2p) * np.cos(detuning * t)


class RamseyEnvelopeRegressor(RegressorMixin, BaseEstimator):
    """Fits the envelope time of a logical Ramsey fringe at known detuning.

    ``t1`` holds the leakage time fixed; otherwise it is fitted jointly.
    """

    def __init__(self, detuning: float = 0.0, t1: float | None = None, rtol: float = 1e-6):
        self.detuning = detuning
        self.t1 = t1
        self.rtol = rtol

    def fit(self, X, y):
        t, y = _check_points(np.asarray(X, dtype=float)[..., 0] if np.ndim(X) == 2 else X, y)
        scale = float(t.max()) or 1.0
        u = t / scale
        osc = np.cos(self.detuning * t)
        fixed = self.t1 is not None
        r1_fixed = 0.0 if not fixed or math.isinf(self.t1) else scale / float(self.t1)

        def sse(r2, r1):
            r1 = r1_fixed if fixed else r1
            pred = 1 - np.exp(-u * r1) - np.exp(-u * r2) * osc
            return np.sum((pred - y) ** 2, axis=-1)

        r2, r1 = _minimize_rates(sse, [True, not fixed], self.rtol)
        r1 = r1_fixed if fixed else r1
        self.t2p_ = scale / r2 if r2 > 0 else math.inf
        self.t1_ = scale / r1 if r1 > 0 else math.inf
        self.residual_ = float(math.sqrt(sse(r2, r1) / t.size))
        return self

    def predict(self, X):
        check_is_fitted(self, "t2p_")
        t = np.asarray(X, dtype=float)
        t = t[..., 0] if t.ndim == 2 else t
        return ramsey_model(t, self.t2p_, self.t1_, self.detuning)

    def to_dict(self) -> dict:
        check_is_fitted(self, "t2p_")

        def enc(v):
            return None if math.isinf(v) else float(v)

        return {
            "model": "ramseyEnvelope",
            "T2p_us": enc(self.t2p_),
            "T1_us": enc(self.t1_),
            "t1Fixed": self.t1 is not None,
            "detuning": float(self.detuning),
            "residual": self.residual_,
        }
