"""Optimal stock-to-bond proportion, its clipping and its parameter sensitivities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bounds import BoundPair
from .model import DerivedCoefficients, DomainError
from .series import SeriesSolution, eval_psi, stable_expm_ratio, stable_moment_ratio


class InvalidPsiError(ValueError):
    """psi <= 0: outside the region where the policy formula applies."""


def theta_from_psi(coeffs: DerivedCoefficients, psi):
    """b/a + gamma dmu / (a psi)."""
    psi = np.asarray(psi, dtype=float)
    if np.any(~(psi > 0)):
        raise InvalidPsiError("psi must be > 0")
    out = coeffs.b / coeffs.a + coeffs.gamma * coeffs.delta_mu / (coeffs.a * psi)
    return out if out.ndim else float(out)


def clip_theta(theta, lo: float = 0.0, hi: float = 1.0):
    """min{hi, max{lo, theta}}."""
    out = np.minimum(hi, np.maximum(lo, np.asarray(theta, dtype=float)))
    return out if out.ndim else float(out)


def _delta(coeffs: DerivedCoefficients, d: float) -> float:
    return coeffs.alpha - d * coeffs.c**2


def _remaining(coeffs: DerivedCoefficients, t):
    s = coeffs.T - np.asarray(t, dtype=float)
    if np.any((s < -1e-12 * coeffs.T) | (s > coeffs.T * (1 + 1e-12))):
        raise DomainError("t must lie in [0, T]")
    return np.maximum(s, 0.0)


def _positive_y(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("y must be > 0")
    return y


def theta_first_order(coeffs: DerivedCoefficients, eps: float, d: float, t, y):
    """First-order policy b/a + dmu/(a d) [1 + (eps/y)(1 - e^{-delta(T-t)})/delta]."""
    y = _positive_y(y)
    s = _remaining(coeffs, t)
    vs = eps * stable_expm_ratio(_delta(coeffs, d), s)
    out = coeffs.b / coeffs.a + coeffs.delta_mu / (coeffs.a * d) * (1.0 + vs / y)
    return out if np.ndim(out) else float(out)


# auxiliary functions of the d, mu_s and beta sensitivities; all vanish at s = 0

def omega_d(coeffs: DerivedCoefficients, d: float, s):
    """Integral over [0, s] of (1 - d c^2 z) e^{-delta z}."""
    dl = _delta(coeffs, d)
    return stable_expm_ratio(dl, s) - d * coeffs.c**2 * stable_moment_ratio(dl, s)


def omega_mu_s(coeffs: DerivedCoefficients, d: float, s):
    """Integral over [0, s] of (1 - dmu (b/a) z) e^{-delta z}."""
    dl = _delta(coeffs, d)
    return stable_expm_ratio(dl, s) - coeffs.delta_mu * coeffs.b / coeffs.a * stable_moment_ratio(dl, s)


def omega_beta(coeffs: DerivedCoefficients, d: float, s):
    """Integral over [0, s] of z e^{-delta z}."""
    return stable_moment_ratio(_delta(coeffs, d), s)


SENSITIVITIES = ("eps", "kappa", "d", "mu_s", "beta", "t", "y")


@dataclass(frozen=True)
class Sensitivity:
    which: str
    value: np.ndarray | float
    precondition_ok: bool


def sensitivity(coeffs: DerivedCoefficients, eps: float, d: float, t, y, which: str) -> Sensitivity:
    """Closed-form partial derivative of the first-order policy.

    ``which`` is one of eps, kappa, d, mu_s, beta (model parameters) or t, y.
    ``precondition_ok`` reports whether the sign guarantee applies.
    """
    if which not in SENSITIVITIES:
        raise ValueError(f"unknown sensitivity {which!r}; choose from {', '.join(SENSITIVITIES)}")
    y = _positive_y(y)
    s = _remaining(coeffs, t)
    a, dmu = coeffs.a, coeffs.delta_mu
    dl = _delta(coeffs, d)
    E = stable_expm_ratio(dl, s)
    if which == "eps":
        val = dmu / (a * d * y) * E
    elif which == "kappa":
        val = -coeffs.params.eps_gross * dmu / (a * d * y) * E
    elif which == "d":
        val = -dmu / (a * d**2) * (1.0 + eps / y * omega_d(coeffs, d, s))
    elif which == "mu_s":
        val = 1.0 / (a * d) * (1.0 + eps / y * omega_mu_s(coeffs, d, s))
    elif which == "beta":
        val = dmu / (a * d) * eps / y * omega_beta(coeffs, d, s)
    elif which == "t":
        val = -dmu / (a * d) * eps / y * np.exp(-dl * s)
    else:
        val = -dmu / (a * d) * eps / y**2 * E
    ok = sensitivity_precondition(coeffs, which, d).satisfied
    return Sensitivity(which, val if np.ndim(val) else float(val), ok)


@dataclass(frozen=True)
class Precondition:
    which: str
    quantity: float          # the value compared against the threshold
    threshold: float
    satisfied: bool
    published_value: float | None = None
    note: str = ""


_PUBLISHED_THRESHOLDS = {"d": 306.0, "mu_s": 3.19}


def sensitivity_precondition(coeffs: DerivedCoefficients, which: str, d: float | None = None) -> Precondition:
    """Sufficient condition for the sign of the ``which`` sensitivity on [0, T].

    d:    d <= 1/(c^2 T)     (then omega_d >= 0)
    mu_s: dmu <= a/(b T)     (then omega_mu_s >= 0)
    The remaining sensitivities have unconditional signs.
    """
    coeffs.require_hypothesis()
    d = coeffs.d if d is None else d
    T = coeffs.T
    if which == "d":
        thr = 1.0 / (coeffs.c**2 * T) if coeffs.c > 0 else np.inf
        return Precondition("d", d, thr, bool(d <= thr), _PUBLISHED_THRESHOLDS["d"],
                            "published magnitude differs from direct recomputation")
    if which == "mu_s":
        thr = coeffs.a / (coeffs.b * T)
        return Precondition("mu_s", coeffs.delta_mu, thr, bool(coeffs.delta_mu <= thr),
                            _PUBLISHED_THRESHOLDS["mu_s"],
                            "published magnitude differs from direct recomputation")
    if which in SENSITIVITIES:
        return Precondition(which, np.nan, np.inf, True)
    raise ValueError(f"unknown sensitivity {which!r}")


# --- psi backends --------------------------------------------------------------

PsiSource = Callable[[np.ndarray, np.ndarray], np.ndarray]


def first_order_psi(coeffs: DerivedCoefficients, eps: float) -> PsiSource:
    """psi = gamma d / (1 + vs(s) e^{-x}) with the delta-branch vs.

    This is the psi for which theta_from_psi reproduces theta_first_order.
    """
    lam = BoundPair.from_coeffs(coeffs).lambda_upper

    def source(s, x):
        return coeffs.psi0 / (1.0 + eps * stable_expm_ratio(lam, s) * np.exp(-x))
    return source


def series_psi(series: SeriesSolution, eps: float) -> PsiSource:
    """Truncated series; NaN where the partial sum is not positive."""
    def source(s, x):
        r = eval_psi(series, s, x, eps)
        return np.where(r.valid, r.value, np.nan)
    return source


@dataclass(frozen=True)
class PolicySurface:
    t_grid: np.ndarray
    y_grid: np.ndarray
    theta_raw: np.ndarray       # (len(t_grid), len(y_grid)); NaN where invalid
    theta_clipped: np.ndarray
    valid: np.ndarray
    source: str
    clip: tuple[float, float]
    diagnostics: dict = field(default_factory=dict)

    def rows(self):
        for i, t in enumerate(self.t_grid):
            for j, y in enumerate(self.y_grid):
                yield (t, y, self.theta_raw[i, j], self.theta_clipped[i, j], bool(self.valid[i, j]))


def _monotone_fraction(theta: np.ndarray, axis: int) -> float:
    diff = np.diff(theta, axis=axis)
    ok = np.isfinite(diff)
    return float(np.mean(diff[ok] < 0)) if ok.any() else float("nan")


def build_policy_surface(psi_source: PsiSource, coeffs: DerivedCoefficients, eps: float,
                         t_grid, y_grid, clip=(0.0, 1.0), source: str = "first-order") -> PolicySurface:
    t_grid = np.asarray(t_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    for name, g in (("t_grid", t_grid), ("y_grid", y_grid)):
        if g.size == 0 or np.any(np.diff(g) <= 0):
            raise ValueError(f"{name} must be nonempty and strictly increasing")
    _positive_y(y_grid)
    s = _remaining(coeffs, t_grid)
    S, X = np.meshgrid(s, np.log(y_grid), indexing="ij")
    psi = np.asarray(psi_source(S, X), dtype=float)
    valid = np.isfinite(psi) & (psi > 0)
    raw = np.full(psi.shape, np.nan)
    raw[valid] = theta_from_psi(coeffs, psi[valid])
    lo, hi = clip
    clipped = np.where(valid, clip_theta(raw, lo, hi), np.nan)
    diag = {
        "decreasing_in_t": _monotone_fraction(raw, 0),
        "decreasing_in_y": _monotone_fraction(raw, 1),
        "invalid_cells": int((~valid).sum()),
    }
    return PolicySurface(t_grid, y_grid, raw, clipped, valid, source, (float(lo), float(hi)), diag)


# --- feedback policies for simulation -----------------------------------------

@dataclass(frozen=True)
class FirstOrderPolicy:
    coeffs: DerivedCoefficients
    eps: float
    lo: float = 0.0
    hi: float = 1.0
    name: str = "first-order"

    def __call__(self, t, y):
        y = np.maximum(np.asarray(y, dtype=float), 1e-300)
        raw = theta_first_order(self.coeffs, self.eps, self.coeffs.d, t, y)
        return clip_theta(raw, self.lo, self.hi)


@dataclass(frozen=True)
class ConstantPolicy:
    theta: float
    name: str = "constant"

    def __call__(self, t, y):
        return np.full(np.shape(y), self.theta, dtype=float)


def merton_policy(coeffs: DerivedCoefficients, lo: float = 0.0, hi: float = 1.0) -> ConstantPolicy:
    return ConstantPolicy(float(clip_theta(coeffs.merton, lo, hi)), name="merton")
