"""Closed-form sub/super-solutions and the envelopes they induce.

Both comparison functions have the shape psi = gamma d / (1 + vs(s) e^{-x}),
where vs(s) = eps (1 - e^{-lam s}) / lam solves vs' = eps - lam vs, vs(0) = 0.

* lam = alpha - d c^2 (= delta) gives a sub-solution: the dropped terms of the
  operator are nonnegative, so d/ds psi <= H(psi).
* lam = alpha + c^2 gives a super-solution.

Because vs is decreasing in lam, the sub-solution carries the *larger* vs.
Hence psi is bracketed by
    gamma d / (1 + vs_upper e^{-x})  <=  psi  <=  gamma d / (1 + vs_lower e^{-x})
with vs_lower built from lam_lower = alpha + c^2 and vs_upper from
lam_upper = alpha - d c^2, and every envelope below is returned as an
ordered (lower, upper) pair. The first-order policy coincides with the
*upper* edge of the policy bracket.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import DerivedCoefficients, DomainError
from .series import stable_expm_ratio


class Envelope(NamedTuple):
    lower: np.ndarray | float
    upper: np.ndarray | float


@dataclass(frozen=True)
class BoundPair:
    lambda_lower: float   # alpha + c^2, gives the smaller vs
    lambda_upper: float   # alpha - d c^2 = delta, gives the larger vs

    @classmethod
    def from_coeffs(cls, coeffs: DerivedCoefficients, d: float | None = None) -> "BoundPair":
        d = coeffs.d if d is None else d
        c2 = coeffs.c**2
        return cls(lambda_lower=coeffs.alpha + c2, lambda_upper=coeffs.alpha - d * c2)

    def varsigma_lower(self, eps: float, s):
        return varsigma(self.lambda_lower, eps, s)

    def varsigma_upper(self, eps: float, s):
        return varsigma(self.lambda_upper, eps, s)


def varsigma(lam: float, eps: float, s):
    """eps (1 - exp(-lam s)) / lam."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be >= 0")
    out = eps * stable_expm_ratio(lam, s)
    return out if np.ndim(out) else float(out)


def varsigma_ode_rhs(coeffs: DerivedCoefficients, which: str, eps: float, vs, d: float | None = None):
    """Right-hand side of the linear ODE for vs, written with A = 2 alpha/c^2, B = 2/c^2.

    ``which="upper"``:  vs' = -(c^2/2) ((A - 2 d) vs - eps B)
    ``which="lower"``:  vs' = -(c^2/2) ((2 + A) vs - eps B)
    """
    d = coeffs.d if d is None else d
    c2 = coeffs.c**2
    A, B = 2.0 * coeffs.alpha / c2, 2.0 / c2
    if which not in ("upper", "lower"):
        raise ValueError(f"which must be 'upper' or 'lower', got {which!r}")
    slope = (A - 2.0 * d) if which == "upper" else (2.0 + A)
    return -0.5 * c2 * (slope * np.asarray(vs) - eps * B)


def _check_s(coeffs, s):
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > coeffs.T * (1 + 1e-12))):
        raise DomainError("s must lie in [0, T]")
    return s


def _check_y(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("y must be > 0")
    return y


def _pack(lo, hi) -> Envelope:
    if np.ndim(lo) == 0:
        return Envelope(float(lo), float(hi))
    return Envelope(lo, hi)


def psi_envelope(coeffs: DerivedCoefficients, eps: float, s, x) -> Envelope:
    """Sub- and super-solution values of psi at (s, x), lower <= upper."""
    coeffs.require_hypothesis()
    s = _check_s(coeffs, s)
    pair = BoundPair.from_coeffs(coeffs)
    ex = np.exp(-np.asarray(x, dtype=float))
    lo = coeffs.psi0 / (1.0 + pair.varsigma_upper(eps, s) * ex)
    hi = coeffs.psi0 / (1.0 + pair.varsigma_lower(eps, s) * ex)
    if not np.all(lo <= hi * (1 + 1e-15)):
        raise RuntimeError("psi envelope edges out of order")
    return _pack(lo, hi)


def value_envelope(coeffs: DerivedCoefficients, eps: float, d: float, t, y) -> Envelope:
    """Bounds on the value function V(t, y) for U(y) = -y^(1-d), d > 1."""
    if not d > 1:
        raise DomainError("value envelope is stated for the power utility with d > 1")
    y = _check_y(y)
    s = _check_s(coeffs, coeffs.T - np.asarray(t, dtype=float))
    pair = BoundPair.from_coeffs(coeffs, d)
    lo = -((y + pair.varsigma_lower(eps, s)) ** (1.0 - d))
    hi = -((y + pair.varsigma_upper(eps, s)) ** (1.0 - d))
    return _pack(lo, hi)


def theta_bracket(coeffs: DerivedCoefficients, eps: float, d: float, t, y) -> Envelope:
    """Bounds on the unconstrained optimal stock proportion, lower <= upper."""
    coeffs.require_hypothesis()
    y = _check_y(y)
    s = _check_s(coeffs, coeffs.T - np.asarray(t, dtype=float))
    pair = BoundPair.from_coeffs(coeffs, d)
    base = coeffs.b / coeffs.a
    scale = coeffs.delta_mu / (coeffs.a * d)
    lo = base + scale * (1.0 + pair.varsigma_lower(eps, s) / y)
    hi = base + scale * (1.0 + pair.varsigma_upper(eps, s) / y)
    return _pack(lo, hi)

