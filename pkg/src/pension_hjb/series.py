"""Asymptotic expansion of psi(s, x) in powers of the contribution rate.

psi(s, x) = sum_n eps^n Phi_n(s) exp(-n x), with Phi_0 = gamma*d. Substituting
the ansatz into the transformed equation gives, mode by mode, the linear ODE

    Phi_n' = K_n Phi_n + xi_n(s),   Phi_n(0) = 0,
    K_n    = (c^2/2) [n(n-1)(1 + 1/Phi_0^2) - 2 n alpha / c^2 + 2 n d],

where xi_n depends on Phi_0..Phi_{n-1} and on the coefficients Omega_k of
the reciprocal series 1/psi = sum_n eps^n Omega_n(s) exp(-n x).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .model import DerivedCoefficients


class NumericError(RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


def stable_expm_ratio(lam, s):
    """(1 - exp(-lam s)) / lam, equal to s at lam = 0 and >= 0 for s >= 0."""
    lam = np.asarray(lam, dtype=float)
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lam == 0.0, s, -np.expm1(-lam * s) / np.where(lam == 0.0, 1.0, lam))
    return out if out.ndim else float(out)


def stable_moment_ratio(lam, s):
    """Integral of z exp(-lam z) over [0, s], i.e. (1 - e^{-lam s}(1 + lam s)) / lam^2."""
    lam = np.asarray(lam, dtype=float)
    s = np.asarray(s, dtype=float)
    u = lam * s
    small = np.abs(u) < 0.05
    # series s^2 sum_k (-u)^k / (k! (k+2)); 12 terms is exact to rounding for |u| < 0.05
    ser = np.zeros(np.broadcast(u, s).shape)
    term = np.ones_like(ser)
    for k in range(12):
        ser = ser + term / (k + 2)
        term = term * (-u) / (k + 1)
    ser = ser * s**2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = (-np.expm1(-u) - u * np.exp(-u)) / np.where(lam == 0.0, 1.0, lam) ** 2
    out = np.where(small, ser, direct)
    return out if out.ndim else float(out)


def mode_rate(coeffs: DerivedCoefficients, n: int) -> float:
    """Linear coefficient K_n of the mode-n ODE."""
    c2 = coeffs.c**2
    phi0 = coeffs.psi0
    return 0.5 * c2 * (n * (n - 1) * (1.0 + 1.0 / phi0**2) - 2.0 * n * coeffs.alpha / c2 + 2.0 * n * coeffs.d)


def phi1_closed_form(coeffs: DerivedCoefficients, s):
    """Phi_1(s) = d gamma (exp(-delta s) - 1) / delta."""
    return -coeffs.psi0 * stable_expm_ratio(coeffs.delta, s)


def xi2(coeffs: DerivedCoefficients, s):
    """Forcing of the mode-2 ODE: c^2 (1/gamma - 1/(d gamma)^3) Phi_1^2 - 2 Phi_1."""
    p1 = phi1_closed_form(coeffs, s)
    q = coeffs.c**2 * (1.0 / coeffs.gamma - 1.0 / coeffs.psi0**3)
    return q * p1**2 - 2.0 * p1


def _phi2_analytic(coeffs: DerivedCoefficients, s):
    # xi_2 = q Phi0^2 E(z)^2 + 2 Phi0 E(z) with E(z) = (1 - e^{-delta z})/delta; against the
    # kernel e^{K(s-z)}, e^{-mu z} integrates to G(mu) = e^{K s} E(K + mu, s), so Phi_2 is a
    # combination of e^{Ks}, 1, e^{-delta s}, e^{-2 delta s}.
    s = np.asarray(s, dtype=float)
    K = mode_rate(coeffs, 2)
    dl = coeffs.delta
    phi0 = coeffs.psi0
    q = coeffs.c**2 * (1.0 / coeffs.gamma - 1.0 / phi0**3)
    eks = np.exp(K * s)

    def G(mu):
        return eks * stable_expm_ratio(K + mu, s)

    g0, g1, g2 = G(0.0), G(dl), G(2.0 * dl)
    i1 = (g0 - g1) / dl
    i2 = (g0 - 2.0 * g1 + g2) / dl**2
    return q * phi0**2 * i2 + 2.0 * phi0 * i1


def _phi2_quad(coeffs: DerivedCoefficients, s: float, quad_tol: float) -> float:
    if s == 0.0:
        return 0.0
    K = mode_rate(coeffs, 2)
    val, err = integrate.quad(lambda z: xi2(coeffs, z) * np.exp(K * (s - z)), 0.0, s,
                              epsabs=0.0, epsrel=quad_tol, limit=200)
    if err > max(quad_tol * abs(val), 1e-300):
        raise NumericError(f"quadrature for Phi_2({s}) reached only {err:.3e} (asked {quad_tol:.1e})")
    return val


def psi2_closed_form(coeffs: DerivedCoefficients, s, quad_tol: float = 1e-10, method: str = "analytic"):
    """Coefficient Phi_2(s) of the exp(-2x) mode.

    ``method="analytic"`` sums the exponential antiderivative; ``"quad"`` runs
    adaptive quadrature of the variation-of-constants integral to ``quad_tol``.
    """
    if method == "analytic":
        out = _phi2_analytic(coeffs, s)
        return out if np.ndim(out) else float(out)
    if method == "quad":
        arr = np.asarray(s, dtype=float)
        out = np.vectorize(lambda v: _phi2_quad(coeffs, float(v), quad_tol))(arr)
        return out if out.ndim else float(out)
    raise ValueError(f"unknown method {method!r}")


def omega_from_phi(phi: np.ndarray) -> np.ndarray:
    """Reciprocal-series coefficients Omega_0..Omega_N from Phi_0..Phi_N (rows)."""
    phi = np.asarray(phi, dtype=float)
    omega = np.empty_like(phi)
    omega[0] = 1.0 / phi[0]
    for n in range(1, phi.shape[0]):
        acc = np.zeros_like(phi[0])
        for k in range(n):
            acc = acc + omega[k] * phi[n - k]
        omega[n] = -acc / phi[0]
    return omega


def mode_forcing(coeffs: DerivedCoefficients, n: int, phi: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """xi_n evaluated from rows Phi_0..Phi_{n-1}, Omega_0..Omega_{n-1} (same sample points)."""
    half_c2 = 0.5 * coeffs.c**2
    phi0 = coeffs.psi0
    conv_po = np.zeros_like(phi[0])
    conv_pp = np.zeros_like(phi[0])
    for k in range(1, n):
        conv_po = conv_po + phi[n - k] * omega[k]
        conv_pp = conv_pp + phi[n - k] * phi[k]
    return (half_c2 * n * (n - 1) / phi0 * conv_po - n * phi[n - 1]
            + n / coeffs.gamma * half_c2 * conv_pp)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class SeriesSolution:
    coeffs: DerivedCoefficients
    order: int
    s: np.ndarray
    phi: np.ndarray     # (order+1, len(s))
    omega: np.ndarray   # (order+1, len(s))

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    @cached_property
    def splines(self) -> list[CubicSpline]:
        return [CubicSpline(self.s, row) for row in self.phi]

    def phi_at(self, n: int, s):
        return self.splines[n](np.asarray(s, dtype=float))

    def ode_residual(self, n: int) -> np.ndarray:
        """Phi_n' (fourth-order central differences) minus the mode-n right-hand side.

        Returned on interior nodes 2..M-3.
        """
        h = self.ds
        f = self.phi[n]
        deriv = (8.0 * (f[3:-1] - f[1:-3]) - (f[4:] - f[:-4])) / (12.0 * h)
        rhs = mode_rate(self.coeffs, n) * f + mode_forcing(self.coeffs, n, self.phi, self.omega)
        return deriv - rhs[2:-2]

    def table(self) -> tuple[list[str], np.ndarray]:
        cols = ["s"] + [f"phi_{n}" for n in range(self.order + 1)] + [f"omega_{n}" for n in range(self.order + 1)]
        return cols, np.column_stack([self.s, self.phi.T, self.omega.T])


def build_series(coeffs: DerivedCoefficients, order: int = 3, s_steps: int = 2001,
                 closed_forms: bool = True) -> SeriesSolution:
    """Tabulate Phi_0..Phi_N and Omega_0..Omega_N on a uniform grid over [0, T].

    Modes n <= 2 use the closed forms unless ``closed_forms`` is False, in which
    case every n >= 1 goes through the variation-of-constants recurrence.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if s_steps < 2:
        raise ValueError("s_steps must be >= 2")
    s = np.linspace(0.0, coeffs.T, s_steps)
    h = s[1] - s[0]
    # quadrature points of every panel [s_j, s_j + h]
    zq = s[:-1, None] + 0.5 * h * (_GL_NODES[None, :] + 1.0)
    wq = 0.5 * h * _GL_WEIGHTS

    phi = np.zeros((order + 1, s_steps))
    phi_q = np.zeros((order + 1,) + zq.shape)
    phi[0] = coeffs.psi0
    phi_q[0] = coeffs.psi0
    for n in range(1, order + 1):
        if closed_forms and n == 1:
            phi[n] = phi1_closed_form(coeffs, s)
            phi_q[n] = phi1_closed_form(coeffs, zq)
            continue
        if closed_forms and n == 2:
            phi[n] = psi2_closed_form(coeffs, s)
            phi_q[n] = psi2_closed_form(coeffs, zq)
            continue
        omega_q = omega_from_phi(phi_q[:n])
        xi = mode_forcing(coeffs, n, phi_q[:n + 1], omega_q)
        K = mode_rate(coeffs, n)
        panel = (xi * np.exp(K * (s[1:, None] - zq)) * wq).sum(axis=1)
        growth = np.exp(K * h)
        row = np.empty(s_steps)
        row[0] = 0.0
        for j in range(s_steps - 1):
            row[j + 1] = growth * row[j] + panel[j]
        phi[n] = row
        phi_q[n] = CubicSpline(s, row)(zq)
    return SeriesSolution(coeffs=coeffs, order=order, s=s, phi=phi, omega=omega_from_phi(phi))


@dataclass(frozen=True)
class PsiValue:
    value: np.ndarray | float
    last_term: np.ndarray | float
    valid: np.ndarray | bool


def eval_psi(series: SeriesSolution, s, x, eps: float) -> PsiValue:
    """Truncated sum at (s, x); ``valid`` is False where the sum is not positive."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((s < 0) | (s > series.coeffs.T * (1 + 1e-12))):
        raise ValueError("s outside [0, T]")
    s, x = np.broadcast_arrays(s, x)
    total = np.full(s.shape, series.phi[0, 0])
    term = np.zeros(s.shape)
    for n in range(1, series.order + 1):
        term = eps**n * series.phi_at(n, s) * np.exp(-n * x)
        total = total + term
    last = np.abs(term) if series.order else np.full(s.shape, abs(series.phi[0, 0]))
    valid = total > 0
    if total.ndim == 0:
        return PsiValue(float(total), float(last), bool(valid))
    return PsiValue(total, last, valid)
