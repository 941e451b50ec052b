"""Finite-difference solver for the quasilinear equation in psi(s, x).

    psi_s = (c^2/2) d/dx F,
    F     = (1 + d/dx)(psi - 1/psi) + psi (B eps e^{-x} + A - psi/gamma),

with A = 2 alpha / c^2, B = 2 / c^2, psi(0, x) = gamma d, on a truncated
interval [x_min, x_max] whose end values are pinned to the midpoint of the
closed-form envelope.

The flux is evaluated at cell interfaces (centred differences, arithmetic
averages), so the scheme is conservative and keeps constants exact when
eps = 0. The default time integrator is the two-stage L-stable SDIRK method
with a Newton solve on the tridiagonal Jacobian; an explicit Euler scheme with
automatic stability substepping is available for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .bounds import psi_envelope
from .model import DerivedCoefficients
from .series import NumericError

_SDIRK = 1.0 - 1.0 / np.sqrt(2.0)
MAX_HALVINGS = 20


class StepRejected(NumericError):
    """Time step could not be completed even after repeated halving."""

    def __init__(self, message: str, s: float, last_psi: np.ndarray):
        super().__init__(message)
        self.s = s
        self.last_psi = last_psi


@dataclass(frozen=True)
class FdGrid:
    x_min: float
    x_max: float
    nx: int
    ns: int
    scheme: str
    x: np.ndarray
    s: np.ndarray
    psi: np.ndarray                  # (ns + 1, nx)
    eps: float
    halvings: int = 0                # total number of step halvings during the solve
    error_estimate: np.ndarray | None = None   # Richardson estimate on the final level, NaN off coarse nodes
    error_max: float | None = None             # max of error_estimate
    error_by_level: np.ndarray | None = None   # (ns + 1,) max-norm Richardson estimate; NaN on odd levels
    meta: dict = field(default_factory=dict)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def final(self) -> np.ndarray:
        return self.psi[-1]

    def at(self, s, x):
        """Bilinear interpolation of psi in (s, x)."""
        s = np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        s, x = np.broadcast_arrays(s, x)
        fs = np.clip((s - self.s[0]) / (self.s[1] - self.s[0]), 0, self.ns - 1e-12)
        fx = np.clip((x - self.x_min) / self.dx, 0, self.nx - 1 - 1e-12)
        i, j = fs.astype(int), fx.astype(int)
        ws, wx = fs - i, fx - j
        p = self.psi
        return ((1 - ws) * ((1 - wx) * p[i, j] + wx * p[i, j + 1])
                + ws * ((1 - wx) * p[i + 1, j] + wx * p[i + 1, j + 1]))

    def as_source(self):
        """Callable (s, x) -> psi for policy surfaces; NaN outside the domain."""
        def source(s, x):
            x = np.asarray(x, dtype=float)
            out = self.at(s, x)
            return np.where((x >= self.x_min) & (x <= self.x_max), out, np.nan)
        return source


class _Operator:
    """Spatial discretisation: R(psi) = (c^2/2) (F_{i+1/2} - F_{i-1/2}) / dx on interior nodes."""

    def __init__(self, coeffs: DerivedCoefficients, eps: float, x: np.ndarray):
        c2 = coeffs.c**2
        self.k = 0.5 * c2
        self.gamma = coeffs.gamma
        self.dx = float(x[1] - x[0])
        xm = 0.5 * (x[:-1] + x[1:])
        # B eps e^{-x} + A at interfaces
        self.lin = 2.0 * eps / c2 * np.exp(-xm) + 2.0 * coeffs.alpha / c2

    def flux(self, p):
        u = p - 1.0 / p
        pm = 0.5 * (p[:-1] + p[1:])
        return (u[1:] - u[:-1]) / self.dx + 0.5 * (u[:-1] + u[1:]) + pm * (self.lin - pm / self.gamma)

    def rhs(self, p):
        F = self.flux(p)
        out = np.zeros_like(p)
        out[1:-1] = self.k * (F[1:] - F[:-1]) / self.dx
        return out

    def jacobian_bands(self, p):
        """Banded (3, n) Jacobian of rhs; boundary rows are zero."""
        n = p.size
        du = 1.0 + 1.0 / p**2
        pm = 0.5 * (p[:-1] + p[1:])
        dg = 0.5 * (self.lin - 2.0 * pm / self.gamma)
        inv = 1.0 / self.dx
        dF_right = du[1:] * (inv + 0.5) + dg     # dF_{i+1/2}/dpsi_{i+1}
        dF_left = du[:-1] * (-inv + 0.5) + dg    # dF_{i+1/2}/dpsi_i
        sc = self.k * inv
        upper = np.zeros(n)
        diag = np.zeros(n)
        lower = np.zeros(n)
        # row i uses F_{i+1/2} (index i) and F_{i-1/2} (index i-1)
        upper[2:] = sc * dF_right[1:]                       # d R_i / d psi_{i+1}, stored at column i+1
        diag[1:-1] = sc * (dF_left[1:] - dF_right[:-1])
        lower[:-2] = -sc * dF_left[:-1]                     # d R_i / d psi_{i-1}, stored at column i-1
        return np.vstack([upper, diag, lower])

    def max_rates(self, p):
        """Largest diffusion coefficient and advection speed, for explicit stability."""
        D = self.k * (1.0 + 1.0 / p**2)
        pm = 0.5 * (p[:-1] + p[1:])
        v = self.k * np.abs(0.5 * (2.0 + 1.0 / p[:-1]**2 + 1.0 / p[1:]**2) + self.lin - 2.0 * pm / self.gamma)
        return float(D.max()), float(v.max())


def _boundary_values(coeffs, eps, s, x_ends):
    env = psi_envelope(coeffs, eps, min(s, coeffs.T), x_ends)
    return 0.5 * (np.asarray(env.lower) + np.asarray(env.upper))


def _newton_stage(op: _Operator, base: np.ndarray, hg: float, guess: np.ndarray, bvals,
                  tol: float = 1e-12, max_iter: int = 25):
    """Solve Y = base + hg R(Y) on interior nodes with Y fixed to ``bvals`` at the ends."""
    Y = guess.copy()
    Y[0], Y[-1] = bvals
    scale = np.max(np.abs(base)) + 1e-300
    for _ in range(max_iter):
        if np.any(~(Y > 0)) or not np.all(np.isfinite(Y)):
            return None
        G = Y - base - hg * op.rhs(Y)
        G[0] = G[-1] = 0.0
        ab = -hg * op.jacobian_bands(Y)
        ab[1] += 1.0
        try:
            delta = solve_banded((1, 1), ab, -G)
        except (np.linalg.LinAlgError, ValueError):
            return None
        Y = Y + delta
        if np.max(np.abs(delta)) <= tol * scale:
            return Y if np.all(Y > 0) else None
    return None


def _sdirk_step(op, coeffs, eps, x_ends, p, s, h):
    b1 = _boundary_values(coeffs, eps, s + _SDIRK * h, x_ends)
    Y1 = _newton_stage(op, p, _SDIRK * h, p, b1)
    if Y1 is None:
        return None
    k1 = op.rhs(Y1)
    b2 = _boundary_values(coeffs, eps, s + h, x_ends)
    return _newton_stage(op, p + (1.0 - _SDIRK) * h * k1, _SDIRK * h, Y1, b2)


def _explicit_step(op, coeffs, eps, x_ends, p, s, h):
    t_end = s + h
    t = s
    q = p.copy()
    while t < t_end - 1e-15 * max(1.0, t_end):
        D, v = op.max_rates(q)
        dt_stab = 0.4 * min(op.dx**2 / (2.0 * D), op.dx / v if v > 0 else np.inf)
        dt = min(dt_stab, t_end - t)
        q = q + dt * op.rhs(q)
        t += dt
        q[0], q[-1] = _boundary_values(coeffs, eps, t, x_ends)
        if np.any(~(q > 0)):
            return None
    return q


_STEPPERS = {"semi-implicit": _sdirk_step, "explicit": _explicit_step}


def advance(coeffs: DerivedCoefficients, eps: float, x: np.ndarray, p: np.ndarray, s: float, ds: float,
            scheme: str = "semi-implicit") -> tuple[np.ndarray, int]:
    """Advance psi from level s to s + ds, halving the step on failure.

    Returns the new level and the number of halvings used. Raises StepRejected
    after MAX_HALVINGS consecutive halvings.
    """
    if scheme not in _STEPPERS:
        raise ValueError(f"unknown scheme {scheme!r}")
    if np.any(~(p > 0)) or not np.all(np.isfinite(p)):
        raise ValueError("current level must be positive and finite")
    op = _Operator(coeffs, eps, x)
    stepper = _STEPPERS[scheme]
    x_ends = np.array([x[0], x[-1]])
    target = s + ds
    h = ds
    halvings = 0
    q = p
    t = s
    while t < target - 1e-12 * max(1.0, target):
        h = min(h, target - t)
        nxt = stepper(op, coeffs, eps, x_ends, q, t, h)
        if nxt is None:
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise StepRejected(f"step at s={t:.6g} rejected after {MAX_HALVINGS} halvings", t, q)
            h *= 0.5
            continue
        q, t = nxt, t + h
    return q, halvings


def step(grid: FdGrid, coeffs: DerivedCoefficients, eps: float, level: int) -> np.ndarray:
    """Values at level + 1 computed from the stored level ``level`` of ``grid``."""
    if not 0 <= level < grid.ns:
        raise IndexError("level out of range")
    ds = float(grid.s[level + 1] - grid.s[level])
    out, _ = advance(coeffs, eps, grid.x, grid.psi[level], float(grid.s[level]), ds, grid.scheme)
    return out


def _march(coeffs, eps, x, ns, scheme):
    s = np.linspace(0.0, coeffs.T, ns + 1)
    psi = np.empty((ns + 1, x.size))
    psi[0] = coeffs.psi0
    total = 0
    for n in range(ns):
        try:
            psi[n + 1], h = advance(coeffs, eps, x, psi[n], s[n], s[n + 1] - s[n], scheme)
        except StepRejected as exc:
            raise StepRejected(f"{exc} (level {n})", exc.s, psi[n]) from None
        total += h
    return s, psi, total


def solve_pde(coeffs: DerivedCoefficients, eps: float, domain: tuple[float, float] = (-6.0, 8.0),
              resolution: tuple[int, int] = (801, 4000), scheme: str = "semi-implicit",
              richardson: bool = True) -> FdGrid:
    """Time-march psi over [0, T] on ``domain`` with ``resolution = (nx, ns)``.

    With ``richardson`` a companion run at half resolution in both x and s
    (nx must be odd, ns even) yields the estimate |psi_h - psi_2h| / 3 on the
    shared nodes. It is kept in full on the final level and as a max norm on
    every shared (even) level; odd levels have no companion value and hold NaN.
    """
    coeffs.require_hypothesis()
    x_min, x_max = map(float, domain)
    nx, ns = map(int, resolution)
    if not x_min < x_max:
        raise ValueError("x_min must be < x_max")
    if nx < 5 or ns < 1:
        raise ValueError("resolution must have nx >= 5 and ns >= 1")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    x = np.linspace(x_min, x_max, nx)
    s, psi, total = _march(coeffs, eps, x, ns, scheme)

    est, est_max, by_level = None, None, None
    if richardson:
        if nx % 2 == 0 or ns % 2 == 1:
            raise ValueError("Richardson companion needs odd nx and even ns")
        xc = x[::2]
        _, psic, _ = _march(coeffs, eps, xc, ns // 2, scheme)
        est = np.full(nx, np.nan)
        est[::2] = np.abs(psi[-1, ::2] - psic[-1]) / 3.0
        est_max = float(np.nanmax(est))
        even = np.max(np.abs(psi[::2, ::2] - psic), axis=1) / 3.0
        by_level = np.full(ns + 1, np.nan)
        by_level[::2] = even
    return FdGrid(x_min, x_max, nx, ns, scheme, x, s, psi, float(eps), total, est, est_max, by_level,
                  meta={"boundary": "envelope midpoint (Dirichlet)", "time_integrator":
                        "SDIRK2 (L-stable) + Newton" if scheme == "semi-implicit" else "forward Euler, substepped"})
