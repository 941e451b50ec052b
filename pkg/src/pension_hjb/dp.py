"""Time-discrete Bellman problem on a wealth grid.

W(T, y) = U(y) and, for t = T-1, ..., 1,

    W(t, y) = max_{theta in [l, u]} E_Z[ W(t+1, F(theta, y, Z)) ],
    F(theta, y, z) = y exp((mu(theta) - beta - sigma(theta)^2/2) tau + sigma(theta) z sqrt(tau)) + eps tau.

W(t+1, .) is interpolated through its certainty equivalent U^{-1}(W), which is
close to linear in log-log coordinates for CRRA utility and stays well
conditioned where W itself spans many orders of magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .model import ModelParams, UtilitySpec, fund_moments, utility

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def transition(theta, y, z, eps: float, tau: float, params: ModelParams):
    """Wealth one period ahead for stock proportion ``theta`` and shock ``z``."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    mean, var = fund_moments(theta, params)
    sig = np.sqrt(var)
    y = np.asarray(y, dtype=float)
    growth = np.exp((mean - params.beta - 0.5 * var) * tau + sig * np.asarray(z, dtype=float) * np.sqrt(tau))
    out = y * growth + eps * tau
    return out if np.ndim(out) else float(out)


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(Z)], Z ~ N(0, 1)."""
    if n < 1:
        raise ValueError("need at least one node")
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


class ValueInterpolant:
    """W(y) from node values, interpolated in (log y, log certainty equivalent).

    Monotone cubic (PCHIP) inside the grid, linear in log-log outside it.
    """

    def __init__(self, y_grid: np.ndarray, W: np.ndarray, util: UtilitySpec):
        self.util = util
        self.y_grid = np.asarray(y_grid, dtype=float)
        lx = np.log(self.y_grid)
        lce = np.log(util.inverse(W))
        self._lx0, self._lx1 = lx[0], lx[-1]
        self._f0, self._f1 = lce[0], lce[-1]
        self._s0 = (lce[1] - lce[0]) / (lx[1] - lx[0])
        self._s1 = (lce[-1] - lce[-2]) / (lx[-1] - lx[-2])
        self._pchip = PchipInterpolator(lx, lce, extrapolate=False)

    def log_ce(self, y):
        lx = np.log(np.asarray(y, dtype=float))
        inside = np.clip(lx, self._lx0, self._lx1)
        out = self._pchip(inside)
        out = np.where(lx < self._lx0, self._f0 + self._s0 * (lx - self._lx0), out)
        return np.where(lx > self._lx1, self._f1 + self._s1 * (lx - self._lx1), out)

    def __call__(self, y):
        return utility(self.util, np.exp(self.log_ce(y)))


def expected_value(W_next, theta, y, eps: float, params: ModelParams, quad_nodes: int = 32,
                   tau: float = 1.0):
    """Gauss-Hermite approximation of E_Z[W_next(F(theta, y, Z))].

    ``theta`` and ``y`` broadcast against each other; the quadrature axis is appended.
    """
    if quad_nodes < 8:
        raise ValueError("quad_nodes must be >= 8")
    z, w = gauss_hermite(quad_nodes)
    theta = np.asarray(theta, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    vals = W_next(transition(theta, y, z, eps, tau, params))
    out = vals @ w
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ValueGrid:
    t_index: np.ndarray          # 1..T
    y_grid: np.ndarray
    W: np.ndarray                # (T, len(y_grid)); row k is time t_index[k]
    theta_star: np.ndarray       # (T, len(y_grid)); last row (t = T) is NaN
    quad_nodes: int
    theta_bounds: tuple[float, float]
    eps: float

    def interpolant(self, t: int, util: UtilitySpec) -> ValueInterpolant:
        return ValueInterpolant(self.y_grid, self.W[self._row(t)], util)

    def policy_at(self, t: int, y):
        """theta* at integer time t, linearly interpolated in log y (clamped to the grid)."""
        row = self.theta_star[self._row(t)]
        return np.interp(np.log(np.asarray(y, dtype=float)), np.log(self.y_grid), row)

    def _row(self, t: int) -> int:
        k = int(t) - int(self.t_index[0])
        if not 0 <= k < len(self.t_index):
            raise IndexError(f"t={t} outside 1..{self.t_index[-1]}")
        return k


def default_y_grid(n: int = 400, lo: float = 0.01, hi: float = 50.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def solve_bellman(params: ModelParams, y_grid=None, quad_nodes: int = 32, theta_grid=None,
                  eps: float | None = None, tau: float = 1.0, refine_tol: float = 1e-4) -> ValueGrid:
    """Backward induction over integer years T-1, ..., 1.

    Per node, the maximiser is located on ``theta_grid`` and then refined by
    golden-section search on the bracket formed by its grid neighbours.
    """
    y_grid = default_y_grid() if y_grid is None else np.asarray(y_grid, dtype=float)
    if y_grid.ndim != 1 or y_grid.size < 4 or np.any(np.diff(y_grid) <= 0) or y_grid[0] <= 0:
        raise ValueError("y_grid must be positive, strictly increasing, with >= 4 nodes")
    lo, hi = params.theta_lo, params.theta_hi
    if not np.isfinite(hi):
        raise ValueError("the discrete problem needs a finite upper bound on theta")
    theta_grid = np.linspace(lo, hi, 101) if theta_grid is None else np.asarray(theta_grid, dtype=float)
    if theta_grid[0] > lo + 1e-12 or theta_grid[-1] < hi - 1e-12 or np.any(np.diff(theta_grid) <= 0):
        raise ValueError("theta_grid must be increasing and span [theta_lo, theta_hi]")
    eps = params.eps_net if eps is None else float(eps)
    util = UtilitySpec(params.d)
    T = int(round(params.T))
    if abs(T - params.T) > 1e-9:
        raise ValueError("the discrete problem needs an integer horizon T")

    W = np.empty((T, y_grid.size))
    theta_star = np.full((T, y_grid.size), np.nan)
    W[-1] = utility(util, y_grid)
    for k in range(T - 2, -1, -1):
        nxt = ValueInterpolant(y_grid, W[k + 1], util)

        def objective(th, yy):
            return expected_value(nxt, th, yy, eps, params, quad_nodes, tau)

        vals = objective(theta_grid[None, :], y_grid[:, None])
        j = np.argmax(vals, axis=1)
        a = theta_grid[np.maximum(j - 1, 0)]
        b = theta_grid[np.minimum(j + 1, theta_grid.size - 1)]
        th, best = _golden_max(objective, a, b, y_grid, refine_tol)
        grid_best = vals[np.arange(y_grid.size), j]
        use_grid = grid_best >= best
        theta_star[k] = np.where(use_grid, theta_grid[j], th)
        W[k] = np.where(use_grid, grid_best, best)
    return ValueGrid(np.arange(1, T + 1), y_grid, W, theta_star, quad_nodes, (lo, hi), eps)


def _golden_max(f, a, b, y, tol):
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c, y), f(d, y)
    while np.max(b - a) > tol:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _GOLDEN * (b - a)
        new_d = a + _GOLDEN * (b - a)
        c_old, d_old = c, d
        c = np.where(left, new_c, d_old)
        d = np.where(left, c_old, new_d)
        f_new = f(np.where(left, c, d), y)
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
    mid = 0.5 * (a + b)
    return mid, f(mid, y)


@dataclass(frozen=True)
class SuperoptimalityVerdict:
    passed: bool
    max_violation: float       # max relative excess of W_small over W_large
    tolerance: float
    location: tuple[int, float]
    small: ValueGrid
    large: ValueGrid


def superoptimality_check(params: ModelParams, y_grid=None, u_small: float = 1.0, u_large: float = 3.0,
                          quad_nodes: int = 32, tol: float = 1e-4) -> SuperoptimalityVerdict:
    """Value under [l, u_small] must not exceed value under [l, u_large].

    Both problems search the union of their theta grids so the comparison is
    not polluted by grid placement. The violation is measured relative to |W|.
    """
    if not u_small <= u_large:
        raise ValueError("u_small must not exceed u_large")
    lo = params.theta_lo
    step = 0.01
    big = np.union1d(np.linspace(lo, u_small, int(round((u_small - lo) / step)) + 1),
                     np.linspace(lo, u_large, int(round((u_large - lo) / step)) + 1))
    small_grid = big[big <= u_small + 1e-12]
    small = solve_bellman(params.with_(theta_hi=u_small), y_grid, quad_nodes, small_grid)
    large = solve_bellman(params.with_(theta_hi=u_large), small.y_grid, quad_nodes, big)
    rel = (small.W - large.W) / np.abs(large.W)
    k, i = np.unravel_index(np.argmax(rel), rel.shape)
    worst = float(max(rel[k, i], 0.0))
    return SuperoptimalityVerdict(bool(worst <= tol), worst, tol,
                                  (int(small.t_index[k]), float(small.y_grid[i])), small, large)


@dataclass(frozen=True)
class GapSurface:
    t_index: np.ndarray
    y_grid: np.ndarray
    theta_dp: np.ndarray
    theta_continuous: np.ndarray
    gap: np.ndarray              # |theta_dp - theta_continuous|
    max_gap: float
    argmax: tuple[int, float]

    def rows(self):
        for k, t in enumerate(self.t_index):
            for i, y in enumerate(self.y_grid):
                yield t, y, self.theta_dp[k, i], self.theta_continuous[k, i], self.gap[k, i]


def gap_surface(grid: ValueGrid, continuous, y_range: tuple[float, float] = (0.05, 10.0)) -> GapSurface:
    """Compare theta* with a continuous policy ``continuous(t, y)`` at t = 1..T-1.

    Only wealth nodes inside ``y_range`` enter the comparison.
    """
    mask = (grid.y_grid >= y_range[0]) & (grid.y_grid <= y_range[1])
    if not mask.any():
        raise ValueError("y_range contains no grid nodes")
    ys = grid.y_grid[mask]
    ts = grid.t_index[:-1]
    th_dp = grid.theta_star[:-1][:, mask]
    th_c = np.array([np.asarray(continuous(float(t), ys), dtype=float) for t in ts])
    gap = np.abs(th_dp - th_c)
    k, i = np.unravel_index(np.argmax(gap), gap.shape)
    return GapSurface(ts, ys, th_dp, th_c, gap, float(gap[k, i]), (int(ts[k]), float(ys[i])))
