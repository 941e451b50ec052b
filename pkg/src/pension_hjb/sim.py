"""Monte-Carlo wealth paths under a feedback policy theta(t, y).

Path i draws its shocks from its own stream, PCG64 seeded by
SeedSequence(seed, spawn_key=(i,)), via numpy's ziggurat ``standard_normal``.
Changing ``n_paths`` therefore never reshuffles the first paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .dp import ValueGrid, transition
from .model import ModelParams
from .policy import PolicySurface

NORMAL_METHOD = "numpy PCG64 per-path SeedSequence(seed, spawn_key=(i,)), ziggurat standard_normal"
QUANTILES = (0.05, 0.5, 0.95)

Policy = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EnsembleStats:
    n_paths: int
    seed: int
    t_index: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    quantiles: dict[float, np.ndarray]
    fallbacks: int = 0
    terminal: np.ndarray = field(default=None, repr=False)
    policy_name: str = ""

    @property
    def mean_terminal(self) -> float:
        return float(self.mean[-1])

    @property
    def stderr_terminal(self) -> float:
        return float(self.std[-1] / np.sqrt(self.n_paths))

    def fan_table(self) -> tuple[list[str], np.ndarray]:
        cols = ["t", "mean", "std", "q05", "q50", "q95"]
        return cols, np.column_stack([self.t_index, self.mean, self.std,
                                      self.quantiles[0.05], self.quantiles[0.5], self.quantiles[0.95]])


class SurfacePolicy:
    """Policy read off a PolicySurface (bilinear in t and log y).

    Queries landing on invalid cells or outside the grid take the value of the
    nearest valid node; ``fallbacks`` counts them.
    """

    def __init__(self, surface: PolicySurface):
        self.surface = surface
        self.name = f"surface:{surface.source}"
        lt, ly = surface.t_grid, np.log(surface.y_grid)
        self._interp = RegularGridInterpolator((lt, ly), surface.theta_clipped, bounds_error=False,
                                               fill_value=np.nan)
        ii, jj = np.nonzero(surface.valid)
        if ii.size == 0:
            raise ValueError("surface has no valid cells")
        self._scale = np.array([max(lt[-1] - lt[0], 1e-12), max(ly[-1] - ly[0], 1e-12)])
        self._tree = cKDTree(np.column_stack([lt[ii], ly[jj]]) / self._scale)
        self._vals = surface.theta_clipped[ii, jj]
        self.fallbacks = 0

    def __call__(self, t, y):
        y = np.asarray(y, dtype=float)
        ly = np.log(np.maximum(y, 1e-300))
        pts = np.column_stack([np.full(y.size, float(t)), ly.ravel()])
        out = self._interp(pts)
        bad = ~np.isfinite(out)
        if bad.any():
            self.fallbacks += int(bad.sum())
            _, idx = self._tree.query(pts[bad] / self._scale)
            out[bad] = self._vals[idx]
        return out.reshape(y.shape)


@dataclass
class DPPolicy:
    grid: ValueGrid
    name: str = "dp"

    def __call__(self, t, y):
        t = min(max(int(round(t)), int(self.grid.t_index[0])), int(self.grid.t_index[-2]))
        return self.grid.policy_at(t, np.maximum(y, 1e-300))


def _shocks(n_paths: int, n_steps: int, seed: int) -> np.ndarray:
    Z = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        ss = np.random.SeedSequence(seed, spawn_key=(i,))
        Z[i] = np.random.Generator(np.random.PCG64(ss)).standard_normal(n_steps)
    return Z


def _run(params: ModelParams, policy: Policy, Z: np.ndarray, eps: float, tau: float, record_every: int):
    n_paths, n_steps = Z.shape
    y = np.full(n_paths, eps)
    t = 1.0
    out = [y.copy()]
    thetas = np.empty((n_steps, n_paths))
    for k in range(n_steps):
        th = np.asarray(policy(t, y), dtype=float)
        if np.any(~np.isfinite(th)):
            raise ValueError(f"policy returned non-finite theta at t={t}")
        thetas[k] = np.broadcast_to(th, y.shape)
        y = transition(thetas[k], y, Z[:, k], eps, tau, params)
        t = 1.0 + (k + 1) * tau
        if (k + 1) % record_every == 0:
            out.append(y.copy())
    return np.array(out), thetas


def _stats(paths: np.ndarray, t_index, n_paths, seed, fallbacks, name) -> EnsembleStats:
    q = np.quantile(paths, QUANTILES, axis=1)
    return EnsembleStats(n_paths, seed, t_index, paths.mean(axis=1), paths.std(axis=1, ddof=1) if n_paths > 1
                         else np.zeros(len(t_index)), {p: q[i] for i, p in enumerate(QUANTILES)},
                         fallbacks, paths[-1].copy(), name)


def _steps(params: ModelParams, tau: float) -> tuple[int, int]:
    if not tau > 0:
        raise ValueError("tau must be > 0")
    per_year = 1.0 / tau
    if abs(per_year - round(per_year)) > 1e-9:
        raise ValueError("1/tau must be an integer")
    per_year = int(round(per_year))
    years = int(round(params.T))
    if abs(years - params.T) > 1e-9 or years < 2:
        raise ValueError("simulation needs an integer horizon T >= 2")
    return (years - 1) * per_year, per_year


def simulate_paths(params: ModelParams, policy: Policy, n_paths: int = 10_000, seed: int = 0,
                   tau: float = 1.0, eps: float | None = None) -> EnsembleStats:
    """Simulate y_1 = eps, y_{t+tau} = F_tau(theta(t, y_t), y_t, Z) up to t = T.

    Statistics are reported at the integer years 1..T.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    eps = params.eps_net if eps is None else float(eps)
    n_steps, per_year = _steps(params, tau)
    Z = _shocks(n_paths, n_steps, seed)
    before = getattr(policy, "fallbacks", 0)
    paths, _ = _run(params, policy, Z, eps, tau, per_year)
    fb = getattr(policy, "fallbacks", 0) - before
    return _stats(paths, np.arange(1, int(round(params.T)) + 1), n_paths, seed, fb,
                  getattr(policy, "name", type(policy).__name__))


@dataclass(frozen=True)
class PairwiseDifference:
    first: str
    second: str
    diff_mean_terminal: float      # E(y_T | first) - E(y_T | second)
    stderr: float                  # paired standard error under common random numbers
    paths_differing: int           # paths whose policy values differed at some visited step


@dataclass(frozen=True)
class ComparisonReport:
    stats: list[EnsembleStats]
    pairs: list[PairwiseDifference]
    seed: int
    n_paths: int


def compare_policies(params: ModelParams, policies: Sequence[Policy], n_paths: int = 10_000, seed: int = 0,
                     tau: float = 1.0, eps: float | None = None) -> ComparisonReport:
    """Run every policy on the same shocks and report pairwise E(y_T) differences."""
    if len(policies) < 2:
        raise ValueError("need at least two policies")
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2 for standard errors")
    eps = params.eps_net if eps is None else float(eps)
    n_steps, per_year = _steps(params, tau)
    Z = _shocks(n_paths, n_steps, seed)
    t_index = np.arange(1, int(round(params.T)) + 1)
    stats, terminals, thetas = [], [], []
    for k, pol in enumerate(policies):
        before = getattr(pol, "fallbacks", 0)
        paths, th = _run(params, pol, Z, eps, tau, per_year)
        name = getattr(pol, "name", f"policy{k}")
        stats.append(_stats(paths, t_index, n_paths, seed, getattr(pol, "fallbacks", 0) - before, name))
        terminals.append(paths[-1])
        thetas.append(th)
    pairs = []
    for i, j in combinations(range(len(policies)), 2):
        d = terminals[i] - terminals[j]
        differing = int(np.any(thetas[i] != thetas[j], axis=0).sum())
        pairs.append(PairwiseDifference(stats[i].policy_name, stats[j].policy_name, float(d.mean()),
                                        float(d.std(ddof=1) / np.sqrt(n_paths)), differing))
    return ComparisonReport(stats, pairs, seed, n_paths)
