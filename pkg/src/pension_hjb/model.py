"""Market/saver inputs, derived coefficients and the CRRA utility family.

All rates are plain yearly fractions (0.1028, not 10.28). Scenario files may
carry a ``"%"`` suffix on any numeric value, which divides it by 100.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class StructuralHypothesisError(ValueError):
    """Raised when an operation needs b > 0, a > b and mu_s > mu_b."""


class DomainError(ValueError):
    """Argument outside the mathematical domain (e.g. y <= 0)."""


class ConfigError(ValueError):
    """Bad scenario file. ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ModelParams:
    mu_s: float
    mu_b: float
    sigma_s: float
    sigma_b: float
    rho: float
    beta: float
    eps_gross: float
    kappa: float
    d: float
    T: float
    theta_lo: float = 0.0
    theta_hi: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                if not (f.name == "theta_hi" and v == math.inf):
                    raise ConfigError(f.name, f"expected a finite number, got {v!r}")
        checks = [
            ("sigma_s", self.sigma_s > 0, "must be > 0"),
            ("sigma_b", self.sigma_b > 0, "must be > 0"),
            ("rho", -1.0 <= self.rho <= 1.0, "must lie in [-1, 1]"),
            ("T", self.T > 0, "must be > 0"),
            ("d", self.d > 0, "must be > 0"),
            ("theta_lo", self.theta_lo >= 0, "must be >= 0"),
            ("theta_hi", self.theta_hi > self.theta_lo, "must exceed theta_lo"),
            ("eps_gross", self.eps_gross >= 0, "must be >= 0"),
            ("kappa", 0.0 <= self.kappa < 1.0, "must lie in [0, 1)"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg} (got {getattr(self, key)!r})")

    @property
    def eps_net(self) -> float:
        """Net yearly contribution rate (1 - kappa) * eps_gross."""
        return (1.0 - self.kappa) * self.eps_gross

    def with_eps(self, eps: float) -> "ModelParams":
        """Copy whose net contribution rate equals ``eps`` (gross = eps, no fee)."""
        return replace(self, eps_gross=float(eps), kappa=0.0)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        values = {}
        for f in fields(cls):
            if f.name not in data:
                if f.default is not MISSING:
                    continue
                raise ConfigError(f.name, "missing required key")
            values[f.name] = _parse_number(f.name, data[f.name])
        return cls(**values)


def _parse_number(key: str, raw: Any) -> float:
    if isinstance(raw, bool):
        raise ConfigError(key, f"expected a number, got {raw!r}")
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, str):
        text = raw.strip()
        scale = 1.0
        if text.endswith("%"):
            text, scale = text[:-1].strip(), 0.01
        if text.lower() in ("inf", "infinity", "+inf"):
            return math.inf
        try:
            return float(text) * scale
        except ValueError:
            pass
    raise ConfigError(key, f"expected a number, got {raw!r}")


def load_scenario(source: str | Path) -> ModelParams:
    """Load a scenario from a JSON file or a bundled name (``slovak``, ``bulgarian``)."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        name = path.name if path.suffix == ".json" else f"{path.name}.json"
        try:
            text = resources.files("pension_hjb.scenarios").joinpath(name).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError("scenario", f"no such file or bundled scenario: {source}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("scenario", f"not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario", "top level must be an object")
    return ModelParams.from_mapping(data)


@dataclass(frozen=True)
class HypothesisVerdict:
    holds: bool
    failed: tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(H) holds" if self.holds else "(H) fails: " + ", ".join(self.failed)


@dataclass(frozen=True)
class DerivedCoefficients:
    """Constant-coefficient quantities of the transformed HJB problem.

    ``delta`` is alpha - d c^2 for the risk aversion ``d`` carried here; the
    policy and bound formulas that vary d recompute it from ``alpha`` and ``c``.
    """

    a: float
    b: float
    delta_mu: float
    alpha: float
    c: float
    gamma: float
    delta: float
    eps_net: float
    d: float
    T: float
    hypothesis: HypothesisVerdict
    params: ModelParams = field(repr=False, compare=False)

    @property
    def psi0(self) -> float:
        """Constant zeroth-order solution gamma * d."""
        return self.gamma * self.d

    @property
    def merton(self) -> float:
        """Optimal stock proportion without contributions: b/a + dmu/(a d)."""
        return self.b / self.a + self.delta_mu / (self.a * self.d)

    def require_hypothesis(self) -> None:
        if not self.hypothesis.holds:
            raise StructuralHypothesisError(str(self.hypothesis))

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in
               ("a", "b", "delta_mu", "alpha", "c", "gamma", "delta", "eps_net", "d", "T")}
        out["hypothesis_holds"] = self.hypothesis.holds
        out["hypothesis_failed"] = list(self.hypothesis.failed)
        return out


def derive_coefficients(params: ModelParams) -> DerivedCoefficients:
    ss, sb, rho = params.sigma_s, params.sigma_b, params.rho
    a = ss**2 + sb**2 - 2.0 * rho * ss * sb
    b = sb * (sb - rho * ss)
    delta_mu = params.mu_s - params.mu_b
    alpha = params.mu_b - params.beta + (b / a) * delta_mu
    c = sb * ss * math.sqrt((1.0 - rho**2) / a)
    gamma = c * math.sqrt(a) / delta_mu if delta_mu != 0 else math.nan

    failed = []
    if not b > 0:
        failed.append("b > 0")
    if not a > b:
        failed.append("a > b")
    if not delta_mu > 0:
        failed.append("mu_s - mu_b > 0")
    return DerivedCoefficients(
        a=a, b=b, delta_mu=delta_mu, alpha=alpha, c=c, gamma=gamma,
        delta=alpha - params.d * c**2, eps_net=params.eps_net, d=params.d, T=params.T,
        hypothesis=HypothesisVerdict(not failed, tuple(failed)), params=params,
    )


def risk_aversion_threshold(coeffs: DerivedCoefficients) -> float:
    """Smallest d for which the maturity policy b/a + dmu/(a d) stays <= 1."""
    coeffs.require_hypothesis()
    return coeffs.delta_mu / (coeffs.a - coeffs.b)


def fund_moments(theta, params: ModelParams):
    """Mean and variance of the yearly fund return for stock proportion ``theta``."""
    theta = np.asarray(theta, dtype=float)
    mean = theta * params.mu_s + (1.0 - theta) * params.mu_b
    var = (theta**2 * params.sigma_s**2 + (1.0 - theta) ** 2 * params.sigma_b**2
           + 2.0 * theta * (1.0 - theta) * params.sigma_s * params.sigma_b * params.rho)
    return mean, np.maximum(var, 0.0)


@dataclass(frozen=True)
class UtilitySpec:
    d: float

    def __post_init__(self):
        if not self.d > 0:
            raise DomainError(f"risk aversion must be > 0, got {self.d}")

    @property
    def form(self) -> str:
        if self.d > 1:
            return "power-negative"
        if self.d == 1:
            return "log"
        return "power-positive"

    def derivatives(self, y):
        """U'(y) and U''(y)."""
        y = _positive(y)
        d = self.d
        if self.form == "log":
            return 1.0 / y, -1.0 / y**2
        k = (d - 1.0) if d > 1 else (1.0 - d)
        return k * y ** (-d), -d * k * y ** (-d - 1.0)

    def inverse(self, u):
        """Wealth whose utility is ``u``."""
        u = np.asarray(u, dtype=float)
        if self.form == "log":
            return np.exp(u)
        if self.form == "power-negative":
            return (-u) ** (1.0 / (1.0 - self.d))
        return u ** (1.0 / (1.0 - self.d))


def _positive(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("utility is defined for y > 0 only")
    return y


def utility(u: UtilitySpec, y):
    y = _positive(y)
    if u.form == "log":
        out = np.log(y)
    elif u.form == "power-negative":
        out = -(y ** (1.0 - u.d))
    else:
        out = y ** (1.0 - u.d)
    return out if out.ndim else float(out)


def initial_psi(u: UtilitySpec, coeffs: DerivedCoefficients, x):
    """psi(0, x) = -gamma U''(e^x) e^x / U'(e^x).

    Every supported utility is CRRA, where -y U''/U' = d identically, so the
    value is gamma*d at every x (returned exactly, without rounding from U', U'').
    """
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, coeffs.gamma * u.d)
    return out if out.ndim else float(out)
