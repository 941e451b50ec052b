"""Batch front-end.

    pension-hjb COMMAND [SCENARIO] [flags]

SCENARIO is a JSON file or a bundled name (slovak, bulgarian); default slovak.
Every run writes its artifacts and a manifest.json into --out.

Exit status: 0 success, 1 usage or configuration error, 2 numerical failure,
3 invariant violation (``verify``).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import reports
from .bounds import psi_envelope, theta_bracket, value_envelope
from .dp import gap_surface, solve_bellman
from .model import (
    ConfigError,
    DomainError,
    ModelParams,
    StructuralHypothesisError,
    derive_coefficients,
    load_scenario,
    risk_aversion_threshold,
)
from .pde import solve_pde
from .policy import (
    SENSITIVITIES,
    FirstOrderPolicy,
    build_policy_surface,
    first_order_psi,
    merton_policy,
    sensitivity,
    sensitivity_precondition,
    series_psi,
)
from .series import NumericError, build_series, phi1_closed_form, psi2_closed_form
from .sim import NORMAL_METHOD, DPPolicy, SurfacePolicy, compare_policies, simulate_paths

COMMANDS = ("coeffs", "series", "bounds", "policy", "dp", "pde", "sim", "compare", "sensitivity", "verify", "replay")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _pair(cast):
    def parse(text: str):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
        try:
            return tuple(cast(p) for p in parts)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _bound(text: str) -> float:
    return float("inf") if text.lower() in ("inf", "+inf") else float(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pension-hjb", description="Optimal stock-to-bond proportion for pension savings.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("scenario", nargs="?", default="slovak",
                   help="scenario JSON or bundled name (for replay: a manifest.json)")
    p.add_argument("--out", type=Path, default=None, help="output directory (default out/COMMAND)")
    p.add_argument("--eps", type=float, default=None, help="net contribution rate (sets kappa to 0)")
    p.add_argument("--d", type=float, default=None, help="relative risk aversion")
    p.add_argument("--clip", type=_pair(_bound), default=None, metavar="LO,HI",
                   help="admissible stock proportion interval, HI may be inf")
    p.add_argument("--order", type=int, default=3, help="series truncation order N")
    p.add_argument("--paths", type=int, default=10_000, help="Monte-Carlo paths")
    p.add_argument("--seed", type=int, default=1, help="Monte-Carlo seed")
    p.add_argument("--tau", type=float, default=1.0, help="simulation step in years")
    p.add_argument("--grid", type=_pair(int), default=(801, 4000), metavar="NX,NS", help="PDE resolution")
    p.add_argument("--domain", type=_pair(float), default=(-6.0, 8.0), metavar="XMIN,XMAX",
                   help="PDE log-wealth interval")
    p.add_argument("--source", choices=("first-order", "series", "pde"), default="first-order",
                   help="psi backend for policy surfaces and simulation")
    p.add_argument("--which", choices=SENSITIVITIES + ("all",), default="all", help="sensitivity to report")
    p.add_argument("--quad", type=int, default=32, help="Gauss-Hermite nodes for the discrete problem")
    p.add_argument("--dp", action="store_true", help="sim/compare: include the discrete Bellman policy")
    p.add_argument("--continuous", action="store_true", help="compare: include the continuous policy")
    return p


_FLAG_DEFAULTS = {"eps": None, "d": None, "clip": None, "order": 3, "paths": 10_000, "seed": 1, "tau": 1.0,
                  "grid": (801, 4000), "domain": (-6.0, 8.0), "source": "first-order", "which": "all",
                  "quad": 32, "dp": False, "continuous": False}


def _flags(ns: argparse.Namespace) -> dict:
    return {k: getattr(ns, k) for k in _FLAG_DEFAULTS}


def _flags_to_argv(flags: dict) -> list[str]:
    argv = []
    for key, default in _FLAG_DEFAULTS.items():
        val = flags.get(key, default)
        if isinstance(val, list):
            val = tuple(val)
        if val == default or val is None:
            continue
        if isinstance(val, bool):
            argv.append(f"--{key}")
        elif isinstance(val, tuple):
            argv += [f"--{key}", ",".join(str(v) for v in val)]
        else:
            argv += [f"--{key}", str(val)]
    return argv


def _effective_params(base: ModelParams, ns) -> ModelParams:
    p = base
    if ns.eps is not None:
        if ns.eps < 0:
            raise UsageError("--eps must be >= 0")
        p = p.with_eps(ns.eps)
    if ns.d is not None:
        p = p.with_(d=float(ns.d))
    if ns.clip is not None:
        p = p.with_(theta_lo=float(ns.clip[0]), theta_hi=float(ns.clip[1]))
    return p


def _check_flags(ns) -> None:
    if ns.order < 0:
        raise UsageError("--order must be >= 0")
    if ns.paths < 1:
        raise UsageError("--paths must be >= 1")
    if ns.tau <= 0:
        raise UsageError("--tau must be > 0")
    if ns.grid[0] < 5 or ns.grid[1] < 2:
        raise UsageError("--grid needs NX >= 5 and NS >= 2")
    if ns.quad < 8:
        raise UsageError("--quad must be >= 8")
    if ns.domain[0] >= ns.domain[1]:
        raise UsageError("--domain needs XMIN < XMAX")


def _report_grid(params: ModelParams):
    return np.linspace(0.0, params.T, 41), np.geomspace(0.05, 20.0, 60)


def _psi_source(params, coeffs, ns, eps):
    if ns.source == "first-order":
        return first_order_psi(coeffs, eps), {}
    if ns.source == "series":
        return series_psi(build_series(coeffs, order=ns.order), eps), {"order": ns.order}
    fd = solve_pde(coeffs, eps, tuple(ns.domain), tuple(ns.grid), richardson=False)
    return fd.as_source(), {"grid": list(ns.grid), "domain": list(ns.domain), "halvings": fd.halvings}


# --- commands -------------------------------------------------------------------

def cmd_coeffs(params, ns, out: Path) -> list[Path]:
    c = derive_coefficients(params)
    payload = {"coefficients": c.to_dict(), "hypothesis": str(c.hypothesis), "merton": c.merton}
    if c.hypothesis.holds:
        payload["risk_aversion_threshold"] = risk_aversion_threshold(c)
        payload["sensitivity_preconditions"] = {
            w: vars(sensitivity_precondition(c, w)) for w in ("d", "mu_s")}
    return [reports.write_json(out / "coeffs.json", payload)]


def cmd_series(params, ns, out):
    c = derive_coefficients(params)
    ser = build_series(c, order=ns.order)
    cols, table = ser.table()
    summary = {"order": ns.order, "s_steps": len(ser.s),
               "ode_residual_max": {n: float(np.max(np.abs(ser.ode_residual(n)))) for n in range(1, ns.order + 1)}}
    if ns.order >= 1:
        rec = build_series(c, order=min(ns.order, 2), closed_forms=False)
        summary["recurrence_vs_closed_form"] = {"phi_1": float(np.max(np.abs(rec.phi[1] - phi1_closed_form(c, rec.s))))}
        if ns.order >= 2:
            summary["recurrence_vs_closed_form"]["phi_2"] = float(np.max(np.abs(rec.phi[2] - psi2_closed_form(c, rec.s))))
    return [reports.write_csv(out / "series.csv", cols, table), reports.write_json(out / "series.json", summary)]


def cmd_bounds(params, ns, out):
    c = derive_coefficients(params)
    eps = c.eps_net
    t, y = _report_grid(params)
    T_, Y_ = np.meshgrid(t, y, indexing="ij")
    env = psi_envelope(c, eps, c.T - T_, np.log(Y_))
    br = theta_bracket(c, eps, c.d, T_, Y_)
    cols = ["t", "y", "psi_lower", "psi_upper", "theta_lower", "theta_upper"]
    data = [T_.ravel(), Y_.ravel(), np.ravel(env.lower), np.ravel(env.upper), np.ravel(br.lower), np.ravel(br.upper)]
    if c.d > 1:
        ve = value_envelope(c, eps, c.d, T_, Y_)
        cols += ["V_lower", "V_upper"]
        data += [np.ravel(ve.lower), np.ravel(ve.upper)]
    return [reports.write_csv(out / "bounds.csv", cols, np.column_stack(data))]


def cmd_policy(params, ns, out):
    c = derive_coefficients(params)
    eps = c.eps_net
    src, meta = _psi_source(params, c, ns, eps)
    t, y = _report_grid(params)
    surf = build_policy_surface(src, c, eps, t, y, (params.theta_lo, params.theta_hi), ns.source)
    info = {"source": ns.source, "clip": list(surf.clip), "eps": eps, "diagnostics": surf.diagnostics, **meta}
    return [reports.write_csv(out / "policy.csv", ["t", "y", "theta_raw", "theta_clipped", "valid"], surf.rows()),
            reports.write_json(out / "policy.json", info)]


def _dp_rows(vg):
    for k, t in enumerate(vg.t_index):
        for i, y in enumerate(vg.y_grid):
            yield t, y, vg.W[k, i], vg.theta_star[k, i]


def cmd_dp(params, ns, out):
    vg = solve_bellman(params, quad_nodes=ns.quad)
    info = {"eps": vg.eps, "quad_nodes": vg.quad_nodes, "theta_bounds": list(vg.theta_bounds),
            "y_grid": [float(vg.y_grid[0]), float(vg.y_grid[-1]), len(vg.y_grid)]}
    return [reports.write_csv(out / "dp.csv", ["t", "y", "W", "theta_star"], _dp_rows(vg)),
            reports.write_json(out / "dp.json", info)]


def cmd_pde(params, ns, out):
    c = derive_coefficients(params)
    nx, nsteps = ns.grid
    rich = nx % 2 == 1 and nsteps % 2 == 0
    fd = solve_pde(c, c.eps_net, tuple(ns.domain), (nx, nsteps), richardson=rich)
    every = max(1, int(round(nsteps / c.T)))
    levels = list(range(0, nsteps + 1, every))
    if levels[-1] != nsteps:
        levels.append(nsteps)

    def rows():
        for lev in levels:
            for j, xv in enumerate(fd.x):
                yield fd.s[lev], xv, fd.psi[lev, j]

    side = {"eps": fd.eps, "grid": [nx, nsteps], "domain": list(ns.domain), "scheme": fd.scheme,
            "halvings": fd.halvings, "meta": fd.meta, "richardson_available": rich}
    if rich:
        side["richardson_max_final"] = fd.error_max
        side["richardson_by_level"] = {f"{fd.s[lev]:g}": fd.error_by_level[lev] for lev in levels
                                       if np.isfinite(fd.error_by_level[lev])}
    return [reports.write_csv(out / "pde.csv", ["s", "x", "psi"], rows()),
            reports.write_json(out / "pde_richardson.json", side)]


def _sim_policy(params, ns):
    c = derive_coefficients(params)
    eps = c.eps_net
    if ns.dp:
        return DPPolicy(solve_bellman(params, quad_nodes=ns.quad))
    if ns.source == "first-order":
        return FirstOrderPolicy(c, eps, params.theta_lo, params.theta_hi)
    src, _ = _psi_source(params, c, ns, eps)
    t = np.linspace(0.0, params.T, 81)
    y = np.geomspace(0.01, 100.0, 200)
    return SurfacePolicy(build_policy_surface(src, c, eps, t, y, (params.theta_lo, params.theta_hi), ns.source))


def _fan(path, st):
    cols, table = st.fan_table()
    return reports.write_csv(path, cols, table)


def cmd_sim(params, ns, out):
    pol = _sim_policy(params, ns)
    st = simulate_paths(params, pol, ns.paths, ns.seed, ns.tau)
    info = {"policy": st.policy_name, "n_paths": st.n_paths, "seed": st.seed, "tau": ns.tau,
            "eps": params.eps_net, "mean_terminal": st.mean_terminal, "stderr_terminal": st.stderr_terminal,
            "std_terminal": float(st.std[-1]), "fallbacks": st.fallbacks, "normal_method": NORMAL_METHOD}
    return [_fan(out / "fan.csv", st), reports.write_json(out / "sim.json", info)]


def cmd_compare(params, ns, out):
    c = derive_coefficients(params)
    eps = c.eps_net
    if ns.dp and ns.continuous:
        vg = solve_bellman(params, quad_nodes=ns.quad)
        gs = gap_surface(vg, FirstOrderPolicy(c, eps, params.theta_lo, params.theta_hi))
        info = {"max_gap": gs.max_gap, "argmax_t": gs.argmax[0], "argmax_y": gs.argmax[1],
                "y_range": [float(gs.y_grid[0]), float(gs.y_grid[-1])], "eps": eps}
        return [reports.write_csv(out / "gap.csv", ["t", "y", "theta_dp", "theta_continuous", "gap"], gs.rows()),
                reports.write_json(out / "gap.json", info)]
    policies = [FirstOrderPolicy(c, eps, params.theta_lo, params.theta_hi),
                merton_policy(c, params.theta_lo, params.theta_hi),
                FirstOrderPolicy(c, eps, params.theta_lo, float("inf"), name="first-order-unclipped")]
    if ns.dp:
        policies.append(DPPolicy(solve_bellman(params, quad_nodes=ns.quad)))
    rep = compare_policies(params, policies, ns.paths, ns.seed, ns.tau)
    paths = [_fan(out / f"fan_{st.policy_name}.csv", st) for st in rep.stats]
    info = {"n_paths": rep.n_paths, "seed": rep.seed, "eps": eps,
            "policies": {st.policy_name: {"mean_terminal": st.mean_terminal, "stderr_terminal": st.stderr_terminal}
                         for st in rep.stats},
            "pairs": [vars(pr) for pr in rep.pairs]}
    return paths + [reports.write_json(out / "compare.json", info)]


def cmd_sensitivity(params, ns, out):
    c = derive_coefficients(params)
    eps = c.eps_net
    which = SENSITIVITIES if ns.which == "all" else (ns.which,)
    t = np.linspace(0.0, 0.95 * params.T, 20)
    y = np.geomspace(0.05, 20.0, 20)
    T_, Y_ = np.meshgrid(t, y, indexing="ij")
    rows, summary = [], {}
    for w in which:
        sv = sensitivity(c, eps, c.d, T_, Y_, w)
        val = np.asarray(sv.value)
        rows += [(tt, yy, w, vv) for tt, yy, vv in zip(T_.ravel(), Y_.ravel(), val.ravel())]
        pre = sensitivity_precondition(c, w)
        summary[w] = {"min": float(val.min()), "max": float(val.max()), "precondition": vars(pre)}
    return [reports.write_csv(out / "sensitivity.csv", ["t", "y", "which", "value"], rows),
            reports.write_json(out / "sensitivity.json", {"eps": eps, "d": c.d, "sensitivities": summary})]


def cmd_verify(params, ns, out):
    from .verify import run_all
    results = run_all(echo=print)
    path = reports.write_json(out / "verify.json", {"results": [
        {"number": r.number, "name": r.name, "passed": r.passed, "detail": r.detail, "seconds": r.seconds}
        for r in results]})
    failed = [r.number for r in results if not r.passed]
    if failed:
        raise _InvariantViolation(f"criteria failed: {failed}", [path])
    return [path]


class _InvariantViolation(Exception):
    def __init__(self, message, artifacts):
        super().__init__(message)
        self.artifacts = artifacts


HANDLERS = {"coeffs": cmd_coeffs, "series": cmd_series, "bounds": cmd_bounds, "policy": cmd_policy,
            "dp": cmd_dp, "pde": cmd_pde, "sim": cmd_sim, "compare": cmd_compare,
            "sensitivity": cmd_sensitivity, "verify": cmd_verify}


def _replay(manifest_path: Path, out: Path | None) -> int:
    try:
        man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        command, scenario, flags = man["command"], man["scenario_params"], man["flags"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read manifest {manifest_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = out or Path(manifest_path).parent / "replay"
    out.mkdir(parents=True, exist_ok=True)
    scen = reports.write_json(out / "scenario.json", scenario)
    return main([command, str(scen), "--out", str(out)] + _flags_to_argv(flags))


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:      # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if ns.command == "replay":
        return _replay(Path(ns.scenario), ns.out)

    out = ns.out or Path("out") / ns.command
    t0 = time.perf_counter()
    status, artifacts, base, params = EXIT_OK, [], None, None
    try:
        _check_flags(ns)
        base = load_scenario(ns.scenario)
        params = _effective_params(base, ns)
        artifacts = HANDLERS[ns.command](params, ns, out)
    except (UsageError, ConfigError, StructuralHypothesisError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    except _InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        artifacts, status = exc.artifacts, EXIT_INVARIANT
    seeds = [ns.seed] if ns.command in ("sim", "compare") else []
    man = reports.Manifest(ns.command, argv, base.to_dict() if base else {}, params.to_dict() if params else {},
                           _flags(ns), seeds, [str(Path(a).name) for a in artifacts], time.perf_counter() - t0,
                           status)
    path = man.write(out)
    if status == EXIT_OK:
        print(f"wrote {', '.join(str(a) for a in artifacts)} (manifest {path})")
    return status


if __name__ == "__main__":
    sys.exit(main())
