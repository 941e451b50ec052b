import numpy as np
import pytest

from pension_hjb import (
    FirstOrderPolicy,
    build_policy_surface,
    build_series,
    compare_policies,
    simulate_paths,
    solve_bellman,
)
from pension_hjb.dp import default_y_grid
from pension_hjb.policy import ConstantPolicy, first_order_psi, merton_policy, series_psi
from pension_hjb.sim import DPPolicy, SurfacePolicy, _run, _shocks

EPS = 0.09


@pytest.fixture(scope="module")
def policy(coeffs):
    return FirstOrderPolicy(coeffs, EPS)


def test_seed_determinism(slovak, policy):
    a = simulate_paths(slovak, policy, 300, seed=4)
    b = simulate_paths(slovak, policy, 300, seed=4)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    assert np.array_equal(a.terminal, b.terminal)
    assert all(np.array_equal(a.quantiles[q], b.quantiles[q]) for q in a.quantiles)
    c = simulate_paths(slovak, policy, 300, seed=5)
    assert not np.array_equal(a.terminal, c.terminal)


def test_more_paths_do_not_reshuffle(slovak, policy):
    a = simulate_paths(slovak, policy, 50, seed=3)
    b = simulate_paths(slovak, policy, 120, seed=3)
    assert np.array_equal(a.terminal, b.terminal[:50])


def test_first_deposit_and_invariants(slovak, policy):
    st = simulate_paths(slovak, policy, 400, seed=1)
    assert st.mean[0] == EPS and st.std[0] == 0.0
    assert np.all(st.mean > 0) and np.all(st.std >= 0)
    assert list(st.t_index) == list(range(1, 41))
    assert np.all(st.terminal >= EPS)


def test_contribution_floor_on_every_step(slovak, coeffs):
    Z = _shocks(300, 39, 2) * 4.0        # exaggerated shocks stress the floor
    paths, _ = _run(slovak, FirstOrderPolicy(coeffs, EPS), Z, EPS, 1.0, 1)
    assert np.all(paths[1:] >= EPS)


def test_drift_neutral_accumulation(slovak):
    quiet = slovak.with_(mu_b=slovak.beta, sigma_b=1e-12)
    st = simulate_paths(quiet, ConstantPolicy(0.0), 100, seed=0)
    # sigma must be positive, so exactness holds up to rounding in exp()
    assert np.allclose(st.mean, st.t_index * EPS, rtol=1e-10, atol=0)
    assert np.all(st.std <= 1e-10)


def test_sub_annual_steps(slovak, policy):
    st = simulate_paths(slovak, policy, 200, seed=1, tau=0.5)
    assert st.t_index.size == 40 and st.mean[0] == EPS
    with pytest.raises(ValueError):
        simulate_paths(slovak, policy, 10, tau=0.3)
    with pytest.raises(ValueError):
        simulate_paths(slovak, policy, 0)


def test_identical_policies_differ_by_nothing(slovak, policy):
    rep = compare_policies(slovak, [policy, FirstOrderPolicy(policy.coeffs, EPS, name="copy")], 300, seed=2)
    pair = rep.pairs[0]
    assert pair.diff_mean_terminal == 0.0 and pair.stderr == 0.0 and pair.paths_differing == 0


def test_difference_interval_covers_rerun(slovak, coeffs, policy):
    pols = [policy, merton_policy(coeffs)]
    a = compare_policies(slovak, pols, 2000, seed=11).pairs[0]
    b = compare_policies(slovak, pols, 2000, seed=12).pairs[0]
    assert abs(a.diff_mean_terminal - b.diff_mean_terminal) <= 3 * np.hypot(a.stderr, b.stderr)


def test_clipping_only_matters_on_paths_that_reach_it(slovak, coeffs):
    # the upper clip binds at t = 1 on every path (y_1 = eps), so audit a lower clip set at the
    # median of the per-path smallest proportion: about half the paths reach it
    Z = _shocks(500, 39, 9)
    base = FirstOrderPolicy(coeffs, EPS)
    pb, tb = _run(slovak, base, Z, EPS, 1.0, 1)
    lo = float(np.median(tb.min(axis=0)))
    floored = FirstOrderPolicy(coeffs, EPS, lo, 1.0, name="floored")
    pf, tf = _run(slovak, floored, Z, EPS, 1.0, 1)
    touched = np.any(tb < lo, axis=0)
    assert 0 < touched.sum() < touched.size
    assert np.array_equal(pf[:, ~touched], pb[:, ~touched])
    assert np.all(np.any(tf != tb, axis=0) == touched)
    assert not np.any(pf[-1, touched] == pb[-1, touched])
    rep = compare_policies(slovak, [base, floored], 500, seed=9)
    assert rep.pairs[0].paths_differing == int(touched.sum())


def test_surface_policy_fallback(slovak, coeffs):
    ser = build_series(coeffs, order=1)
    surf = build_policy_surface(series_psi(ser, EPS), coeffs, EPS, np.linspace(0, 40, 41),
                                np.geomspace(0.01, 30, 80), source="series")
    assert surf.diagnostics["invalid_cells"] > 0
    pol = SurfacePolicy(surf)
    st = simulate_paths(slovak, pol, 200, seed=1)
    assert st.fallbacks > 0 and st.fallbacks == pol.fallbacks
    assert np.all(np.isfinite(st.mean))


def test_surface_policy_matches_closed_form_on_nodes(coeffs):
    t = np.linspace(0, 40, 41)
    y = np.geomspace(0.05, 20, 40)
    pol = SurfacePolicy(build_policy_surface(first_order_psi(coeffs, EPS), coeffs, EPS, t, y))
    got = pol(5.0, y)
    assert np.allclose(got, FirstOrderPolicy(coeffs, EPS)(5.0, y), rtol=0, atol=1e-12)
    assert pol.fallbacks == 0


def test_dp_policy_runs(slovak):
    vg = solve_bellman(slovak, y_grid=default_y_grid(80))
    st = simulate_paths(slovak, DPPolicy(vg), 200, seed=1)
    assert st.policy_name == "dp" and np.all(np.isfinite(st.mean))


def test_compare_needs_two_policies(slovak, policy):
    with pytest.raises(ValueError):
        compare_policies(slovak, [policy], 10)
