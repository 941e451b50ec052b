import dataclasses

import numpy as np
import pytest

from pension_hjb import build_series, eval_psi, psi2_closed_form, psi_envelope, stable_expm_ratio
from pension_hjb.series import mode_rate, omega_from_phi, phi1_closed_form, xi2


def test_expm_ratio_examples():
    assert stable_expm_ratio(0.0, 7.0) == 7.0
    assert stable_expm_ratio(1.0, 1.0) == pytest.approx(1 - np.exp(-1), rel=1e-15)
    assert stable_expm_ratio(-0.5, 2.0) == pytest.approx((1 - np.e) / -0.5, rel=1e-15)


def test_expm_ratio_continuous_and_nonnegative():
    lam = np.array([-1e-300, -1e-12, 0.0, 1e-12, 1e-300])
    assert np.allclose(stable_expm_ratio(lam, 3.0), 3.0, rtol=1e-11)
    lam = np.linspace(-2, 2, 41)[:, None]
    s = np.linspace(0, 40, 41)[None, :]
    assert np.all(stable_expm_ratio(lam, s) >= 0)


def test_phi1_examples(coeffs):
    assert phi1_closed_form(coeffs, 0.0) == 0.0
    s = np.linspace(0, 40, 9)
    assert np.all(phi1_closed_form(coeffs, s) <= 0)
    flat = dataclasses.replace(coeffs, delta=0.0)
    assert np.allclose(phi1_closed_form(flat, s), -coeffs.psi0 * s, rtol=1e-15)
    assert phi1_closed_form(coeffs, 40.0) == -coeffs.psi0 * stable_expm_ratio(coeffs.delta, 40.0)


def test_mode2_exponent_forms_agree(coeffs):
    displayed = coeffs.c**2 * (1 + 1 / coeffs.psi0**2 - 2 * coeffs.delta / coeffs.c**2)
    assert mode_rate(coeffs, 2) == pytest.approx(displayed, rel=1e-12)


def test_psi2_examples(coeffs):
    assert psi2_closed_form(coeffs, 0.0) == 0.0
    assert xi2(coeffs, 0.0) == 0.0
    assert np.isfinite(psi2_closed_form(coeffs, 40.0))


@pytest.mark.parametrize("s", [0.5, 5.0, 17.3, 40.0])
def test_psi2_analytic_matches_quadrature(coeffs, s):
    a = psi2_closed_form(coeffs, s)
    q = psi2_closed_form(coeffs, s, quad_tol=1e-12, method="quad")
    assert a == pytest.approx(q, rel=1e-10)


def test_order_zero(coeffs):
    ser = build_series(coeffs, order=0)
    assert ser.phi.shape == (1, 2001)
    assert np.all(ser.phi[0] == coeffs.psi0)
    assert np.all(ser.omega[0] == 1 / coeffs.psi0)


def test_order_one_matches_closed_form(coeffs):
    ser = build_series(coeffs, order=1)
    assert np.max(np.abs(ser.phi[1] - phi1_closed_form(coeffs, ser.s))) <= 1e-12


def test_initial_values(coeffs):
    ser = build_series(coeffs, order=4)
    assert np.all(ser.phi[1:, 0] == 0.0)


@pytest.mark.parametrize("closed", [True, False])
def test_ode_residuals(coeffs, closed):
    ser = build_series(coeffs, order=3, closed_forms=closed)
    for n in (1, 2, 3):
        assert np.max(np.abs(ser.ode_residual(n))) <= 1e-6, n


def test_recurrence_matches_closed_forms(coeffs):
    rec = build_series(coeffs, order=2, closed_forms=False)
    assert np.max(np.abs(rec.phi[1] - phi1_closed_form(coeffs, rec.s))) <= 1e-8
    assert np.max(np.abs(rec.phi[2] - psi2_closed_form(coeffs, rec.s))) <= 1e-8


def test_reciprocal_identity(coeffs):
    ser = build_series(coeffs, order=4)
    idx = np.linspace(0, ser.s.size - 1, 9).astype(int)
    phi, omega = ser.phi[:, idx], ser.omega[:, idx]
    for n in range(1, ser.order + 1):
        prod = sum(omega[k] * phi[n - k] for k in range(n + 1))
        scale = sum(np.abs(omega[k] * phi[n - k]) for k in range(n + 1)) + 1.0
        assert np.max(np.abs(prod) / scale) <= 1e-10, n
    assert np.allclose(omega_from_phi(phi)[0], 1 / coeffs.psi0)


def test_eval_psi_examples(coeffs):
    ser = build_series(coeffs, order=3)
    S, X = np.meshgrid(np.linspace(0, 40, 9), np.linspace(-3, 6, 9), indexing="ij")
    assert np.all(eval_psi(ser, S, X, 0.0).value == coeffs.psi0)
    assert np.all(eval_psi(ser, 0.0, X[0], 0.3).value == coeffs.psi0)
    one = build_series(coeffs, order=1)
    eps = 0.09
    want = coeffs.psi0 * (1 + eps * np.expm1(-40 * coeffs.delta) / coeffs.delta)
    r = eval_psi(one, 40.0, 0.0, eps)
    assert r.value == pytest.approx(want, rel=1e-12)
    assert r.last_term == pytest.approx(abs(want - coeffs.psi0), rel=1e-12)


def test_eval_psi_flags_nonpositive_sums(coeffs):
    one = build_series(coeffs, order=1)
    r = eval_psi(one, 40.0, -3.0, 0.09)
    assert r.value <= 0 and not r.valid
    with pytest.raises(ValueError):
        eval_psi(one, 41.0, 0.0, 0.09)
    with pytest.raises(ValueError):
        eval_psi(one, 1.0, 0.0, -0.1)


def test_envelope_containment(coeffs):
    # region where the expansion variable eps E(delta, s) e^{-x} is at most eps,
    # i.e. wealth y >= E(delta, s); the slack 5 eps^3 gamma d is fixed per eps
    S, X = np.meshgrid(np.linspace(0, 40, 161), np.linspace(-6, 8, 561), indexing="ij")
    region = stable_expm_ratio(coeffs.delta, S) * np.exp(-X) <= 1.0
    for order in (2, 3):
        ser = build_series(coeffs, order=order)
        for eps in (0.01, 0.045, 0.09):
            r = eval_psi(ser, S, X, eps)
            env = psi_envelope(coeffs, eps, S, X)
            slack = 5 * eps**3 * coeffs.psi0
            assert np.all(r.value[region] >= env.lower[region] - slack)
            assert np.all(r.value[region] <= env.upper[region] + slack)


def test_table_layout(coeffs):
    cols, table = build_series(coeffs, order=2).table()
    assert cols == ["s", "phi_0", "phi_1", "phi_2", "omega_0", "omega_1", "omega_2"]
    assert table.shape == (2001, 7)


def test_bad_arguments(coeffs):
    with pytest.raises(ValueError):
        build_series(coeffs, order=-1)
    with pytest.raises(ValueError):
        build_series(coeffs, s_steps=1)
