import numpy as np
import pytest

from pension_hjb import (
    BoundPair,
    DomainError,
    StructuralHypothesisError,
    derive_coefficients,
    psi_envelope,
    theta_bracket,
    value_envelope,
    varsigma,
)
from pension_hjb.bounds import varsigma_ode_rhs

EPS = 0.09


def test_bound_pair(coeffs):
    pair = BoundPair.from_coeffs(coeffs)
    assert pair.lambda_upper == pytest.approx(coeffs.delta, rel=1e-15)
    assert pair.lambda_lower - pair.lambda_upper == pytest.approx((coeffs.d + 1) * coeffs.c**2, rel=1e-12)
    s = np.linspace(0, 40, 401)
    for vs in (pair.varsigma_lower(EPS, s), pair.varsigma_upper(EPS, s)):
        assert vs[0] == 0 and np.all(vs >= 0) and np.all(np.diff(vs) > 0)
    assert np.all(pair.varsigma_lower(EPS, s) <= pair.varsigma_upper(EPS, s))


def test_varsigma_examples(coeffs):
    assert varsigma(coeffs.delta, EPS, 0.0) == 0.0
    assert np.all(varsigma(coeffs.delta, 0.0, np.linspace(0, 40, 11)) == 0.0)
    with pytest.raises(ValueError):
        varsigma(coeffs.delta, -0.1, 1.0)
    with pytest.raises(ValueError):
        varsigma(coeffs.delta, EPS, -1.0)


def test_varsigma_ode_at_maturity(coeffs):
    h = 1e-3
    T = coeffs.T
    deriv = (varsigma(coeffs.delta, EPS, T + h) - varsigma(coeffs.delta, EPS, T - h)) / (2 * h)
    c2 = coeffs.c**2
    A, B, C = 2 * coeffs.alpha / c2, 2 / c2, 1 / coeffs.gamma
    rhs = -(c2 / 2) * ((A - 2 * C * coeffs.psi0) * varsigma(coeffs.delta, EPS, T) - EPS * B)
    assert abs(deriv - rhs) <= 1e-6


@pytest.mark.parametrize("which", ["upper", "lower"])
def test_varsigma_ode_residual_grid(coeffs, which):
    pair = BoundPair.from_coeffs(coeffs)
    lam = pair.lambda_upper if which == "upper" else pair.lambda_lower
    s = np.linspace(0, coeffs.T, 4001)
    vs = varsigma(lam, EPS, s)
    deriv = (vs[2:] - vs[:-2]) / (2 * (s[1] - s[0]))
    assert np.max(np.abs(deriv - varsigma_ode_rhs(coeffs, which, EPS, vs[1:-1]))) <= 1e-6


def test_psi_envelope_examples(coeffs):
    x = np.linspace(-5, 5, 11)
    env = psi_envelope(coeffs, EPS, 0.0, x)
    assert np.all(env.lower == coeffs.psi0) and np.all(env.upper == coeffs.psi0)
    far = psi_envelope(coeffs, EPS, 40.0, 60.0)
    assert far.lower == pytest.approx(coeffs.psi0, rel=1e-20) and far.upper == pytest.approx(coeffs.psi0, rel=1e-20)
    mid = psi_envelope(coeffs, EPS, 40.0, 0.0)
    assert 0 < mid.lower <= mid.upper <= coeffs.psi0


def test_psi_envelope_requires_hypothesis(slovak):
    bad = derive_coefficients(slovak.with_(mu_s=0.01))
    with pytest.raises(StructuralHypothesisError):
        psi_envelope(bad, EPS, 1.0, 0.0)
    with pytest.raises(StructuralHypothesisError):
        theta_bracket(bad, EPS, 10.0, 1.0, 1.0)


def test_value_envelope_examples(coeffs):
    y = np.geomspace(0.1, 10, 7)
    env = value_envelope(coeffs, EPS, 10.0, coeffs.T, y)
    assert np.allclose(env.lower, -y**-9.0, rtol=1e-15) and np.allclose(env.upper, -y**-9.0, rtol=1e-15)
    env = value_envelope(coeffs, 0.0, 10.0, 5.0, y)
    assert np.allclose(env.lower, -y**-9.0, rtol=1e-15) and np.allclose(env.upper, -y**-9.0, rtol=1e-15)
    env = value_envelope(coeffs, EPS, 10.0, 0.0, 1.0)
    assert -1 < env.lower < env.upper < 0


def test_value_envelope_errors(coeffs):
    with pytest.raises(DomainError):
        value_envelope(coeffs, EPS, 10.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        value_envelope(coeffs, EPS, 1.0, 1.0, 1.0)


def test_theta_bracket_examples(coeffs):
    merton = coeffs.b / coeffs.a + coeffs.delta_mu / (10 * coeffs.a)
    br = theta_bracket(coeffs, EPS, 10.0, coeffs.T, np.geomspace(0.01, 100, 9))
    assert np.allclose(br.lower, merton, rtol=0, atol=1e-15) and np.allclose(br.upper, merton, rtol=0, atol=1e-15)
    assert merton == pytest.approx(0.1853, abs=5e-5) and merton <= 1
    T_, Y_ = np.meshgrid(np.linspace(0, 40, 9), np.geomspace(0.01, 100, 9), indexing="ij")
    br = theta_bracket(coeffs, 0.0, 10.0, T_, Y_)
    assert np.all(br.lower == merton) and np.all(br.upper == merton)
    br = theta_bracket(coeffs, EPS, 10.0, 0.0, 1e12)
    assert br.upper - merton < 1e-12


def test_theta_bracket_collapse_is_monotone(coeffs):
    t = np.linspace(0, coeffs.T, 41)
    width_t = np.diff(theta_bracket(coeffs, EPS, 10.0, t, 1.0), axis=0)[0]
    assert np.all(np.diff(width_t) < 0) and width_t[-1] == 0
    y = np.geomspace(0.01, 1e4, 41)
    width_y = np.diff(theta_bracket(coeffs, EPS, 10.0, 5.0, y), axis=0)[0]
    assert np.all(np.diff(width_y) < 0)


def test_theta_bracket_nonnegative_and_ordered(coeffs, rng):
    t = rng.uniform(0, coeffs.T, 5000)
    y = np.exp(rng.uniform(-6, 8, 5000))
    br = theta_bracket(coeffs, EPS, 10.0, t, y)
    assert np.all(br.lower >= 0) and np.all(br.lower <= br.upper)


def test_theta_bracket_domain(coeffs):
    with pytest.raises(DomainError):
        theta_bracket(coeffs, EPS, 10.0, 1.0, -1.0)
    with pytest.raises(DomainError):
        theta_bracket(coeffs, EPS, 10.0, 41.0, 1.0)
