import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from hsconv.errors import DivergentAtOne, DomainError
from hsconv.potentials import (
    ConvolutionSpec,
    EmbeddingIndices,
    ReductionSpec,
    Theorem,
    elliptic_theta_2d,
    homogeneous_sigma,
    riesz_composition_constant,
    riesz_fourier_constant,
    tau_exponent,
    theta_bound_coefficient,
    theta_closed_form,
    theta_upper_bound,
    validate_spec,
)

mp.mp.dps = 30


def theta_mp(n, alpha, lam, d, tau=1.0):
    """Two-factor integral by slicing the constraint hyperplane x.w_hat = h."""
    n, alpha, lam, d = mp.mpf(n), mp.mpf(alpha), mp.mpf(lam), mp.mpf(d)
    h = (d * d - tau) / (2 * d)
    area = 2 * mp.pi ** ((n - 1) / 2) / mp.gamma((n - 1) / 2)
    f = lambda r: r ** (n - 2) * (h * h + r * r) ** (-alpha / 2) * ((d - h) ** 2 + r * r) ** (-lam / 2)
    pts = [0, abs(h) / 4 + 1e-30, abs(h) + abs(d - h) + 1, mp.inf]
    val = mp.quad(f, sorted(set(pts)))
    return float(d ** (alpha + lam + 2 - n) / (2 * d) * area * val)


@pytest.mark.parametrize("n,alpha,lam,d", [
    (3, 1.2, 1.4, 2.0), (3, 1.2, 1.4, 0.3), (2, 0.5, 0.9, 1.7), (4, 2.5, 1.0, 0.05),
    (5, 3.1, 2.2, 12.0), (3, 0.4, 1.9, 1.01),
])
def test_theta_closed_form_vs_mpmath_slice(n, alpha, lam, d):
    assert theta_closed_form(n, alpha, lam, d) == pytest.approx(theta_mp(n, alpha, lam, d), rel=1e-9)


def test_theta_vectorised_matches_scalar():
    ds = np.array([0.1, 0.5, 2.0, 30.0])
    vec = theta_closed_form(3, 1.2, 1.4, ds)
    assert np.allclose(vec, [theta_closed_form(3, 1.2, 1.4, d) for d in ds], rtol=1e-15)


def test_theta_divergent_at_one():
    with pytest.raises(DivergentAtOne):
        theta_closed_form(3, 2.5, 1.0, 1.0)
    # alpha < n-1 is finite there
    assert math.isfinite(theta_closed_form(3, 1.2, 1.4, 1.0))


def test_theta_domain():
    with pytest.raises(DomainError):
        theta_closed_form(3, 0.5, 0.5, 1.0)
    with pytest.raises(DomainError):
        theta_closed_form(3, 1.2, 1.4, -1.0)
    with pytest.raises(DomainError):
        theta_bound_coefficient(3, 2.0, 1.0)


ADMISSIBLE = st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.just(n), st.floats(0.05, n - 1 - 0.05), st.floats(0.05, n - 0.05), st.floats(1e-3, 1e3)))


@settings(max_examples=300, deadline=None)
@given(ADMISSIBLE)
def test_bound_dominates_closed_form(t):
    n, alpha, lam, d = t
    assume(alpha + lam > n - 1 + 0.02 and alpha + lam < 2 * (n - 1) - 0.02)
    assert theta_closed_form(n, alpha, lam, d) <= theta_upper_bound(n, alpha, lam, d) * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(ADMISSIBLE)
def test_bound_is_attained_at_unit_w(t):
    n, alpha, lam, _ = t
    assume(alpha + lam > n - 1 + 0.02)
    assert theta_closed_form(n, alpha, lam, 1.0) == pytest.approx(
        theta_upper_bound(n, alpha, lam, 1.0), rel=1e-10)


def test_large_w_limit_is_prefactor():
    n, alpha, lam = 3, 1.2, 1.4
    pref = 2 ** (alpha + lam - n) * math.pi ** ((n - 1) / 2) * math.gamma(
        (alpha + lam - n + 1) / 2) / math.gamma((alpha + lam) / 2)
    assert theta_closed_form(n, alpha, lam, 1e5) == pytest.approx(pref, rel=1e-8)


@given(st.floats(1e-3, 1e3).filter(lambda d: abs(d - 1) > 1e-3))
def test_elliptic_form_equals_hypergeometric_form(d):
    assert elliptic_theta_2d(d) == pytest.approx(theta_closed_form(2, 1.0, 1.0, d), rel=1e-11)


def test_elliptic_form_mpmath():
    d = 0.6
    beta = 4 * d * d / (1 + d * d) ** 2
    ref = 2 * d * d / (1 + d * d) * float(mp.ellipk(beta))
    assert elliptic_theta_2d(d) == pytest.approx(ref, rel=1e-13)
    with pytest.raises(DivergentAtOne):
        elliptic_theta_2d(1.0)


@pytest.mark.parametrize("n,lam", [(2, 0.7), (3, 1.2), (3, 2.5), (5, 1.0)])
def test_riesz_fourier_constant_by_gaussian_parseval(n, lam):
    # the Gaussian e^{-pi|x|^2} is self-dual, so int |x|^-lam G = c int |xi|^(lam-n) G
    radial = lambda s: mp.quad(lambda r: r ** (n - 1 - s) * mp.e ** (-mp.pi * r * r), [0, 1, mp.inf])
    assert riesz_fourier_constant(n, lam) == pytest.approx(float(radial(lam) / radial(n - lam)),
                                                           rel=1e-12)


@pytest.mark.parametrize("g1,g2", [(1.5, 1.9), (2.2, 1.3), (2.5, 2.5)])
def test_riesz_composition_constant_direct_3d(g1, g2):
    # |w| = 1; after the angular integral, the radial integrand is explicit
    e = 1 - g2 / 2

    def inner(r):
        return ((1 + r) ** (2 * e) - abs(1 - r) ** (2 * e)) / (2 * r * e)

    val = 2 * mp.pi * mp.quad(lambda r: r ** (2 - g1) * inner(r), [0, 1, 2, mp.inf])
    assert riesz_composition_constant(3, g1, g2) == pytest.approx(float(val), rel=1e-9)


def test_riesz_domains():
    with pytest.raises(DomainError):
        riesz_fourier_constant(3, 3.0)
    with pytest.raises(DomainError):
        riesz_composition_constant(3, 1.0, 1.5)


def test_spec_validation():
    with pytest.raises(DomainError):
        ConvolutionSpec(2, 3, (1.0,))
    with pytest.raises(DomainError):
        ConvolutionSpec(2, 3, (1.0, 3.0))
    s = ConvolutionSpec.uniform(3, 3)
    assert s.is_uniform and s.alphas == (2.0, 2.0, 2.0)
    assert s.rho == pytest.approx(2.0)
    assert ConvolutionSpec(2, 3, (1.2, 1.4)).sigma_w2 == pytest.approx(1.6)


def test_validate_spec_theorems():
    assert validate_spec(ConvolutionSpec(2, 3, (1.2, 1.4)), "T2").ok
    bad = validate_spec(ConvolutionSpec(2, 3, (0.5, 0.5)), Theorem.T2)
    assert "alpha+lambda>n-1" in bad.failures
    assert validate_spec(ConvolutionSpec.uniform(3, 3), "T3").ok
    assert validate_spec(ConvolutionSpec.uniform(3, 3), "T4").ok
    assert "3<=m<=n+1" in validate_spec(ConvolutionSpec.uniform(3, 5), "T4").failures
    r = validate_spec(ConvolutionSpec(3, 3, (1.5, 1.6, 1.7)), "T1", ell=2)
    assert r.ok and r.derived["sigma_ell"] == pytest.approx(2 + 3.3 - 3)


def test_reduction_spec():
    red = ReductionSpec(ConvolutionSpec(3, 3, (1.5, 1.6, 1.7)), 2)
    assert red.beta_lm == pytest.approx(3.3)
    # exponent identity n - alpha_1 - sigma_ell = -rho
    assert 3 - 1.5 - red.sigma_ell == pytest.approx(-red.spec.rho, abs=1e-12)
    with pytest.raises(DomainError):
        ReductionSpec(ConvolutionSpec(3, 3, (1.5, 1.6, 1.7)), 3)


def test_embedding_indices():
    e = EmbeddingIndices(2.0)
    assert e.q == 2.0 and e.p_star == 2.0
    assert EmbeddingIndices(1.5).q == pytest.approx(3.0)
    with pytest.raises(DomainError):
        EmbeddingIndices(3.0)  # rq = 1.5 < 2
    with pytest.raises(DomainError):
        EmbeddingIndices(1.0)


@given(st.integers(2, 3), st.integers(2, 5), st.floats(-1.0, 1.0))
def test_tau_exponent_linear_in_sigma(m, n, shift):
    spec = ConvolutionSpec.uniform(n, m)
    s0 = homogeneous_sigma(spec)
    assert tau_exponent(spec, s0) == 0.0
    assert tau_exponent(spec, s0 + shift) == pytest.approx(0.5 * shift)


def test_tau_exponent_scaling_by_closed_form():
    # Form(w, tau) = tau^e Form(w/sqrt(tau), 1) for the two-factor integral
    n, alpha, lam = 3, 1.2, 1.4
    spec = ConvolutionSpec(2, n, (alpha, lam))
    sigma = spec.sigma_w2 + 1.0
    tau, d = 4.0, 3.0
    lhs = theta_mp(n, alpha, lam, d, tau) * d  # weight |w|^(sigma_w2 + 1)
    rhs = tau ** tau_exponent(spec, sigma) * theta_mp(n, alpha, lam, d / 2) * (d / 2)
    assert lhs == pytest.approx(rhs, rel=1e-9)
