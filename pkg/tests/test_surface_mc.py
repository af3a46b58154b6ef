import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsconv.errors import DomainError
from hsconv.potentials import ConvolutionSpec, theta_closed_form
from hsconv.quadrature import delta3_reduced
from hsconv.surface_mc import (
    BLOCK_SIZE,
    Proposal,
    RadialProposal,
    _Moments,
    _pairwise,
    block_generator,
    estimate_batches,
    estimate_form,
    hill_tail_index,
    km_form,
    sample_batch,
    sample_surface,
)


def unit(n, d=1.0):
    w = np.zeros(n)
    w[0] = d
    return w


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(2, 4), st.floats(0.1, 10.0), st.floats(0.0, 5.0),
       st.integers(0, 2**32))
def test_samples_lie_on_the_surface(m, n, d, tau, seed):
    spec = ConvolutionSpec.uniform(n, m, tau)
    w = unit(n, d)
    s = sample_surface(spec, w, tau, seed)
    if s is None:
        return
    x = s.points
    assert x.shape == (m, n)
    assert np.allclose(x.sum(axis=0), w, atol=1e-10 * (1 + np.abs(x).max()))
    resid = tau + np.sum(x[:-1] ** 2) - np.sum(x[-1] ** 2)
    assert abs(resid) <= 1e-9 * (tau + np.sum(x * x))
    assert s.resolved_radius > 0 and s.importance_weight > 0


def test_batch_constraints_vectorised():
    spec = ConvolutionSpec(3, 3, (1.5, 1.6, 1.7))
    b = sample_batch(spec, unit(3, 2.0), 0.5, 5000, block_generator(1, 0))
    x = b.points[b.accepted]
    assert np.allclose(x.sum(axis=1), unit(3, 2.0), atol=1e-9)
    resid = 0.5 + np.sum(x[:, 0] ** 2 + x[:, 1] ** 2, axis=1) - np.sum(x[:, 2] ** 2, axis=1)
    assert np.max(np.abs(resid) / (1 + np.sum(x * x, axis=(1, 2)))) < 1e-9
    assert np.all(b.weight[~b.accepted] == 0)


def test_acceptance_strictly_inside_unit_interval():
    est = estimate_form(ConvolutionSpec.uniform(3, 3), unit(3), 1.0, n_samples=100_000, seed=3)
    assert 0.0 < est.acceptance < 1.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_proposal_importance_identity(n):
    # E_q[g / q] = int g for the Gaussian g = exp(-|x|^2)
    prop = Proposal.power_law(n, 0.6 * n, 1.0, centers=[unit(n)], center_exponent=0.5 * n)
    rng = block_generator(11, 0)
    x = prop.sample(rng, 400_000, n)
    vals = np.exp(-np.sum(x * x, axis=1) - prop.log_density(x))
    mean, se = vals.mean(), vals.std() / math.sqrt(len(vals))
    assert abs(mean - math.pi ** (n / 2)) < 4 * se


def test_radial_proposal_normalised():
    from scipy import integrate

    rp = RadialProposal(3, 2.0, 0.5)
    tot = integrate.quad(lambda r: rp.radial_pdf(np.array([r]))[0], 0, 1)[0]
    tot += integrate.quad(lambda r: rp.radial_pdf(np.array([r]))[0], 1, np.inf)[0]
    assert tot == pytest.approx(1.0, rel=1e-8)


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=200), st.integers(1, 5))
def test_pairwise_moments_match_numpy(vals, parts):
    vals = np.array(vals)
    chunks = [c for c in np.array_split(vals, parts) if len(c)]
    tot = _pairwise([_Moments.of(c, len(c), 10) for c in chunks], 10)
    assert tot.count == len(vals)
    assert tot.mean == pytest.approx(vals.mean(), rel=1e-12, abs=1e-9)
    assert tot.m2 / (tot.count - 1) == pytest.approx(vals.var(ddof=1), rel=1e-9, abs=1e-6)


def test_hill_index_recovers_pareto_exponent():
    rng = np.random.default_rng(0)
    x = rng.pareto(1.5, 1_000_000) + 1.0
    top = np.sort(x)[-1000:]
    assert hill_tail_index(top) == pytest.approx(1.5, rel=0.15)


def test_deterministic_and_thread_invariant(monkeypatch):
    spec = ConvolutionSpec(3, 3, (1.5, 1.6, 1.7))
    n = 3 * BLOCK_SIZE + 17
    a = estimate_form(spec, unit(3, 1.5), 1.0, n_samples=n, seed=9, workers=1)
    b = estimate_form(spec, unit(3, 1.5), 1.0, n_samples=n, seed=9, workers=4)
    monkeypatch.setenv("HSCONV_THREADS", "3")
    c = estimate_form(spec, unit(3, 1.5), 1.0, n_samples=n, seed=9)
    assert a == b == c
    d = estimate_form(spec, unit(3, 1.5), 1.0, n_samples=n, seed=10)
    assert d.value != a.value


def test_block_streams_differ():
    assert block_generator(5, 0).random() != block_generator(5, 1).random()
    assert block_generator(5, 2).random() == block_generator(5, 2).random()


def test_estimate_batches_rejects_tiny_runs():
    with pytest.raises(DomainError):
        estimate_batches(lambda rng, k: (np.ones(k), k), 1, 0)


@pytest.mark.parametrize("d,tau", [(0.4, 1.0), (3.0, 1.0), (2.0, 0.25)])
def test_two_factor_mc_brackets_closed_form(d, tau):
    n, alpha, lam = 3, 1.2, 1.4
    spec = ConvolutionSpec(2, n, (alpha, lam), tau)
    sigma = spec.sigma_w2
    est = estimate_form(spec, unit(n, d), tau, n_samples=400_000, seed=21, rescale=True)
    ref = theta_closed_form(n, alpha, lam, d / math.sqrt(tau)) * d**-sigma
    assert abs(est.value - ref) < 4 * est.std_error
    assert est.rel_error < 0.01


def test_rescale_is_consistent():
    spec = ConvolutionSpec(3, 3, (1.5, 1.6, 1.7))
    a = estimate_form(spec, unit(3, 6.0), 1.0, n_samples=300_000, seed=1)
    b = estimate_form(spec, unit(3, 6.0), 1.0, n_samples=300_000, seed=2, rescale=True)
    assert abs(a.value - b.value) < 4 * math.hypot(a.std_error, b.std_error)


def test_three_factor_mc_matches_reduced_quadrature():
    a1, a2, lam, d = 1.5, 1.6, 1.7, 1.4
    spec = ConvolutionSpec(3, 3, (a1, a2, lam))
    sigma = 2 + a1 + a2 + lam - 6
    est = estimate_form(spec, unit(3, d), 1.0, n_samples=1_000_000, seed=5).scaled(d**sigma)
    ref = delta3_reduced(3, a1, a2, lam, unit(3, d))
    assert abs(est.value - ref) < 4 * est.std_error


def test_degenerate_two_factor_surface():
    spec = ConvolutionSpec(2, 3, (1.2, 1.4))
    est = estimate_form(spec, unit(3, 1.0), 1.0, n_samples=10_000, seed=0)
    assert est.value == 0.0
    assert any("no accepted samples" in w for w in est.warnings)


def test_extra_factor_and_weight_override():
    spec = ConvolutionSpec(2, 3, (1.2, 1.4))
    base = estimate_form(spec, unit(3, 2.0), 1.0, n_samples=50_000, seed=4)
    doubled = estimate_form(spec, unit(3, 2.0), 1.0, n_samples=50_000, seed=4,
                            extra_factor=lambda x: np.full(x.shape[0], 2.0))
    assert doubled.value == pytest.approx(2 * base.value, rel=1e-12)
    other = estimate_form(spec, unit(3, 2.0), 1.0, weight_exponents=(1.0, 1.6), n_samples=50_000,
                          seed=4)
    ref = theta_closed_form(3, 1.0, 1.6, 2.0) * 2.0 ** -(1.0 + 1.6 + 2 - 3)
    assert abs(other.value - ref) < 4 * other.std_error


def test_km_form_is_scaled_form():
    a = km_form(3, 3, unit(3, 2.0), 1.0, 50_000, 3)
    b = estimate_form(ConvolutionSpec.uniform(3, 3), unit(3, 2.0), 1.0, n_samples=50_000, seed=3,
                      rescale=True)
    assert a.value == pytest.approx(b.value * 2.0**2, rel=1e-12)
