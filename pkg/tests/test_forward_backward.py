import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nested_hmm.chain import compose_augmented, pair_emission_vector
from nested_hmm.errors import ZeroLikelihoodError
from nested_hmm.forward_backward import (
    batch_loglik,
    batch_posteriors,
    collapse_posteriors,
    forward_loglik,
    posteriors,
)
from nested_hmm.model import ModelSpec

from _oracles import brute_chain_loglik, brute_chain_posteriors, brute_pair_loglik_joint, log_forward, random_theta


def _random_chain(rng, k):
    return rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k), size=k)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_forward_matches_enumeration(k, T, seed):
    rng = np.random.default_rng(seed)
    phi, Phi = _random_chain(rng, k)
    m = rng.uniform(0.01, 1.0, size=(T, k))
    got = batch_loglik(phi, Phi, m[None])[0]
    assert abs(got - brute_chain_loglik(phi, Phi, m)) < 1e-10


@pytest.mark.parametrize("k1, k2, T", [(2, 2, 3), (1, 2, 4), (2, 1, 2), (3, 2, 2)])
def test_pair_loglik_matches_triple_path_sum(k1, k2, T):
    rng = np.random.default_rng(k1 + 7 * k2 + 31 * T)
    spec = ModelSpec(k1=k1, k2=k2, unit_covariates=("a",))
    theta = random_theta(rng, spec)
    y = rng.integers(0, 2, (2, T)).astype(float)
    z = rng.normal(size=(2, T, 1))
    m = np.array([pair_emission_vector(y[:, t], np.ones(2, bool), np.zeros(0), z[:, t], theta, "bernoulli") for t in range(T)])
    chain = compose_augmented(theta.lambda_, theta.Lambda, theta.pi, theta.Pi)
    want = brute_pair_loglik_joint(theta, y[0], y[1], np.zeros((T, 0)), z[0], z[1])
    assert abs(forward_loglik(chain, m) - want) < 1e-10


def test_long_sequence_does_not_underflow():
    rng = np.random.default_rng(0)
    phi, Phi = _random_chain(rng, 8)
    m = rng.uniform(1e-4, 1e-2, size=(3000, 8))
    got = batch_loglik(phi, Phi, m[None])[0]
    assert np.isfinite(got) and got < -10_000
    assert got == pytest.approx(log_forward(phi, Phi, m), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(2, 5), st.integers(0, 2**31))
def test_posteriors_match_enumeration(k, T, seed):
    rng = np.random.default_rng(seed)
    phi, Phi = _random_chain(rng, k)
    m = rng.uniform(0.01, 1.0, size=(T, k))
    gam, xi, _ = batch_posteriors(phi, Phi, m[None])
    occ, trans = brute_chain_posteriors(phi, Phi, m)
    np.testing.assert_allclose(gam[0], occ, atol=1e-12)
    np.testing.assert_allclose(xi[0], trans, atol=1e-12)


def test_xi_layouts_agree():
    rng = np.random.default_rng(4)
    phi, Phi = _random_chain(rng, 4)
    m = rng.uniform(0.05, 1.0, size=(7, 5, 4))
    _, per_t, ll1 = batch_posteriors(phi, Phi, m, keep_xi=True)
    _, summed, ll2 = batch_posteriors(phi, Phi, m)
    _, grouped, ll3 = batch_posteriors(phi, Phi, m, group_starts=[0, 3, 4])
    np.testing.assert_allclose(per_t.sum(axis=1), summed, atol=1e-13)
    np.testing.assert_allclose(grouped[0], summed[:3].sum(axis=0), atol=1e-13)
    np.testing.assert_allclose(grouped[2], summed[4:].sum(axis=0), atol=1e-13)
    np.testing.assert_array_equal(ll1, ll2)
    np.testing.assert_array_equal(ll1, ll3)
    # each occasion's xi is a joint distribution of consecutive states
    np.testing.assert_allclose(per_t.sum(axis=(2, 3)), 1.0, atol=1e-13)


def test_gammas_are_consistent_with_xi():
    rng = np.random.default_rng(8)
    phi, Phi = _random_chain(rng, 3)
    m = rng.uniform(0.05, 1.0, size=(2, 6, 3))
    gam, xi, _ = batch_posteriors(phi, Phi, m, keep_xi=True)
    np.testing.assert_allclose(gam.sum(axis=2), 1.0, atol=1e-13)
    np.testing.assert_allclose(xi.sum(axis=3), gam[:, :-1], atol=1e-13)
    np.testing.assert_allclose(xi.sum(axis=2), gam[:, 1:], atol=1e-13)


def test_zero_probability_reports_occasion():
    phi = np.array([1.0, 0.0])
    Phi = np.eye(2)
    m = np.array([[0.5, 0.5], [0.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ZeroLikelihoodError) as err:
        forward_loglik(compose_augmented([1.0, 0.0], np.eye(2), [1.0], np.eye(1)), m)
    assert err.value.details["occasion"] == 2
    assert err.value.code == "E_ZERO_LIKELIHOOD"
    with pytest.raises(ZeroLikelihoodError):
        batch_loglik(phi, Phi, m[None])


def test_collapsed_counts_are_marginals():
    rng = np.random.default_rng(9)
    k1, k2, T = 2, 3, 4
    chain = compose_augmented(*_random_chain(rng, k1)[:1], _random_chain(rng, k1)[1], *_random_chain(rng, k2))
    m = rng.uniform(0.05, 1.0, size=(T, chain.k))
    post = posteriors(chain, m)
    c = collapse_posteriors(post, k1, k2)
    g = post.gammas.reshape(T, k1, k2, k2)
    np.testing.assert_allclose(c.cluster_occupancy, g.sum(axis=(2, 3)))
    np.testing.assert_allclose(c.unit_occupancy[1], g.sum(axis=(1, 2)))
    np.testing.assert_allclose(c.joint[0].sum(axis=2), c.cluster_occupancy)
    np.testing.assert_allclose(c.cluster_transitions.sum(axis=2), c.cluster_occupancy[:-1], atol=1e-13)
    np.testing.assert_allclose(c.unit_transitions[0].sum(axis=1), c.unit_occupancy[0][1:], atol=1e-13)
    assert post.loglik == pytest.approx(forward_loglik(chain, m), abs=1e-14)
