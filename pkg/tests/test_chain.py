import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nested_hmm.chain import (
    AugmentedChain,
    build_tridiagonal,
    compose_augmented,
    is_tridiagonal_constant,
    pair_emission_vector,
    pair_emissions,
    rho_from_free,
    rho_to_free,
    unit_densities,
)
from nested_hmm.errors import ParameterError
from nested_hmm.model import ModelSpec

from _oracles import density, eta, random_theta


def test_tridiagonal_three_states():
    rho = 0.0870
    expected = np.array([
        [1 - rho, rho, 0.0],
        [rho, 1 - 2 * rho, rho],
        [0.0, rho, 1 - rho],
    ])
    np.testing.assert_array_equal(build_tridiagonal(3, rho), expected)


@given(st.integers(2, 8), st.floats(1e-9, 0.5 - 1e-9))
def test_tridiagonal_rows_are_distributions(k, rho):
    m = build_tridiagonal(k, rho)
    assert np.all(m >= 0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-15)
    assert is_tridiagonal_constant(m)
    # moves only to adjacent states
    assert np.all(np.triu(m, 2) == 0) and np.all(np.tril(m, -2) == 0)


@pytest.mark.parametrize("k, rho", [(1, 0.1), (3, 0.0), (3, 0.5), (3, -0.1), (2, 0.7)])
def test_tridiagonal_rejects_bad_input(k, rho):
    with pytest.raises(ParameterError):
        build_tridiagonal(k, rho)


@given(st.floats(1e-8, 0.5 - 1e-8))
def test_rho_free_round_trip(rho):
    assert abs(rho_from_free(rho_to_free(rho)) - rho) < 1e-12


@pytest.mark.parametrize("k1, k2", [(1, 1), (2, 1), (1, 3), (3, 2)])
def test_augmented_chain_factorizes(k1, k2):
    rng = np.random.default_rng(k1 * 10 + k2)
    lam, Lam = rng.dirichlet(np.ones(k1)), rng.dirichlet(np.ones(k1), size=k1)
    pi, Pi = rng.dirichlet(np.ones(k2)), rng.dirichlet(np.ones(k2), size=k2)
    chain = compose_augmented(lam, Lam, pi, Pi)
    assert chain.k == k1 * k2 * k2
    np.testing.assert_allclose(chain.phi.sum(), 1.0, atol=1e-14)
    np.testing.assert_allclose(chain.Phi.sum(axis=1), 1.0, atol=1e-14)
    states = list(itertools.product(range(k1), range(k2), range(k2)))
    for w, (u, v1, v2) in enumerate(states):
        assert chain.index(u, v1, v2) == w and chain.state(w) == (u, v1, v2)
        assert chain.phi[w] == pytest.approx(lam[u] * pi[v1] * pi[v2], rel=1e-14)
        for w2, (a, b1, b2) in enumerate(states):
            assert chain.Phi[w, w2] == pytest.approx(Lam[u, a] * Pi[v1, b1] * Pi[v2, b2], rel=1e-14)


def test_augmented_chain_is_frozen():
    chain = compose_augmented([1.0], np.eye(1), [1.0], np.eye(1))
    assert isinstance(chain, AugmentedChain)
    with pytest.raises(Exception):
        chain.k1 = 2


@pytest.mark.parametrize("family", ["bernoulli", "gaussian"])
def test_unit_densities_match_direct_formula(family):
    rng = np.random.default_rng(3)
    spec = ModelSpec(k1=2, k2=3, family=family, unit_covariates=("a",), cluster_covariates=("b", "c"))
    theta = random_theta(rng, spec)
    T = 4
    y = rng.integers(0, 2, T).astype(float) if family == "bernoulli" else rng.normal(size=T)
    x, z = rng.normal(size=(T, 2)), rng.normal(size=(T, 1))
    f = unit_densities(y, np.ones(T, bool), x, z, theta, family)
    for t in range(T):
        for u in range(2):
            for v in range(3):
                want = density(y[t], eta(theta, x[t], z[t], u, v), family, theta.sigma2)
                assert f[t, u, v] == pytest.approx(want, rel=1e-12)
    if family == "gaussian":
        e = eta(theta, x[0], z[0], 1, 2)
        assert f[0, 1, 2] == pytest.approx(stats.norm.pdf(y[0], e, np.sqrt(theta.sigma2)), rel=1e-12)


def test_masked_occasions_contribute_one():
    rng = np.random.default_rng(0)
    spec = ModelSpec(k1=2, k2=2)
    theta = random_theta(rng, spec)
    mask = np.array([True, False, True])
    f = unit_densities(np.array([1.0, 0.0, 1.0]), mask, np.zeros((3, 0)), np.zeros((3, 0)), theta, "bernoulli")
    assert np.all(f[1] == 1.0)
    assert np.all(f[0] < 1.0)


def test_pair_emission_vector_flat_order():
    rng = np.random.default_rng(5)
    spec = ModelSpec(k1=2, k2=2, unit_covariates=("a",))
    theta = random_theta(rng, spec)
    y = np.array([1.0, 0.0])
    z = rng.normal(size=(2, 1))
    m = pair_emission_vector(y, np.ones(2, bool), np.zeros(0), z, theta, "bernoulli")
    chain = compose_augmented(theta.lambda_, theta.Lambda, theta.pi, theta.Pi)
    for w in range(chain.k):
        u, v1, v2 = chain.state(w)
        want = density(1, eta(theta, [], z[0], u, v1), "bernoulli") * density(0, eta(theta, [], z[1], u, v2), "bernoulli")
        assert m[w] == pytest.approx(want, rel=1e-12)


def test_phantom_partner_gives_unit_marginal():
    rng = np.random.default_rng(2)
    f = rng.uniform(0.1, 1.0, size=(3, 4, 2, 2))
    m = pair_emissions(f, np.array([0, 1]), np.array([2, -1]))
    # with a phantom partner, summing over v2 weighted by pi gives f_i(u, v1)
    np.testing.assert_array_equal(m[1].reshape(4, 2, 2, 2)[..., 0], f[1])
    np.testing.assert_array_equal(m[1].reshape(4, 2, 2, 2)[..., 1], f[1])
    np.testing.assert_allclose(m[0].reshape(4, 2, 2, 2), f[0][..., None] * f[2][:, :, None, :])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_composed_chain_keeps_stochasticity(seed):
    rng = np.random.default_rng(seed)
    k1, k2 = rng.integers(1, 4, 2)
    chain = compose_augmented(
        rng.dirichlet(np.ones(k1)), rng.dirichlet(np.ones(k1), size=k1),
        rng.dirichlet(np.ones(k2)), rng.dirichlet(np.ones(k2), size=k2),
    )
    assert abs(chain.phi.sum() - 1) < 1e-12
    assert np.abs(chain.Phi.sum(axis=1) - 1).max() < 1e-12
