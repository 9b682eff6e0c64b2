"""Brute-force reference computations shared by the test modules.

Nothing here calls the package's likelihood code: path sums enumerate every
latent trajectory explicitly and the linear predictor is rebuilt by hand.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from nested_hmm.model import ClusterData, Constraint, ModelSpec, PanelDataset, ParameterSet, UnitData


def random_stochastic(rng, k, constraint=Constraint.UNCONSTRAINED):
    if constraint is Constraint.DIAGONAL or k == 1:
        return np.eye(k)
    if constraint is Constraint.TRIDIAGONAL:
        rho = rng.uniform(0.02, 0.45)
        m = np.zeros((k, k))
        for r in range(k):
            if r > 0:
                m[r, r - 1] = rho
            if r < k - 1:
                m[r, r + 1] = rho
            m[r, r] = 1 - m[r].sum()
        return m
    return rng.dirichlet(np.ones(k), size=k)


def random_theta(rng, spec: ModelSpec, scale=1.0) -> ParameterSet:
    return ParameterSet(
        lambda_=rng.dirichlet(np.ones(spec.k1)),
        Lambda=random_stochastic(rng, spec.k1, spec.cluster_transition),
        pi=rng.dirichlet(np.ones(spec.k2)),
        Pi=random_stochastic(rng, spec.k2, spec.unit_transition),
        intercept=rng.normal(0, scale),
        alpha=np.r_[0.0, rng.normal(0, 2 * scale, spec.k1 - 1)],
        beta=np.r_[0.0, rng.normal(0, 2 * scale, spec.k2 - 1)],
        gamma=rng.normal(0, 0.5 * scale, spec.n_gamma),
        delta=rng.normal(0, 0.5 * scale, spec.n_delta),
        sigma2=rng.uniform(0.3, 2.0) if spec.family == "gaussian" else None,
    )


def random_dataset(rng, spec: ModelSpec, H, sizes, T, family=None) -> PanelDataset:
    """Panel with random responses; ``sizes`` is a fixed int or an (lo, hi) pair."""
    family = family or spec.family
    clusters = []
    for h in range(H):
        n = sizes if isinstance(sizes, int) else int(rng.integers(sizes[0], sizes[1] + 1))
        x = rng.normal(size=(T, spec.n_gamma))
        units = []
        for i in range(n):
            y = rng.integers(0, 2, T).astype(float) if family == "bernoulli" else rng.normal(size=T)
            units.append(UnitData(f"u{i}", y, rng.normal(size=(T, len(spec.unit_covariates)))))
        clusters.append(ClusterData(f"c{h}", x, tuple(units)))
    return PanelDataset(tuple(clusters), T, tuple(spec.unit_covariates), tuple(spec.cluster_covariates))


def eta(theta: ParameterSet, x_t, z_t, u, v) -> float:
    return float(theta.intercept + theta.alpha[u] + theta.beta[v] + np.dot(x_t, theta.gamma) + np.dot(z_t, theta.delta))


def density(y, e, family, sigma2=None) -> float:
    if family == "bernoulli":
        p = 1.0 / (1.0 + math.exp(-e))
        return p if y == 1 else 1.0 - p
    return math.exp(-0.5 * (y - e) ** 2 / sigma2) / math.sqrt(2 * math.pi * sigma2)


def path_prob(init, trans, path) -> float:
    p = init[path[0]]
    for a, b in zip(path[:-1], path[1:]):
        p *= trans[a, b]
    return p


def brute_cluster_loglik(theta: ParameterSet, ys, x, zs, family="bernoulli") -> float:
    """Manifest log-likelihood of one cluster: sum over the cluster path, product over units of sums over unit paths."""
    T = len(ys[0])
    k1, k2 = len(theta.lambda_), len(theta.pi)
    total = 0.0
    for upath in itertools.product(range(k1), repeat=T):
        pu = path_prob(theta.lambda_, theta.Lambda, upath)
        if pu == 0.0:
            continue
        prod = pu
        for y, z in zip(ys, zs):
            s = 0.0
            for vpath in itertools.product(range(k2), repeat=T):
                pv = path_prob(theta.pi, theta.Pi, vpath)
                if pv == 0.0:
                    continue
                for t in range(T):
                    pv *= density(y[t], eta(theta, x[t], z[t], upath[t], vpath[t]), family, theta.sigma2)
                s += pv
            prod *= s
        total += prod
    return math.log(total)


def brute_pair_loglik_joint(theta: ParameterSet, y1, y2, x, z1, z2, family="bernoulli") -> float:
    """Pair log-likelihood as one triple sum over (U, V1, V2) paths."""
    T = len(y1)
    k1, k2 = len(theta.lambda_), len(theta.pi)
    total = 0.0
    for upath in itertools.product(range(k1), repeat=T):
        pu = path_prob(theta.lambda_, theta.Lambda, upath)
        for v1 in itertools.product(range(k2), repeat=T):
            p1 = path_prob(theta.pi, theta.Pi, v1)
            for v2 in itertools.product(range(k2), repeat=T):
                p = pu * p1 * path_prob(theta.pi, theta.Pi, v2)
                if p == 0.0:
                    continue
                for t in range(T):
                    p *= density(y1[t], eta(theta, x[t], z1[t], upath[t], v1[t]), family, theta.sigma2)
                    p *= density(y2[t], eta(theta, x[t], z2[t], upath[t], v2[t]), family, theta.sigma2)
                total += p
    return math.log(total)


def brute_chain_loglik(phi, Phi, emissions) -> float:
    """log sum over all state paths of a plain HMM with given emission table (T, k)."""
    T, k = emissions.shape
    total = 0.0
    for path in itertools.product(range(k), repeat=T):
        p = path_prob(phi, Phi, path)
        for t in range(T):
            p *= emissions[t, path[t]]
        total += p
    return math.log(total)


def brute_chain_posteriors(phi, Phi, emissions):
    """Occupancy (T, k) and summed transition (k, k) posteriors by enumeration."""
    T, k = emissions.shape
    occ = np.zeros((T, k))
    trans = np.zeros((k, k))
    total = 0.0
    for path in itertools.product(range(k), repeat=T):
        p = path_prob(phi, Phi, path)
        for t in range(T):
            p *= emissions[t, path[t]]
        total += p
        for t in range(T):
            occ[t, path[t]] += p
        for t in range(T - 1):
            trans[path[t], path[t + 1]] += p
    return occ / total, trans / total


def log_forward(phi, Phi, emissions) -> float:
    """Log-space forward recursion, used for long sequences where enumeration is impossible."""
    from scipy.special import logsumexp

    la = np.log(phi) + np.log(emissions[0])
    logPhi = np.log(Phi)
    for t in range(1, emissions.shape[0]):
        la = logsumexp(la[:, None] + logPhi, axis=0) + np.log(emissions[t])
    return float(logsumexp(la))
