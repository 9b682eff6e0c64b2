"""Scaled forward-backward recursions on the augmented pair chain.

All routines work on a batch of pairs at once: emissions have shape
``(P, T, k)``. The single-pair functions are thin wrappers over the batched
code so both paths produce identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nested_hmm.chain import AugmentedChain
from nested_hmm.errors import ZeroLikelihoodError


def _raise_zero(scale: np.ndarray, t: int) -> None:
    p = int(np.flatnonzero(scale == 0.0)[0])
    raise ZeroLikelihoodError(
        f"observation has zero probability at occasion t={t + 1}",
        pair=p,
        occasion=t + 1,
    )


def batch_forward(phi: np.ndarray, Phi: np.ndarray, emissions: np.ndarray):
    """Normalized forward probabilities and per-step scale factors.

    Returns ``(alpha, scale)`` with ``alpha`` of shape ``(P, T, k)`` (each
    slice sums to one) and ``scale`` of shape ``(P, T)``. The pair
    log-likelihood is ``log(scale).sum(axis=1)``.
    """
    P, T, k = emissions.shape
    alpha = np.empty((P, T, k))
    scale = np.empty((P, T))
    a = emissions[:, 0, :] * phi
    for t in range(T):
        if t > 0:
            a = (alpha[:, t - 1, :] @ Phi) * emissions[:, t, :]
        c = a.sum(axis=1)
        if np.any(c == 0.0):
            _raise_zero(c, t)
        alpha[:, t, :] = a / c[:, None]
        scale[:, t] = c
    return alpha, scale


def batch_loglik(phi: np.ndarray, Phi: np.ndarray, emissions: np.ndarray) -> np.ndarray:
    _, scale = batch_forward(phi, Phi, emissions)
    return np.log(scale).sum(axis=1)


def batch_posteriors(phi: np.ndarray, Phi: np.ndarray, emissions: np.ndarray, keep_xi: bool = False, group_starts=None):
    """Smoothed state probabilities for a batch of pairs.

    Returns:
        gammas: ``(P, T, k)`` posterior state probabilities.
        xi: expected transition counts summed over occasions, ``(P, k, k)``;
            per occasion ``(P, T - 1, k, k)`` when ``keep_xi`` is set; or
            summed over contiguous pair groups, ``(G, k, k)``, when
            ``group_starts`` (sorted start offsets, first 0) is given.
        loglik: ``(P,)`` pair log-likelihoods.
    """
    P, T, k = emissions.shape
    alpha, scale = batch_forward(phi, Phi, emissions)
    beta = np.empty((P, T, k))
    beta[:, T - 1, :] = 1.0
    # g[t] = m[t] * beta[t] / c[t]; used by both the backward step and xi
    g = np.empty((P, T, k))
    for t in range(T - 1, 0, -1):
        g[:, t, :] = emissions[:, t, :] * beta[:, t, :] / scale[:, t, None]
        beta[:, t - 1, :] = g[:, t, :] @ Phi.T
    gammas = alpha * beta
    if keep_xi:
        xi = alpha[:, :-1, :, None] * Phi[None, None, :, :] * g[:, 1:, None, :]
    elif group_starts is not None:
        bounds = list(group_starts) + [P]
        xi = np.empty((len(bounds) - 1, k, k))
        for n, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
            left = alpha[a:b, :-1, :].reshape(-1, k)
            right = g[a:b, 1:, :].reshape(-1, k)
            xi[n] = (left.T @ right) * Phi
    elif T == 1:
        xi = np.zeros((P, k, k))
    else:
        xi = np.matmul(alpha[:, :-1, :].transpose(0, 2, 1), g[:, 1:, :]) * Phi
    return gammas, xi, np.log(scale).sum(axis=1)


def forward_loglik(chain: AugmentedChain, emissions) -> float:
    """Log-probability of one pair's response sequence.

    ``emissions`` has shape ``(T, k)``: row ``t`` holds the conditional
    probability of the occasion-``t`` pair outcome for each augmented state.

    Raises:
        ZeroLikelihoodError: a scale factor is exactly zero; ``occasion`` in
            the error details is 1-based.
    """
    m = np.asarray(emissions, dtype=float)[None]
    return float(batch_loglik(chain.phi, chain.Phi, m)[0])


@dataclass(frozen=True)
class PairPosterior:
    gamma1: np.ndarray
    gammas: np.ndarray
    xi: np.ndarray
    loglik: float


def posteriors(chain: AugmentedChain, emissions) -> PairPosterior:
    m = np.asarray(emissions, dtype=float)[None]
    gammas, xi, ll = batch_posteriors(chain.phi, chain.Phi, m, keep_xi=True)
    return PairPosterior(gamma1=gammas[0, 0], gammas=gammas[0], xi=xi[0], loglik=float(ll[0]))


@dataclass(frozen=True)
class CollapsedCounts:
    """Marginal expected occupancies and transitions for one pair.

    ``unit_*`` arrays carry a leading axis of length 2 for the two units.
    """

    cluster_occupancy: np.ndarray  # (T, k1)
    cluster_transitions: np.ndarray  # (T-1, k1, k1)
    unit_occupancy: np.ndarray  # (2, T, k2)
    unit_transitions: np.ndarray  # (2, T-1, k2, k2)
    joint: np.ndarray  # (2, T, k1, k2)


def collapse_posteriors(p: PairPosterior, k1: int, k2: int) -> CollapsedCounts:
    T = p.gammas.shape[0]
    g = p.gammas.reshape(T, k1, k2, k2)
    xi = p.xi.reshape(T - 1, k1, k2, k2, k1, k2, k2)
    joint = np.stack([g.sum(axis=3), g.sum(axis=2)])
    return CollapsedCounts(
        cluster_occupancy=g.sum(axis=(2, 3)),
        cluster_transitions=xi.sum(axis=(2, 3, 5, 6)),
        unit_occupancy=joint.sum(axis=2),
        unit_transitions=np.stack([xi.sum(axis=(1, 3, 4, 6)), xi.sum(axis=(1, 2, 4, 5))]),
        joint=joint,
    )
