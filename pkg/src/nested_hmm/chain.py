"""Transition-matrix construction and the augmented pair chain.

A pair of units ``(i, j)`` from the same cluster is driven by the triple
``w = (u, v1, v2)`` of the cluster state and the two unit states. The triple
is itself a Markov chain on ``k1 * k2**2`` states whose initial and transition
probabilities factorize over the component chains. States are flattened
u-major, then v1, then v2, zero-based::

    w = u * k2**2 + v1 * k2 + v2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from nested_hmm.errors import ParameterError

RHO_MIN = 1e-10
RHO_MAX = 0.5 - 1e-10


def build_tridiagonal(k: int, rho: float) -> np.ndarray:
    """Tridiagonal transition matrix with a single off-diagonal probability.

    End rows keep ``1 - rho`` on the diagonal, interior rows ``1 - 2 rho``.
    Built entry by entry so rows sum to one without renormalization.
    """
    if k < 2:
        raise ParameterError(f"tridiagonal constraint needs k >= 2, got k={k}", k=k)
    if not 0.0 < rho < 0.5:
        raise ParameterError(f"rho must lie in (0, 0.5), got {rho!r}", rho=rho)
    mat = np.zeros((k, k))
    idx = np.arange(k - 1)
    mat[idx, idx + 1] = rho
    mat[idx + 1, idx] = rho
    diag = np.full(k, 1.0 - 2.0 * rho)
    diag[0] = diag[-1] = 1.0 - rho
    mat[np.arange(k), np.arange(k)] = diag
    return mat


def tridiagonal_rho(mat: np.ndarray) -> float:
    return float(mat[0, 1])


def is_tridiagonal_constant(mat: np.ndarray, atol: float = 1e-12) -> bool:
    k = mat.shape[0]
    if k < 2:
        return False
    rho = tridiagonal_rho(mat)
    if not 0.0 < rho < 0.5:
        return False
    return bool(np.allclose(mat, build_tridiagonal(k, rho), rtol=0.0, atol=atol))


@dataclass(frozen=True)
class AugmentedChain:
    """Pair-level chain on ``k = k1 * k2**2`` states."""

    k1: int
    k2: int
    phi: np.ndarray
    Phi: np.ndarray

    @property
    def k(self) -> int:
        return self.k1 * self.k2 * self.k2

    def index(self, u: int, v1: int, v2: int) -> int:
        return (u * self.k2 + v1) * self.k2 + v2

    def state(self, w: int) -> tuple[int, int, int]:
        u, rest = divmod(w, self.k2 * self.k2)
        v1, v2 = divmod(rest, self.k2)
        return u, v1, v2


def compose_augmented(lambda_, Lambda, pi, Pi) -> AugmentedChain:
    lambda_ = np.asarray(lambda_, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    pi = np.asarray(pi, dtype=float)
    Pi = np.asarray(Pi, dtype=float)
    k1, k2 = lambda_.shape[0], pi.shape[0]
    if Lambda.shape != (k1, k1) or Pi.shape != (k2, k2):
        raise ParameterError(
            "dimension mismatch between initial vectors and transition matrices",
            lambda_shape=lambda_.shape,
            Lambda_shape=Lambda.shape,
            pi_shape=pi.shape,
            Pi_shape=Pi.shape,
        )
    phi = (lambda_[:, None, None] * pi[None, :, None] * pi[None, None, :]).ravel()
    Phi = np.kron(Lambda, np.kron(Pi, Pi))
    return AugmentedChain(k1=k1, k2=k2, phi=phi, Phi=Phi)


def linear_predictor(x, z, theta) -> np.ndarray:
    """State-free part of the linear predictor, ``intercept + x'gamma + z'delta``."""
    out = theta.intercept + np.asarray(x, dtype=float) @ theta.gamma
    return out + np.asarray(z, dtype=float) @ theta.delta


def unit_densities(y, mask, x, z, theta, family: str) -> np.ndarray:
    """Per-unit measurement density for every ``(u, v)`` combination.

    ``y`` and ``mask`` share a leading shape ``S``; ``x`` and ``z`` have shape
    ``S + (r,)`` and ``S + (q,)``. Returns shape ``S + (k1, k2)``. Masked
    entries are exactly one.
    """
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    eta = linear_predictor(x, z, theta)[..., None, None]
    eta = eta + theta.alpha[:, None] + theta.beta[None, :]
    y_b = y[..., None, None]
    if family == "bernoulli":
        dens = expit(np.where(y_b > 0.5, eta, -eta))
    elif family == "gaussian":
        s2 = theta.sigma2
        dens = np.exp(-0.5 * (y_b - eta) ** 2 / s2) / np.sqrt(2.0 * np.pi * s2)
    else:
        raise ParameterError(f"unknown family {family!r}")
    return np.where(mask[..., None, None], dens, 1.0)


def pair_emission_vector(y_pair, mask_pair, x, z_pair, theta, family: str) -> np.ndarray:
    """Conditional probability (or density) of one occasion's pair outcome.

    Args:
        y_pair: responses of the two units at this occasion.
        mask_pair: which of the two responses enter the likelihood.
        x: cluster covariates at this occasion, shape ``(r,)``.
        z_pair: unit covariates of both units, shape ``(2, q)``.

    Returns:
        Vector of length ``k1 * k2**2`` in the flat ``(u, v1, v2)`` order.
    """
    x = np.asarray(x, dtype=float)
    xx = np.broadcast_to(x, (2,) + x.shape)
    f = unit_densities(y_pair, mask_pair, xx, z_pair, theta, family)
    return (f[0][:, :, None] * f[1][:, None, :]).ravel()


def pair_emissions(f_units: np.ndarray, pair_i: np.ndarray, pair_j: np.ndarray) -> np.ndarray:
    """Batched pair emissions from per-unit densities.

    ``f_units`` has shape ``(N, T, k1, k2)``. A partner index of ``-1`` marks a
    fully masked partner. Returns ``(P, T, k1 * k2**2)``.
    """
    n, T, k1, k2 = f_units.shape
    fi = f_units[pair_i]
    fj = f_units[np.where(pair_j < 0, 0, pair_j)]
    fj = np.where((pair_j < 0)[:, None, None, None], 1.0, fj)
    out = fi[..., :, :, None] * fj[..., :, None, :]
    return out.reshape(len(pair_i), T, k1 * k2 * k2)


def rho_to_free(rho: float) -> float:
    two_rho = 2.0 * rho
    return float(np.log(two_rho) - np.log1p(-two_rho))


def rho_from_free(s: float) -> float:
    return float(0.5 * expit(s))
