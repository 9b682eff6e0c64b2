"""EM maximization of the pairwise log-likelihood."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import expit, logit

from nested_hmm.chain import RHO_MAX, RHO_MIN, build_tridiagonal, compose_augmented, pair_emissions, unit_densities
from nested_hmm.errors import (
    ConfigError,
    DegeneracyWarning,
    NestedHMMError,
    SingularMatrixError,
    ZeroLikelihoodError,
)
from nested_hmm.forward_backward import batch_loglik, batch_posteriors
from nested_hmm.model import (
    Constraint,
    ModelSpec,
    PanelArrays,
    PanelDataset,
    ParameterSet,
    check_parameters,
    panel_arrays,
    validate_dataset,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 5000
    rel_tolerance: float = 1e-8
    n_random_starts: int = 10
    random_seed: int = 0
    newton_max_steps: int = 100
    newton_tolerance: float = 1e-8
    threads: int = 1
    # reserved: the weighted pairwise likelihood is not implemented
    weighted_pairs: bool = False

    def __post_init__(self):
        if self.weighted_pairs:
            raise ConfigError("weighted pairwise likelihood is not implemented")
        for name in ("max_iterations", "newton_max_steps", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("rel_tolerance", "newton_tolerance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if int(self.n_random_starts) < 0:
            raise ConfigError("n_random_starts must be >= 0")


def as_arrays(data, spec: ModelSpec) -> PanelArrays:
    if isinstance(data, PanelArrays):
        return data
    if isinstance(data, PanelDataset):
        return panel_arrays(validate_dataset(data, spec), spec)
    raise TypeError(f"expected PanelDataset or PanelArrays, got {type(data).__name__}")


# ---------------------------------------------------------------------------
# E-step


@dataclass(frozen=True)
class ExpectedCounts:
    """Expected complete-data sufficient statistics, kept per cluster.

    ``unit_weights[n, t, u, v]`` is the posterior mass of ``(u, v)`` for unit
    ``n`` at occasion ``t`` summed over every pair containing the unit.
    """

    ploglik: float
    pair_loglik: np.ndarray
    cluster_loglik: np.ndarray
    cluster_initial: np.ndarray  # (H, k1)
    cluster_transitions: np.ndarray  # (H, k1, k1)
    unit_initial: np.ndarray  # (H, k2)
    unit_transitions: np.ndarray  # (H, k2, k2)
    unit_weights: np.ndarray  # (N, T, k1, k2)

    @property
    def lambda_counts(self) -> np.ndarray:
        return self.cluster_initial.sum(axis=0)

    @property
    def Lambda_counts(self) -> np.ndarray:
        return self.cluster_transitions.sum(axis=0)

    @property
    def pi_counts(self) -> np.ndarray:
        return self.unit_initial.sum(axis=0)

    @property
    def Pi_counts(self) -> np.ndarray:
        return self.unit_transitions.sum(axis=0)


def _unit_densities(arrays: PanelArrays, spec: ModelSpec, theta: ParameterSet) -> np.ndarray:
    return unit_densities(arrays.y, arrays.mask, arrays.x, arrays.z, theta, spec.family)


def _chunks(n: int, threads: int) -> list[slice]:
    if threads <= 1 or n < 2 * threads:
        return [slice(0, n)]
    bounds = np.linspace(0, n, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _pair_map(fn, arrays: PanelArrays, threads: int):
    """Apply ``fn(slice)`` over contiguous pair blocks, preserving pair order."""
    blocks = _chunks(arrays.n_pairs, threads)
    try:
        if len(blocks) == 1:
            return [fn(blocks[0])]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, blocks))
    except ZeroLikelihoodError as err:
        raise _locate_zero(err, arrays, blocks) from None


def _locate_zero(err: ZeroLikelihoodError, arrays: PanelArrays, blocks) -> ZeroLikelihoodError:
    # the batch routine reports a block-local pair index
    local = err.details.get("pair", 0)
    block = err.details.get("block", blocks[0])
    p = block.start + local
    coords = arrays.pair_coordinates(p)
    return ZeroLikelihoodError(f"{err} for pair {coords}", occasion=err.details.get("occasion"), **coords)


def _tag_block(fn, block):
    try:
        return fn(block)
    except ZeroLikelihoodError as err:
        err.details["block"] = block
        raise


def pairwise_loglik(data, spec: ModelSpec, theta: ParameterSet, threads: int = 1) -> float:
    """Sum of pair log-likelihoods over all within-cluster pairs.

    ``data`` is a :class:`PanelDataset` (validated here) or precompiled
    :class:`PanelArrays`.
    """
    return float(cluster_logliks(data, spec, theta, threads).sum())


def cluster_logliks(data, spec: ModelSpec, theta: ParameterSet, threads: int = 1) -> np.ndarray:
    arrays = as_arrays(data, spec)
    f = _unit_densities(arrays, spec, theta)
    chain = compose_augmented(theta.lambda_, theta.Lambda, theta.pi, theta.Pi)

    def work(block):
        m = pair_emissions(f, arrays.pair_i[block], arrays.pair_j[block])
        return batch_loglik(chain.phi, chain.Phi, m)

    parts = _pair_map(lambda b: _tag_block(work, b), arrays, threads)
    ll = np.concatenate(parts) if parts else np.zeros(0)
    return arrays.pair_to_cluster() @ ll


def _collapse_matrices(k1: int, k2: int):
    """Indicator matrices mapping flat ``w = (u, v1, v2)`` to u, v1, v2, (u, v1) and (u, v2)."""
    w = np.arange(k1 * k2 * k2)
    u, rest = np.divmod(w, k2 * k2)
    v1, v2 = np.divmod(rest, k2)

    def onehot(idx, n):
        out = np.zeros((len(w), n))
        out[w, idx] = 1.0
        return out

    return onehot(u, k1), onehot(v1, k2), onehot(v2, k2), onehot(u * k2 + v1, k1 * k2), onehot(u * k2 + v2, k1 * k2)


def e_step(data, spec: ModelSpec, theta: ParameterSet, threads: int = 1) -> ExpectedCounts:
    """Posterior expected counts for every pair, aggregated per cluster and unit.

    Singleton stand-in pairs contribute only the real unit's chain counts; the
    fully masked partner carries no information about the unit chain.
    """
    arrays = as_arrays(data, spec)
    k1, k2, T = spec.k1, spec.k2, arrays.T
    k = k1 * k2 * k2
    f = _unit_densities(arrays, spec, theta)
    chain = compose_augmented(theta.lambda_, theta.Lambda, theta.pi, theta.Pi)
    to_u, to_v1, to_v2, to_uv1, to_uv2 = _collapse_matrices(k1, k2)
    H = arrays.n_clusters

    def work(block):
        pi_, pj = arrays.pair_i[block], arrays.pair_j[block]
        m = pair_emissions(f, pi_, pj)
        # group boundaries of the clusters inside this block
        local = np.flatnonzero(np.diff(arrays.pair_cluster[block], prepend=-1))
        gammas, xi, ll = batch_posteriors(chain.phi, chain.Phi, m, group_starts=local)
        g0 = gammas[:, 0, :]
        w_i = (gammas.reshape(-1, k) @ to_uv1).reshape(len(ll), -1)
        w_j = (gammas.reshape(-1, k) @ to_uv2).reshape(len(ll), -1)
        return ll, g0, xi, w_i, w_j

    parts = _pair_map(lambda b: _tag_block(work, b), arrays, threads)
    ll, g0, xi_blocks, w_i, w_j = ([p[c] for p in parts] for c in range(5))
    ll, g0, w_i, w_j = (np.concatenate(a) for a in (ll, g0, w_i, w_j))
    # a cluster split across blocks yields one partial sum per block
    block_clusters = [np.unique(arrays.pair_cluster[b]) for b in _chunks(arrays.n_pairs, threads)]
    xi = np.zeros((H, k, k))
    for cl, part in zip(block_clusters, xi_blocks):
        xi[cl] += part
    to_cluster = arrays.pair_to_cluster()
    # clusters whose only pair is a singleton stand-in
    real = np.ones(H)
    real[arrays.pair_cluster[arrays.pair_j < 0]] = 0.0
    g0c = to_cluster @ g0
    N = arrays.n_units
    weights = _scatter_rows(arrays.pair_i, w_i, N)
    has_j = arrays.pair_j >= 0
    weights += _scatter_rows(arrays.pair_j[has_j], w_j[has_j], N)
    cluster_ll = to_cluster @ ll
    return ExpectedCounts(
        ploglik=float(cluster_ll.sum()),
        pair_loglik=ll,
        cluster_loglik=cluster_ll,
        cluster_initial=g0c @ to_u,
        cluster_transitions=to_u.T @ xi @ to_u,
        unit_initial=g0c @ to_v1 + (g0c @ to_v2) * real[:, None],
        unit_transitions=to_v1.T @ xi @ to_v1 + (to_v2.T @ xi @ to_v2) * real[:, None, None],
        unit_weights=weights.reshape(N, T, k1, k2),
    )


def _scatter_rows(index: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    inc = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))
    return np.asarray(inc @ rows)


# ---------------------------------------------------------------------------
# M-step: chain parameters


def solve_tridiagonal_rho(A: float, B: float, C: float, tol: float = 1e-14) -> float:
    """Maximize ``A log(rho) + B log(1-rho) + C log(1-2 rho)`` on ``(0, 0.5)``.

    Closed form ``A / (A + B)`` when ``C == 0``; otherwise Newton's method on
    the derivative, safeguarded by bisection. The objective is concave, so the
    derivative is decreasing and its sign brackets the root. Results are
    clipped to ``[RHO_MIN, RHO_MAX]``.
    """
    if min(A, B, C) < 0:
        raise ValueError("counts must be nonnegative")
    if A <= 0:
        return RHO_MIN
    if C == 0:
        if B <= 0:
            return RHO_MAX
        return min(max(A / (A + B), RHO_MIN), RHO_MAX)

    def d1(r):
        return A / r - B / (1 - r) - 2 * C / (1 - 2 * r)

    def d2(r):
        return -A / r**2 - B / (1 - r) ** 2 - 4 * C / (1 - 2 * r) ** 2

    lo, hi = RHO_MIN, RHO_MAX
    if d1(lo) <= 0:
        return lo
    if d1(hi) >= 0:
        return hi
    r = min(max(A / (A + B + 2 * C), lo), hi)
    for _ in range(200):
        g = d1(r)
        if g > 0:
            lo = r
        else:
            hi = r
        step = r - g / d2(r)
        r_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(r_new - r) <= tol * max(r, 1e-300) or hi - lo <= tol * hi:
            r = r_new
            break
        r = r_new
    return float(min(max(r, RHO_MIN), RHO_MAX))


def tridiagonal_counts(counts: np.ndarray) -> tuple[float, float, float]:
    """Split a transition-count matrix into (off-diagonal band, end-row diagonal, interior diagonal)."""
    k = counts.shape[0]
    idx = np.arange(k - 1)
    A = counts[idx, idx + 1].sum() + counts[idx + 1, idx].sum()
    diag = np.diag(counts)
    B = diag[0] + diag[-1]
    C = diag[1:-1].sum()
    return float(A), float(B), float(C)


def m_step_chain(initial_counts, transition_counts, constraint, previous: np.ndarray | None = None):
    """Update an initial vector and transition matrix from expected counts.

    Returns ``(initial, transition)``. Rows with no expected mass keep the
    corresponding row of ``previous`` and emit a :class:`DegeneracyWarning`.
    """
    constraint = Constraint(constraint)
    init = np.asarray(initial_counts, dtype=float)
    trans = np.asarray(transition_counts, dtype=float)
    k = init.shape[0]
    new_init = init / init.sum()
    if k == 1:
        return new_init, np.eye(1)
    if constraint is Constraint.DIAGONAL:
        return new_init, np.eye(k)
    if constraint is Constraint.TRIDIAGONAL:
        return new_init, build_tridiagonal(k, solve_tridiagonal_rho(*tridiagonal_counts(trans)))
    rows = trans.sum(axis=1)
    empty = rows <= 0
    if np.any(empty):
        warnings.warn(f"transition rows {np.flatnonzero(empty).tolist()} have no expected mass", DegeneracyWarning, stacklevel=2)
        if previous is None:
            previous = np.full((k, k), 1.0 / k)
    out = np.where(empty[:, None], previous if previous is not None else 0.0, trans / np.where(empty, 1.0, rows)[:, None])
    return new_init, out


# ---------------------------------------------------------------------------
# M-step: regression parameters


@dataclass(frozen=True)
class RegressionDesign:
    """Expanded design with one row per unmasked ``(unit, occasion, u, v)`` cell."""

    X: np.ndarray
    y: np.ndarray
    cell: np.ndarray
    unit: np.ndarray
    columns: tuple[str, ...]


def regression_design(arrays: PanelArrays, spec: ModelSpec) -> RegressionDesign:
    k1, k2, T = spec.k1, spec.k2, arrays.T
    n_idx, t_idx = np.nonzero(arrays.mask)
    M = len(n_idx)
    u = np.repeat(np.arange(k1), k2)
    v = np.tile(np.arange(k2), k1)
    n_r = np.repeat(n_idx, k1 * k2)
    t_r = np.repeat(t_idx, k1 * k2)
    u_r = np.tile(u, M)
    v_r = np.tile(v, M)
    cols = [np.ones(len(n_r))]
    cols += [(u_r == a).astype(float) for a in range(1, k1)]
    cols += [(v_r == b).astype(float) for b in range(1, k2)]
    X = np.column_stack(cols + [arrays.x[n_r, t_r], arrays.z[n_r, t_r]])
    names = ["intercept"] + [f"alpha[{a + 1}]" for a in range(1, k1)] + [f"beta[{b + 1}]" for b in range(1, k2)]
    names += [f"gamma[{c}]" for c in spec.cluster_covariates]
    names += [f"delta[{c}]" for c in spec.effective_unit_covariates]
    cell = ((n_r * T + t_r) * k1 + u_r) * k2 + v_r
    return RegressionDesign(X=X, y=arrays.y[n_r, t_r], cell=cell, unit=n_r, columns=tuple(names))


def regression_coefficients(theta: ParameterSet) -> np.ndarray:
    return np.concatenate([[theta.intercept], theta.alpha[1:], theta.beta[1:], theta.gamma, theta.delta])


def with_coefficients(theta: ParameterSet, coef: np.ndarray, spec: ModelSpec, sigma2=None) -> ParameterSet:
    k1, k2 = spec.k1, spec.k2
    a = 1 + (k1 - 1)
    b = a + (k2 - 1)
    g = b + spec.n_gamma
    return replace(
        theta,
        intercept=float(coef[0]),
        alpha=np.concatenate([[0.0], coef[1:a]]),
        beta=np.concatenate([[0.0], coef[a:b]]),
        gamma=coef[b:g],
        delta=coef[g:],
        sigma2=sigma2 if spec.family == "gaussian" else None,
    )


def _deficient_columns(X: np.ndarray, w: np.ndarray, names) -> list[str]:
    Xw = X * np.sqrt(np.maximum(w, 0.0))[:, None]
    _, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = d.max() * max(Xw.shape) * np.finfo(float).eps if d.size and d.max() > 0 else 0.0
    rank = int((d > tol).sum())
    return [names[i] for i in sorted(piv[rank:])]


def _solve_normal(H: np.ndarray, g: np.ndarray, X, w, names) -> np.ndarray:
    try:
        c = scipy.linalg.cho_factor(H)
        d = scipy.linalg.cho_solve(c, g)
    except np.linalg.LinAlgError:
        d = None
    if d is None or not np.all(np.isfinite(d)) or np.linalg.cond(H) > 1e14:
        cols = _deficient_columns(X, w, names)
        if cols:
            msg = f"weighted normal equations are singular; deficient columns: {cols}"
        else:
            # full-rank design with vanishing weights: fitted probabilities at 0 or 1
            msg = "weighted normal equations are ill-conditioned; likely quasi-complete separation"
        raise SingularMatrixError(msg, columns=cols)
    return d


def bernoulli_objective(coef, X, y, w) -> float:
    eta = X @ coef
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def weighted_logistic(X, y, w, coef0, max_steps: int = 100, tol: float = 1e-8, names=None):
    """Weighted logistic MLE by Newton-Raphson with step halving.

    Each accepted step does not decrease the weighted log-likelihood.
    Returns ``(coef, n_steps)``.
    """
    names = names or [f"x{i}" for i in range(X.shape[1])]
    coef = np.array(coef0, dtype=float)
    obj = bernoulli_objective(coef, X, y, w)
    steps = 0
    while steps < max_steps:
        p = expit(X @ coef)
        grad = X.T @ (w * (y - p))
        if np.linalg.norm(grad) < tol:
            break
        H = (X * (w * p * (1.0 - p))[:, None]).T @ X
        d = _solve_normal(H, grad, X, w * p * (1.0 - p), names)
        t = 1.0
        for _ in range(60):
            cand = coef + t * d
            new = bernoulli_objective(cand, X, y, w)
            if new >= obj:
                break
            t *= 0.5
        else:
            break
        steps += 1
        stalled = new == obj
        coef, obj = cand, new
        if stalled:
            break
    return coef, steps


def weighted_least_squares(X, y, w, names=None):
    names = names or [f"x{i}" for i in range(X.shape[1])]
    H = (X * w[:, None]).T @ X
    coef = _solve_normal(H, X.T @ (w * y), X, w, names)
    resid = y - X @ coef
    return coef, float(np.sum(w * resid**2) / np.sum(w))


def m_step_regression(weights: np.ndarray, design: RegressionDesign, spec: ModelSpec, theta: ParameterSet, config: EmConfig | None = None) -> ParameterSet:
    """Update intercept, support points and covariate coefficients.

    ``weights`` is the ``(N, T, k1, k2)`` array from :func:`e_step`.
    """
    config = config or EmConfig()
    w = np.asarray(weights).reshape(-1)[design.cell]
    if spec.family == "gaussian":
        coef, s2 = weighted_least_squares(design.X, design.y, w, list(design.columns))
        return with_coefficients(theta, coef, spec, sigma2=s2)
    coef, _ = weighted_logistic(
        design.X,
        design.y,
        w,
        regression_coefficients(theta),
        max_steps=config.newton_max_steps,
        tol=config.newton_tolerance,
        names=list(design.columns),
    )
    return with_coefficients(theta, coef, spec)


# ---------------------------------------------------------------------------
# starts, ordering, driver


def _marginal_location_scale(arrays: PanelArrays, spec: ModelSpec) -> tuple[float, float]:
    y = arrays.y[arrays.mask]
    if spec.family == "gaussian":
        sd = float(y.std()) or 1.0
        return float(y.mean()), sd
    p = float(np.clip(y.mean(), 1e-3, 1 - 1e-3))
    loc = float(logit(p))
    return loc, max(abs(loc), 0.5)


def _initial_transition(k: int, constraint: Constraint, rng=None) -> np.ndarray:
    if k == 1 or constraint is Constraint.DIAGONAL:
        return np.eye(k)
    if constraint is Constraint.TRIDIAGONAL:
        rho = 0.05 if rng is None else rng.uniform(0.01, 0.2)
        return build_tridiagonal(k, rho)
    if rng is None:
        return np.full((k, k), 0.1 / (k - 1)) + np.eye(k) * (0.9 - 0.1 / (k - 1))
    stay = rng.uniform(0.6, 0.95, size=k)
    off = rng.dirichlet(np.ones(k - 1), size=k) * (1 - stay)[:, None]
    mat = np.empty((k, k))
    for r in range(k):
        mat[r] = np.insert(off[r], r, stay[r])
    return mat


def initial_parameters(arrays: PanelArrays, spec: ModelSpec, rng: np.random.Generator | None = None) -> ParameterSet:
    """Deterministic start when ``rng`` is None, otherwise a seeded perturbation of it."""
    loc, scale = _marginal_location_scale(arrays, spec)
    a = np.linspace(-1.0, 1.0, spec.k1) * scale if spec.k1 > 1 else np.zeros(1)
    b = np.linspace(-1.0, 1.0, spec.k2) * scale if spec.k2 > 1 else np.zeros(1)
    lam = np.full(spec.k1, 1.0 / spec.k1)
    pi = np.full(spec.k2, 1.0 / spec.k2)
    if rng is not None:
        a = a + rng.normal(0.0, 0.5 * scale, spec.k1) * (spec.k1 > 1)
        b = b + rng.normal(0.0, 0.5 * scale, spec.k2) * (spec.k2 > 1)
        lam = 0.5 * lam + 0.5 * rng.dirichlet(np.ones(spec.k1))
        pi = 0.5 * pi + 0.5 * rng.dirichlet(np.ones(spec.k2))
    sigma2 = None
    if spec.family == "gaussian":
        sigma2 = scale**2
    return ParameterSet(
        lambda_=lam,
        Lambda=_initial_transition(spec.k1, spec.cluster_transition, rng),
        pi=pi,
        Pi=_initial_transition(spec.k2, spec.unit_transition, rng),
        intercept=loc + a[0] + b[0],
        alpha=a - a[0],
        beta=b - b[0],
        gamma=np.zeros(spec.n_gamma),
        delta=np.zeros(spec.n_delta),
        sigma2=sigma2,
    )


def _order(support: np.ndarray, constraint: Constraint) -> np.ndarray:
    k = len(support)
    if constraint is Constraint.TRIDIAGONAL:
        # only the reversal preserves the band structure
        return np.arange(k)[::-1] if support[-1] < support[0] else np.arange(k)
    return np.argsort(support, kind="stable")


def canonical_order(theta: ParameterSet, spec: ModelSpec):
    """Relabel states by ascending support point; returns ``(theta, cluster_order, unit_order)``.

    Under a tridiagonal constraint the only admissible relabeling is the
    reversal, applied when the last support point is below the first.
    """
    cu = _order(theta.alpha, spec.cluster_transition)
    cv = _order(theta.beta, spec.unit_transition)
    alpha = theta.alpha[cu]
    beta = theta.beta[cv]
    new = replace(
        theta,
        lambda_=theta.lambda_[cu],
        Lambda=theta.Lambda[np.ix_(cu, cu)],
        pi=theta.pi[cv],
        Pi=theta.Pi[np.ix_(cv, cv)],
        intercept=theta.intercept + alpha[0] + beta[0],
        alpha=alpha - alpha[0],
        beta=beta - beta[0],
    )
    return new, cu, cv


@dataclass
class EmRun:
    theta: ParameterSet
    ploglik: float
    trace: list[float]
    n_iterations: int
    converged: bool


def run_em(arrays: PanelArrays, spec: ModelSpec, theta0: ParameterSet, config: EmConfig | None = None, design: RegressionDesign | None = None) -> EmRun:
    """EM from one starting point.

    ``trace[s]`` is the pairwise log-likelihood at the ``s``-th iterate; the
    returned ``theta`` is the last evaluated iterate.
    """
    config = config or EmConfig()
    design = design or regression_design(arrays, spec)
    check_parameters(theta0, spec)
    theta = theta0
    trace: list[float] = []
    converged = False
    for it in range(config.max_iterations + 1):
        counts = e_step(arrays, spec, theta, threads=config.threads)
        evaluated = theta
        pl = counts.ploglik
        trace.append(pl)
        if it > 0:
            if pl < trace[-2] - 1e-10:
                log.warning("pairwise log-likelihood decreased by %.3g at iteration %d", trace[-2] - pl, it)
            if abs(pl - trace[-2]) / (abs(pl) + 1.0) < config.rel_tolerance:
                converged = True
                break
        if it == config.max_iterations:
            break
        lam, Lam = m_step_chain(counts.lambda_counts, counts.Lambda_counts, spec.cluster_transition, theta.Lambda)
        pi, Pi = m_step_chain(counts.pi_counts, counts.Pi_counts, spec.unit_transition, theta.Pi)
        theta = replace(theta, lambda_=lam, Lambda=Lam, pi=pi, Pi=Pi)
        theta = m_step_regression(counts.unit_weights, design, spec, theta, config)
    return EmRun(theta=evaluated, ploglik=trace[-1], trace=trace, n_iterations=len(trace) - 1, converged=converged)


@dataclass
class FitResult:
    theta_hat: ParameterSet
    ploglik: float
    n_iterations: int
    converged: bool
    trace: list[float]
    start_ploglik: list[float]
    start_converged: list[bool]
    start_errors: list[str | None]
    start_traces: list[list[float]]
    cluster_order: list[int]
    unit_order: list[int]
    spec: ModelSpec
    config: EmConfig = field(default_factory=EmConfig)


def fit(data, spec: ModelSpec, config: EmConfig | None = None) -> FitResult:
    """Fit by EM from one deterministic and ``n_random_starts`` random starts.

    The start with the highest final pairwise log-likelihood wins. Starts that
    fail with a numerical error are recorded and skipped.
    """
    config = config or EmConfig()
    arrays = as_arrays(data, spec)
    design = regression_design(arrays, spec)
    rng = np.random.default_rng(config.random_seed)
    starts = [initial_parameters(arrays, spec)]
    starts += [initial_parameters(arrays, spec, rng) for _ in range(config.n_random_starts)]
    runs: list[EmRun | None] = []
    errors: list[str | None] = []
    for s, theta0 in enumerate(starts):
        try:
            run = run_em(arrays, spec, theta0, config, design)
            runs.append(run)
            errors.append(None)
            log.info("start %d: pl=%.6f iterations=%d converged=%s", s, run.ploglik, run.n_iterations, run.converged)
        except NestedHMMError as err:
            runs.append(None)
            errors.append(f"{err.code}: {err}")
            log.info("start %d failed: %s", s, err)
    ok = [r for r in runs if r is not None]
    if not ok:
        raise NestedHMMError(f"every start failed: {errors}", errors=errors)
    best = max(ok, key=lambda r: r.ploglik)
    theta, cu, cv = canonical_order(best.theta, spec)
    pl = pairwise_loglik(arrays, spec, theta)
    return FitResult(
        theta_hat=theta,
        ploglik=pl,
        n_iterations=best.n_iterations,
        converged=best.converged,
        trace=best.trace,
        start_ploglik=[r.ploglik if r is not None else math.nan for r in runs],
        start_converged=[bool(r.converged) if r is not None else False for r in runs],
        start_errors=errors,
        start_traces=[r.trace if r is not None else [] for r in runs],
        cluster_order=cu.tolist(),
        unit_order=cv.tolist(),
        spec=spec,
        config=config,
    )
