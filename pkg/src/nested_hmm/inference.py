"""Sandwich standard errors, CLIC and selection over state-count grids.

Scores use the Fisher identity: the gradient of a cluster's pairwise
log-likelihood equals the gradient of its expected complete-data pairwise
log-likelihood, with posteriors held at the evaluation point. All derivatives
are taken on the free (unconstrained) scale of
:func:`nested_hmm.model.flatten_parameters`.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.special import expit

from nested_hmm.chain import tridiagonal_rho
from nested_hmm.em import (
    EmConfig,
    FitResult,
    as_arrays,
    e_step,
    fit,
    regression_coefficients,
    regression_design,
    tridiagonal_counts,
)
from nested_hmm.errors import NestedHMMError
from nested_hmm.model import (
    Constraint,
    ModelSpec,
    ParameterSet,
    flatten_parameters,
    n_free_parameters,
    natural_parameters,
    parameter_blocks,
    parameter_names,
    unflatten_parameters,
)

log = logging.getLogger(__name__)

RCOND_MIN = 1e-12


def _initial_score(counts: np.ndarray, probs: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=1, keepdims=True)
    return (counts - total * probs)[:, 1:]


def _transition_score(counts: np.ndarray, mat: np.ndarray, constraint: Constraint) -> np.ndarray:
    H, k, _ = counts.shape
    if k == 1 or constraint is Constraint.DIAGONAL:
        return np.zeros((H, 0))
    if constraint is Constraint.TRIDIAGONAL:
        rho = tridiagonal_rho(mat)
        out = np.empty((H, 1))
        for h in range(H):
            A, B, C = tridiagonal_counts(counts[h])
            d_rho = A / rho - B / (1 - rho) - 2 * C / (1 - 2 * rho)
            out[h, 0] = d_rho * rho * (1 - 2 * rho)
        return out
    rows = counts.sum(axis=2, keepdims=True)
    return (counts - rows * mat[None])[:, :, 1:].reshape(H, -1)


def cluster_scores(data, spec: ModelSpec, theta: ParameterSet, threads: int = 1) -> np.ndarray:
    """Per-cluster gradients of the pairwise log-likelihood, shape ``(H, p)``."""
    arrays = as_arrays(data, spec)
    design = regression_design(arrays, spec)
    counts = e_step(arrays, spec, theta, threads=threads)
    blocks = parameter_blocks(spec)
    H = arrays.n_clusters
    scores = np.zeros((H, n_free_parameters(spec)))

    w = counts.unit_weights.reshape(-1)[design.cell]
    eta = design.X @ regression_coefficients(theta)
    row_cluster = arrays.unit_cluster[design.unit]
    R = len(row_cluster)
    to_cluster = sp.csr_matrix((np.ones(R), (row_cluster, np.arange(R))), shape=(H, R))
    n_coef = design.X.shape[1]
    if spec.family == "bernoulli":
        contrib = design.X * (w * (design.y - expit(eta)))[:, None]
        scores[:, :n_coef] = to_cluster @ contrib
    else:
        s2 = theta.sigma2
        resid = design.y - eta
        contrib = design.X * (w * resid / s2)[:, None]
        scores[:, :n_coef] = to_cluster @ contrib
        scores[:, blocks["log_sigma2"]] = (to_cluster @ (w * (0.5 * resid**2 / s2 - 0.5)))[:, None]

    scores[:, blocks["lambda"]] = _initial_score(counts.cluster_initial, theta.lambda_)
    scores[:, blocks["Lambda"]] = _transition_score(counts.cluster_transitions, theta.Lambda, spec.cluster_transition)
    scores[:, blocks["pi"]] = _initial_score(counts.unit_initial, theta.pi)
    scores[:, blocks["Pi"]] = _transition_score(counts.unit_transitions, theta.Pi, spec.unit_transition)
    return scores


def total_score(data, spec: ModelSpec, theta: ParameterSet, threads: int = 1) -> np.ndarray:
    return cluster_scores(data, spec, theta, threads).sum(axis=0)


def numerical_information(data, spec: ModelSpec, theta: ParameterSet, threads: int = 1):
    """Negative Hessian by central differences of the analytic total score.

    Returns ``(J, asymmetry)`` where ``J`` is symmetrized and ``asymmetry`` is
    ``max|J - J'| / max|J|`` before symmetrization.
    """
    arrays = as_arrays(data, spec)
    x0 = flatten_parameters(theta, spec)
    p = len(x0)
    hess = np.empty((p, p))
    for j in range(p):
        h = max(1e-5, 1e-5 * abs(x0[j]))
        up, down = x0.copy(), x0.copy()
        up[j] += h
        down[j] -= h
        s_up = total_score(arrays, spec, unflatten_parameters(up, spec), threads)
        s_down = total_score(arrays, spec, unflatten_parameters(down, spec), threads)
        hess[:, j] = (s_up - s_down) / (2 * h)
    J = -hess
    scale = np.abs(J).max() if p else 0.0
    asym = float(np.abs(J - J.T).max() / scale) if scale > 0 else 0.0
    return 0.5 * (J + J.T), asym


@dataclass
class InferenceReport:
    """Sandwich inference at a fitted point.

    ``covariance`` is ``None`` when the information matrix is numerically
    singular; ``clic`` is then NaN.
    """

    names: list[str]
    estimates: np.ndarray
    covariance: np.ndarray | None
    se: np.ndarray
    z: np.ndarray
    pvalues: np.ndarray
    J: np.ndarray
    K: np.ndarray
    ploglik: float
    penalty: float
    clic: float
    rcond: float
    asymmetry: float
    natural_names: list[str]
    natural_estimates: np.ndarray
    natural_se: np.ndarray

    def table(self, natural: bool = True) -> list[tuple[str, float, float, float, float]]:
        """Rows of (parameter, estimate, s.e., z, p-value).

        With ``natural`` the regression coefficients are followed by the
        probabilities and rho on their own scale, with delta-method s.e.
        """
        if not natural:
            return list(zip(self.names, self.estimates, self.se, self.z, self.pvalues))
        se = self.natural_se
        # fixed quantities (e.g. a single-state probability) have zero s.e.
        z = np.divide(self.natural_estimates, se, out=np.full_like(se, np.nan), where=se > 0)
        pv = 2 * stats.norm.sf(np.abs(z))
        return list(zip(self.natural_names, self.natural_estimates, self.natural_se, z, pv))


def _natural_jacobian(x0: np.ndarray, spec: ModelSpec, step: float = 1e-6) -> np.ndarray:
    base = natural_parameters(unflatten_parameters(x0, spec), spec)[1]
    G = np.empty((len(base), len(x0)))
    for j in range(len(x0)):
        up, down = x0.copy(), x0.copy()
        up[j] += step
        down[j] -= step
        G[:, j] = (
            natural_parameters(unflatten_parameters(up, spec), spec)[1]
            - natural_parameters(unflatten_parameters(down, spec), spec)[1]
        ) / (2 * step)
    return G


def sandwich(data, spec: ModelSpec, theta_hat: ParameterSet, threads: int = 1, ploglik: float | None = None) -> InferenceReport:
    """Godambe sandwich covariance, Wald statistics and CLIC at ``theta_hat``."""
    arrays = as_arrays(data, spec)
    S = cluster_scores(arrays, spec, theta_hat, threads)
    K = S.T @ S
    J, asym = numerical_information(arrays, spec, theta_hat, threads)
    if ploglik is None:
        ploglik = float(e_step(arrays, spec, theta_hat, threads).ploglik)
    x0 = flatten_parameters(theta_hat, spec)
    names = parameter_names(spec)
    nat_names, nat_vals = natural_parameters(theta_hat, spec)
    p = len(x0)
    cond = np.linalg.cond(J) if p else 1.0
    rcond = 1.0 / cond if np.isfinite(cond) and cond > 0 else 0.0
    if asym > 1e-4:
        log.info("information matrix asymmetry %.3g before symmetrization", asym)
    nan_p = np.full(p, np.nan)
    if rcond < RCOND_MIN:
        log.warning("information matrix is numerically singular (rcond=%.3g)", rcond)
        return InferenceReport(
            names, x0, None, nan_p, nan_p, nan_p, J, K, ploglik, math.nan, math.nan, rcond, asym,
            nat_names, nat_vals, np.full(len(nat_vals), np.nan),
        )
    J_inv = np.linalg.inv(J)
    cov = J_inv @ K @ J_inv
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = x0 / se
    pvalues = 2 * stats.norm.sf(np.abs(z))
    penalty = float(np.trace(K @ J_inv))
    G = _natural_jacobian(x0, spec)
    nat_se = np.sqrt(np.maximum(np.diag(G @ cov @ G.T), 0.0))
    return InferenceReport(
        names, x0, cov, se, z, pvalues, J, K, ploglik, penalty, ploglik - penalty, rcond, asym,
        nat_names, nat_vals, nat_se,
    )


def clic(data, spec: ModelSpec, theta_hat: ParameterSet, threads: int = 1) -> float:
    """Composite likelihood information criterion; larger is better."""
    return sandwich(data, spec, theta_hat, threads).clic


# ---------------------------------------------------------------------------
# model selection


@dataclass
class GridCell:
    k1: int
    k2: int
    spec: ModelSpec
    fit: FitResult | None
    report: InferenceReport | None
    clic: float
    error: str | None = None


@dataclass
class GridResult:
    k1_values: list[int]
    k2_values: list[int]
    cells: dict[tuple[int, int], GridCell]
    best: tuple[int, int] | None

    def clic_table(self) -> np.ndarray:
        """CLIC values with rows indexed by k1 and columns by k2."""
        return np.array([[self.cells[(a, b)].clic for b in self.k2_values] for a in self.k1_values])


def spec_for(template: ModelSpec, k1: int, k2: int) -> ModelSpec:
    """``template`` with new state counts; a one-state chain drops its constraint."""
    ct = template.cluster_transition if k1 > 1 else Constraint.UNCONSTRAINED
    ut = template.unit_transition if k2 > 1 else Constraint.UNCONSTRAINED
    return replace(template, k1=k1, k2=k2, cluster_transition=ct, unit_transition=ut)


def _fit_cell(args) -> GridCell:
    data, spec, config, key = args
    try:
        arrays = as_arrays(data, spec)
        result = fit(arrays, spec, config)
        report = sandwich(arrays, spec, result.theta_hat, config.threads, ploglik=result.ploglik)
        return GridCell(key[0], key[1], spec, result, report, report.clic)
    except NestedHMMError as err:
        return GridCell(key[0], key[1], spec, None, None, math.nan, f"{err.code}: {err}")


def _run_cells(jobs, workers: int) -> list[GridCell]:
    if workers <= 1 or len(jobs) == 1:
        return [_fit_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit_cell, jobs))


def select_grid(data, k1_values, k2_values, template: ModelSpec, config: EmConfig | None = None, workers: int = 1) -> GridResult:
    """Fit every ``(k1, k2)`` cell and flag the largest CLIC.

    Cells are fitted independently (in ``workers`` processes when > 1); a cell
    that fails is kept with NaN CLIC and its error message.
    """
    config = config or EmConfig()
    k1_values, k2_values = list(k1_values), list(k2_values)
    if not k1_values or not k2_values:
        raise ValueError("state-count ranges must be nonempty")
    keys = [(a, b) for a in k1_values for b in k2_values]
    jobs = [(data, spec_for(template, a, b), config, (a, b)) for a, b in keys]
    cells = dict(zip(keys, _run_cells(jobs, workers)))
    finite = [k for k in keys if np.isfinite(cells[k].clic)]
    best = max(finite, key=lambda k: cells[k].clic) if finite else None
    return GridResult(k1_values, k2_values, cells, best)


def compare_constraints(data, specs: dict[str, ModelSpec], config: EmConfig | None = None, workers: int = 1) -> dict[str, GridCell]:
    """Fit alternative parameterizations (e.g. diagonal vs tridiagonal) and report each CLIC."""
    config = config or EmConfig()
    jobs = [(data, s, config, (s.k1, s.k2)) for s in specs.values()]
    return dict(zip(specs, _run_cells(jobs, workers)))
