"""Panel data, model specification and parameter containers.

The free-parameter vector used for scores, Hessians and the sandwich
covariance is laid out as::

    intercept
    alpha[2..k1]           cluster support points (alpha[1] == 0)
    beta[2..k2]            unit support points (beta[1] == 0)
    gamma                  cluster-covariate coefficients
    delta                  unit-covariate coefficients
    log(sigma2)            gaussian family only
    log(lambda[u] / lambda[1]),            u = 2..k1
    cluster transitions    see below
    log(pi[v] / pi[1]),                    v = 2..k2
    unit transitions       see below

Transitions contribute ``log(P[r, c] / P[r, 1])`` for every row ``r`` and
``c >= 2`` when unconstrained (row-major), ``logit(2 rho)`` when tridiagonal
and nothing when diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Hashable, Sequence

import numpy as np
import scipy.sparse as sp

from nested_hmm.chain import (
    RHO_MAX,
    RHO_MIN,
    build_tridiagonal,
    is_tridiagonal_constant,
    rho_from_free,
    rho_to_free,
    tridiagonal_rho,
)
from nested_hmm.errors import ConfigError, DataError, ParameterError

FAMILIES = ("bernoulli", "gaussian")
LAG_HANDLING = ("none", "zero-fill", "condition-on-first")
LAG_COLUMN = "lag_response"
_LOG_FLOOR = 1e-300


class Constraint(str, Enum):
    UNCONSTRAINED = "unconstrained"
    TRIDIAGONAL = "tridiagonal"
    DIAGONAL = "diagonal"


def _frozen_array(a, dtype=float, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UnitData:
    unit_id: Hashable
    responses: np.ndarray
    unit_covariates: np.ndarray
    measurement_mask: np.ndarray | None = None

    def __post_init__(self):
        y = _frozen_array(self.responses, ndim=1)
        z = np.asarray(self.unit_covariates, dtype=float)
        if z.ndim == 1 and z.size == 0:
            z = z.reshape(len(y), 0)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "unit_covariates", _frozen_array(z))
        mask = self.measurement_mask
        mask = np.ones(len(y), dtype=bool) if mask is None else mask
        object.__setattr__(self, "measurement_mask", _frozen_array(mask, dtype=bool))


@dataclass(frozen=True)
class ClusterData:
    cluster_id: Hashable
    cluster_covariates: np.ndarray
    units: tuple[UnitData, ...]

    def __post_init__(self):
        x = np.asarray(self.cluster_covariates, dtype=float)
        object.__setattr__(self, "cluster_covariates", _frozen_array(x))
        object.__setattr__(self, "units", tuple(self.units))


@dataclass(frozen=True)
class PanelDataset:
    clusters: tuple[ClusterData, ...]
    T: int
    unit_covariate_names: tuple[str, ...] = ()
    cluster_covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "unit_covariate_names", tuple(self.unit_covariate_names))
        object.__setattr__(self, "cluster_covariate_names", tuple(self.cluster_covariate_names))

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_units(self) -> int:
        return sum(len(c.units) for c in self.clusters)


@dataclass(frozen=True)
class ModelSpec:
    """Latent structure, measurement family and covariate selection.

    ``unit_covariates`` and ``cluster_covariates`` name the dataset columns
    entering the linear predictor. Any ``lag_handling`` other than ``"none"``
    appends the derived ``lag_response`` column to the unit covariates.
    ``strict_pairs`` drops singleton clusters from the pairwise sum instead of
    scoring their unit-marginal likelihood.
    """

    k1: int = 1
    k2: int = 1
    cluster_transition: Constraint = Constraint.UNCONSTRAINED
    unit_transition: Constraint = Constraint.UNCONSTRAINED
    family: str = "bernoulli"
    lag_handling: str = "none"
    unit_covariates: tuple[str, ...] = ()
    cluster_covariates: tuple[str, ...] = ()
    strict_pairs: bool = False

    def __post_init__(self):
        for name in ("cluster_transition", "unit_transition"):
            value = getattr(self, name)
            try:
                object.__setattr__(self, name, Constraint(value))
            except ValueError:
                raise ConfigError(f"unknown transition constraint {value!r}") from None
        object.__setattr__(self, "unit_covariates", tuple(self.unit_covariates))
        object.__setattr__(self, "cluster_covariates", tuple(self.cluster_covariates))
        if int(self.k1) < 1 or int(self.k2) < 1:
            raise ConfigError(f"state counts must be >= 1, got k1={self.k1}, k2={self.k2}")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.lag_handling not in LAG_HANDLING:
            raise ConfigError(f"lag_handling must be one of {LAG_HANDLING}, got {self.lag_handling!r}")
        for k, c, label in ((self.k1, self.cluster_transition, "cluster"), (self.k2, self.unit_transition, "unit")):
            if c is Constraint.TRIDIAGONAL and k < 2:
                raise ConfigError(f"tridiagonal {label} transitions need at least 2 states")
        if self.lag_handling != "none" and LAG_COLUMN in self.unit_covariates:
            raise ConfigError(f"{LAG_COLUMN!r} is derived from lag_handling; do not list it as a covariate")

    @property
    def effective_unit_covariates(self) -> tuple[str, ...]:
        if self.lag_handling == "none":
            return self.unit_covariates
        return self.unit_covariates + (LAG_COLUMN,)

    @property
    def n_gamma(self) -> int:
        return len(self.cluster_covariates)

    @property
    def n_delta(self) -> int:
        return len(self.effective_unit_covariates)


@dataclass(frozen=True)
class ParameterSet:
    lambda_: np.ndarray
    Lambda: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray
    intercept: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma2: float | None = None

    def __post_init__(self):
        for name in ("lambda_", "Lambda", "pi", "Pi", "alpha", "beta", "gamma", "delta"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        object.__setattr__(self, "intercept", float(self.intercept))
        if self.sigma2 is not None:
            object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def k1(self) -> int:
        return self.lambda_.shape[0]

    @property
    def k2(self) -> int:
        return self.pi.shape[0]


def check_parameters(theta: ParameterSet, spec: ModelSpec) -> None:
    """Raise ``ParameterError`` unless ``theta`` satisfies every invariant for ``spec``."""
    problems = []
    k1, k2 = spec.k1, spec.k2
    shapes = {
        "lambda_": (k1,),
        "Lambda": (k1, k1),
        "pi": (k2,),
        "Pi": (k2, k2),
        "alpha": (k1,),
        "beta": (k2,),
        "gamma": (spec.n_gamma,),
        "delta": (spec.n_delta,),
    }
    for name, shape in shapes.items():
        if getattr(theta, name).shape != shape:
            problems.append(f"{name} has shape {getattr(theta, name).shape}, expected {shape}")
    if problems:
        raise ParameterError("; ".join(problems))
    for name in ("lambda_", "pi"):
        v = getattr(theta, name)
        if np.any(v < 0) or np.any(v > 1) or abs(v.sum() - 1.0) > 1e-12:
            problems.append(f"{name} is not a probability vector")
    for name, constraint in (("Lambda", spec.cluster_transition), ("Pi", spec.unit_transition)):
        m = getattr(theta, name)
        if np.any(m < 0) or np.any(m > 1) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            problems.append(f"{name} is not row-stochastic")
        elif constraint is Constraint.DIAGONAL and not np.array_equal(m, np.eye(len(m))):
            problems.append(f"{name} must be the identity under the diagonal constraint")
        elif constraint is Constraint.TRIDIAGONAL and not is_tridiagonal_constant(m):
            problems.append(f"{name} is not tridiagonal with constant off-diagonal")
    if theta.alpha[0] != 0.0 or theta.beta[0] != 0.0:
        problems.append("alpha[1] and beta[1] must be exactly 0")
    if spec.family == "gaussian":
        if theta.sigma2 is None or not theta.sigma2 > 0:
            problems.append("sigma2 must be positive for the gaussian family")
    elif theta.sigma2 is not None:
        problems.append("sigma2 is only defined for the gaussian family")
    if not all(np.all(np.isfinite(getattr(theta, n))) for n in ("alpha", "beta", "gamma", "delta")):
        problems.append("regression coefficients must be finite")
    if problems:
        raise ParameterError("; ".join(problems), problems=problems)


# ---------------------------------------------------------------------------
# dataset validation


def _derive_lag(unit: UnitData, names: tuple[str, ...], mask_first: bool) -> tuple[UnitData, tuple[str, ...]]:
    lag = np.concatenate([[0.0], unit.responses[:-1]])
    z = np.asarray(unit.unit_covariates)
    if LAG_COLUMN in names:
        col = names.index(LAG_COLUMN)
        z = z.copy()
        z[:, col] = lag
    else:
        z = np.column_stack([z, lag])
        names = names + (LAG_COLUMN,)
    mask = np.array(unit.measurement_mask, dtype=bool)
    if mask_first:
        mask[0] = False
    return replace(unit, unit_covariates=z, measurement_mask=mask), names


def validate_dataset(data: PanelDataset, spec: ModelSpec) -> PanelDataset:
    """Check panel invariants and apply the lag handling of ``spec``.

    Returns a new dataset. Under ``condition-on-first`` every unit has its
    first measurement masked; any lag handling other than ``none`` adds the
    ``lag_response`` unit covariate (zero at the first occasion).

    Raises:
        DataError: with a ``problems`` list naming cluster/unit/occasion.
    """
    problems: list[str] = []
    T = int(data.T)
    if T < 1:
        raise DataError(f"T must be >= 1, got {T}")
    if not data.clusters:
        raise DataError("dataset has no clusters")
    q = len(data.unit_covariate_names)
    r = len(data.cluster_covariate_names)
    missing_unit = [c for c in spec.unit_covariates if c not in data.unit_covariate_names]
    missing_cluster = [c for c in spec.cluster_covariates if c not in data.cluster_covariate_names]
    for c in missing_unit:
        problems.append(f"unknown unit covariate {c!r}")
    for c in missing_cluster:
        problems.append(f"unknown cluster covariate {c!r}")
    seen_clusters = set()
    for cluster in data.clusters:
        cid = cluster.cluster_id
        if cid in seen_clusters:
            problems.append(f"duplicate cluster id {cid!r}")
        seen_clusters.add(cid)
        x = cluster.cluster_covariates
        if x.shape != (T, r):
            problems.append(f"cluster {cid!r}: cluster covariates have shape {x.shape}, expected {(T, r)}")
        elif not np.all(np.isfinite(x)):
            bad_t = sorted({int(t) + 1 for t in np.argwhere(~np.isfinite(x))[:, 0]})
            problems.append(f"cluster {cid!r}: missing or non-finite cluster covariate at t={bad_t}")
        if len(cluster.units) < 1:
            problems.append(f"cluster {cid!r} has no units")
        seen_units = set()
        for unit in cluster.units:
            uid = unit.unit_id
            where = f"cluster {cid!r}, unit {uid!r}"
            if uid in seen_units:
                problems.append(f"{where}: duplicate unit id within cluster")
            seen_units.add(uid)
            y = unit.responses
            if y.shape != (T,):
                problems.append(f"{where}: has {y.shape[0]} responses, expected T={T}")
                continue
            if unit.unit_covariates.shape != (T, q):
                problems.append(f"{where}: unit covariates have shape {unit.unit_covariates.shape}, expected {(T, q)}")
            elif not np.all(np.isfinite(unit.unit_covariates)):
                bad_t = sorted({int(t) + 1 for t in np.argwhere(~np.isfinite(unit.unit_covariates))[:, 0]})
                problems.append(f"{where}: missing or non-finite unit covariate at t={bad_t}")
            if unit.measurement_mask.shape != (T,) or not unit.measurement_mask.any():
                problems.append(f"{where}: measurement mask must have T entries with at least one true")
            for t in np.flatnonzero(~np.isfinite(y)):
                problems.append(f"{where}, t={t + 1}: missing or non-finite response")
            if spec.family == "bernoulli":
                for t in np.flatnonzero(np.isfinite(y) & (y != 0) & (y != 1)):
                    problems.append(f"{where}, t={t + 1}: response {y[t]!r} is not binary")
    if problems:
        raise DataError(f"{len(problems)} problem(s) in dataset: {problems[0]}", problems=problems)

    if spec.lag_handling == "none":
        return data
    mask_first = spec.lag_handling == "condition-on-first"
    if mask_first and T < 2:
        raise DataError("condition-on-first lag handling needs T >= 2")
    names = data.unit_covariate_names
    clusters = []
    for cluster in data.clusters:
        units = []
        for unit in cluster.units:
            new_unit, new_names = _derive_lag(unit, data.unit_covariate_names, mask_first)
            units.append(new_unit)
            names = new_names
        clusters.append(replace(cluster, units=tuple(units)))
    return PanelDataset(
        clusters=tuple(clusters),
        T=T,
        unit_covariate_names=names,
        cluster_covariate_names=data.cluster_covariate_names,
    )


@dataclass(frozen=True)
class PanelArrays:
    """Dense array view of a validated panel, used by the numerical routines.

    Pairs are ordered by cluster, then ``i < j`` within a cluster. A partner of
    ``-1`` is the fully masked stand-in used for singleton clusters.
    """

    y: np.ndarray  # (N, T)
    mask: np.ndarray  # (N, T)
    x: np.ndarray  # (N, T, r), cluster covariates repeated per unit
    z: np.ndarray  # (N, T, q)
    unit_cluster: np.ndarray  # (N,)
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_cluster: np.ndarray
    n_clusters: int
    cluster_ids: tuple
    unit_ids: tuple

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.pair_i.shape[0]

    def pair_to_cluster(self) -> sp.csr_matrix:
        P = self.n_pairs
        return sp.csr_matrix((np.ones(P), (self.pair_cluster, np.arange(P))), shape=(self.n_clusters, P))

    def unit_to_cluster(self) -> sp.csr_matrix:
        N = self.n_units
        return sp.csr_matrix((np.ones(N), (self.unit_cluster, np.arange(N))), shape=(self.n_clusters, N))

    def pair_coordinates(self, p: int) -> dict:
        i, j = int(self.pair_i[p]), int(self.pair_j[p])
        return {
            "cluster": self.cluster_ids[self.pair_cluster[p]],
            "unit_i": self.unit_ids[i][1],
            "unit_j": None if j < 0 else self.unit_ids[j][1],
        }


def panel_arrays(data: PanelDataset, spec: ModelSpec) -> PanelArrays:
    """Select the covariates named in ``spec`` and enumerate within-cluster pairs.

    ``data`` must already have passed :func:`validate_dataset` with ``spec``.
    """
    ucols = [data.unit_covariate_names.index(c) for c in spec.effective_unit_covariates]
    ccols = [data.cluster_covariate_names.index(c) for c in spec.cluster_covariates]
    T = data.T
    ys, masks, xs, zs, owner, unit_ids = [], [], [], [], [], []
    pair_i, pair_j, pair_c = [], [], []
    n = 0
    for h, cluster in enumerate(data.clusters):
        start = n
        xh = cluster.cluster_covariates[:, ccols] if ccols else np.zeros((T, 0))
        for unit in cluster.units:
            ys.append(unit.responses)
            masks.append(unit.measurement_mask)
            zs.append(unit.unit_covariates[:, ucols] if ucols else np.zeros((T, 0)))
            xs.append(xh)
            owner.append(h)
            unit_ids.append((cluster.cluster_id, unit.unit_id))
            n += 1
        size = n - start
        if size == 1:
            if not spec.strict_pairs:
                pair_i.append(start)
                pair_j.append(-1)
                pair_c.append(h)
            continue
        for a in range(start, n):
            for b in range(a + 1, n):
                pair_i.append(a)
                pair_j.append(b)
                pair_c.append(h)
    if not pair_i:
        raise DataError("no within-cluster pairs to score (every cluster has one unit and strict_pairs is set)")
    return PanelArrays(
        y=np.asarray(ys, dtype=float),
        mask=np.asarray(masks, dtype=bool),
        x=np.asarray(xs, dtype=float).reshape(n, T, len(ccols)),
        z=np.asarray(zs, dtype=float).reshape(n, T, len(ucols)),
        unit_cluster=np.asarray(owner, dtype=np.intp),
        pair_i=np.asarray(pair_i, dtype=np.intp),
        pair_j=np.asarray(pair_j, dtype=np.intp),
        pair_cluster=np.asarray(pair_c, dtype=np.intp),
        n_clusters=data.n_clusters,
        cluster_ids=tuple(c.cluster_id for c in data.clusters),
        unit_ids=tuple(unit_ids),
    )


# ---------------------------------------------------------------------------
# flat parameterization


def _transition_free_count(k: int, constraint: Constraint) -> int:
    if k == 1 or constraint is Constraint.DIAGONAL:
        return 0
    if constraint is Constraint.TRIDIAGONAL:
        return 1
    return k * (k - 1)


def n_regression_parameters(spec: ModelSpec) -> int:
    n = 1 + (spec.k1 - 1) + (spec.k2 - 1) + spec.n_gamma + spec.n_delta
    return n + (1 if spec.family == "gaussian" else 0)


def n_free_parameters(spec: ModelSpec) -> int:
    return (
        n_regression_parameters(spec)
        + (spec.k1 - 1)
        + _transition_free_count(spec.k1, spec.cluster_transition)
        + (spec.k2 - 1)
        + _transition_free_count(spec.k2, spec.unit_transition)
    )


def parameter_blocks(spec: ModelSpec) -> dict[str, slice]:
    """Slices of the free vector, keyed by block name, in layout order."""
    sizes = [
        ("intercept", 1),
        ("alpha", spec.k1 - 1),
        ("beta", spec.k2 - 1),
        ("gamma", spec.n_gamma),
        ("delta", spec.n_delta),
        ("log_sigma2", 1 if spec.family == "gaussian" else 0),
        ("lambda", spec.k1 - 1),
        ("Lambda", _transition_free_count(spec.k1, spec.cluster_transition)),
        ("pi", spec.k2 - 1),
        ("Pi", _transition_free_count(spec.k2, spec.unit_transition)),
    ]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out


def parameter_names(spec: ModelSpec) -> list[str]:
    """Labels of the free vector entries (1-based state indices)."""
    names = ["intercept"]
    names += [f"alpha[{u}]" for u in range(2, spec.k1 + 1)]
    names += [f"beta[{v}]" for v in range(2, spec.k2 + 1)]
    names += [f"gamma[{c}]" for c in spec.cluster_covariates]
    names += [f"delta[{c}]" for c in spec.effective_unit_covariates]
    if spec.family == "gaussian":
        names.append("log_sigma2")
    names += [f"log(lambda[{u}]/lambda[1])" for u in range(2, spec.k1 + 1)]
    names += _transition_names("Lambda", "rho_cluster", spec.k1, spec.cluster_transition)
    names += [f"log(pi[{v}]/pi[1])" for v in range(2, spec.k2 + 1)]
    names += _transition_names("Pi", "rho_unit", spec.k2, spec.unit_transition)
    return names


def _transition_names(mat: str, rho: str, k: int, constraint: Constraint) -> list[str]:
    n = _transition_free_count(k, constraint)
    if n == 0:
        return []
    if constraint is Constraint.TRIDIAGONAL:
        return [f"logit(2*{rho})"]
    return [f"log({mat}[{r},{c}]/{mat}[{r},1])" for r in range(1, k + 1) for c in range(2, k + 1)]


def _log_ratios(p: np.ndarray) -> np.ndarray:
    logs = np.log(np.maximum(p, _LOG_FLOOR))
    return logs[..., 1:] - logs[..., :1]


def _softmax_from_ratios(eta: np.ndarray) -> np.ndarray:
    full = np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)
    full = full - full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def _transition_to_free(mat: np.ndarray, constraint: Constraint) -> np.ndarray:
    k = mat.shape[0]
    if _transition_free_count(k, constraint) == 0:
        return np.zeros(0)
    if constraint is Constraint.TRIDIAGONAL:
        return np.array([rho_to_free(tridiagonal_rho(mat))])
    return _log_ratios(mat).ravel()


def _transition_from_free(vals: np.ndarray, k: int, constraint: Constraint) -> np.ndarray:
    if k == 1 or constraint is Constraint.DIAGONAL:
        return np.eye(k)
    if constraint is Constraint.TRIDIAGONAL:
        rho = min(max(rho_from_free(vals[0]), RHO_MIN), RHO_MAX)
        return build_tridiagonal(k, rho)
    return _softmax_from_ratios(vals.reshape(k, k - 1))


def flatten_parameters(theta: ParameterSet, spec: ModelSpec) -> np.ndarray:
    check_parameters(theta, spec)
    parts = [
        [theta.intercept],
        theta.alpha[1:],
        theta.beta[1:],
        theta.gamma,
        theta.delta,
        [math.log(theta.sigma2)] if spec.family == "gaussian" else [],
        _log_ratios(theta.lambda_),
        _transition_to_free(theta.Lambda, spec.cluster_transition),
        _log_ratios(theta.pi),
        _transition_to_free(theta.Pi, spec.unit_transition),
    ]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unflatten_parameters(vec: Sequence[float], spec: ModelSpec) -> ParameterSet:
    vec = np.asarray(vec, dtype=float)
    blocks = parameter_blocks(spec)
    if vec.shape != (n_free_parameters(spec),):
        raise ParameterError(f"free vector has length {vec.shape}, expected {n_free_parameters(spec)}")
    return ParameterSet(
        lambda_=_softmax_from_ratios(vec[blocks["lambda"]]),
        Lambda=_transition_from_free(vec[blocks["Lambda"]], spec.k1, spec.cluster_transition),
        pi=_softmax_from_ratios(vec[blocks["pi"]]),
        Pi=_transition_from_free(vec[blocks["Pi"]], spec.k2, spec.unit_transition),
        intercept=vec[0],
        alpha=np.concatenate([[0.0], vec[blocks["alpha"]]]),
        beta=np.concatenate([[0.0], vec[blocks["beta"]]]),
        gamma=vec[blocks["gamma"]],
        delta=vec[blocks["delta"]],
        sigma2=math.exp(vec[blocks["log_sigma2"]][0]) if spec.family == "gaussian" else None,
    )


def natural_parameters(theta: ParameterSet, spec: ModelSpec) -> tuple[list[str], np.ndarray]:
    """Reporting-scale parameters: coefficients, probabilities and rho."""
    names = ["intercept"]
    vals = [theta.intercept]
    for u in range(2, spec.k1 + 1):
        names.append(f"alpha[{u}]")
        vals.append(theta.alpha[u - 1])
    for v in range(2, spec.k2 + 1):
        names.append(f"beta[{v}]")
        vals.append(theta.beta[v - 1])
    for c, g in zip(spec.cluster_covariates, theta.gamma):
        names.append(f"gamma[{c}]")
        vals.append(g)
    for c, d in zip(spec.effective_unit_covariates, theta.delta):
        names.append(f"delta[{c}]")
        vals.append(d)
    if spec.family == "gaussian":
        names.append("sigma2")
        vals.append(theta.sigma2)
    for label, init, mat, rho, constraint in (
        ("lambda", theta.lambda_, theta.Lambda, "rho_cluster", spec.cluster_transition),
        ("pi", theta.pi, theta.Pi, "rho_unit", spec.unit_transition),
    ):
        k = len(init)
        for s in range(k):
            names.append(f"{label}[{s + 1}]")
            vals.append(init[s])
        if k > 1 and constraint is Constraint.TRIDIAGONAL:
            names.append(rho)
            vals.append(tridiagonal_rho(mat))
        elif k > 1 and constraint is Constraint.UNCONSTRAINED:
            big = label[0].upper() + label[1:]
            for a in range(k):
                for b in range(k):
                    names.append(f"{big}[{a + 1},{b + 1}]")
                    vals.append(mat[a, b])
    return names, np.asarray(vals, dtype=float)
