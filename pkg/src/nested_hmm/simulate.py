"""Simulation of multilevel panels from a fully specified nested model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from nested_hmm.errors import ConfigError
from nested_hmm.model import (
    LAG_COLUMN,
    ClusterData,
    ModelSpec,
    PanelDataset,
    ParameterSet,
    UnitData,
    check_parameters,
)

_KINDS = ("constant", "uniform", "binary", "lag")


@dataclass(frozen=True)
class CovariateGenerator:
    """One generated covariate column.

    ``constant``: every value is ``a``. ``uniform``: draws on ``[a, b]``.
    ``binary``: Bernoulli draws with rate ``a``. ``lag``: the unit's previous
    response, with ``a`` at the first occasion.
    """

    kind: str
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown covariate generator {self.kind!r}")
        if self.kind == "binary" and not 0.0 <= self.a <= 1.0:
            raise ConfigError(f"binary rate must be in [0, 1], got {self.a}")
        if self.kind == "uniform" and not self.a <= self.b:
            raise ConfigError(f"uniform bounds must satisfy a <= b, got {self.a}, {self.b}")

    @classmethod
    def parse(cls, text: str) -> "CovariateGenerator":
        """Parse ``constant:C``, ``uniform:A:B``, ``binary:P`` or ``lag[:Y0]``."""
        kind, *args = [s.strip() for s in text.split(":")]
        try:
            vals = [float(v) for v in args]
        except ValueError:
            raise ConfigError(f"bad covariate generator {text!r}") from None
        expected = {"constant": 1, "uniform": 2, "binary": 1, "lag": (0, 1)}.get(kind)
        if expected is None:
            raise ConfigError(f"unknown covariate generator {text!r}")
        if isinstance(expected, tuple) and len(vals) not in expected or isinstance(expected, int) and len(vals) != expected:
            raise ConfigError(f"wrong number of arguments in covariate generator {text!r}")
        return cls(kind, *vals)

    def __str__(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.a!r}:{self.b!r}"
        if self.kind == "lag":
            return f"lag:{self.a!r}"
        return f"{self.kind}:{self.a!r}"

    def draw(self, rng: np.random.Generator, T: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(T, self.a)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, T)
        if self.kind == "binary":
            return (rng.random(T) < self.a).astype(float)
        return np.full(T, self.a)  # lag columns are filled while responses are drawn


@dataclass(frozen=True)
class SimDesign:
    H: int
    cluster_size: tuple[int, int]
    T: int
    spec: ModelSpec
    theta: ParameterSet
    unit_covariates: dict[str, CovariateGenerator] = field(default_factory=dict)
    cluster_covariates: dict[str, CovariateGenerator] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.cluster_size
        if self.H < 1 or self.T < 1 or lo < 1 or hi < lo:
            raise ConfigError("design needs H >= 1, T >= 1 and 1 <= min size <= max size")
        check_parameters(self.theta, self.spec)
        lags = [n for n, g in self.unit_covariates.items() if g.kind == "lag"]
        if len(lags) > 1 or any(g.kind == "lag" for g in self.cluster_covariates.values()):
            raise ConfigError("at most one unit-level lagged-response column is allowed")
        for c in self.spec.unit_covariates:
            if c not in self.unit_covariates:
                raise ConfigError(f"model unit covariate {c!r} has no generator")
        for c in self.spec.cluster_covariates:
            if c not in self.cluster_covariates:
                raise ConfigError(f"model cluster covariate {c!r} has no generator")
        if self.spec.lag_handling != "none" and LAG_COLUMN in self.unit_covariates:
            raise ConfigError(f"{LAG_COLUMN!r} is reserved for the derived lag column")


@dataclass(frozen=True)
class LatentRecord:
    """True latent paths, zero-based states: cluster ``(H, T)`` and one ``(n_h, T)`` array per cluster."""

    cluster_states: np.ndarray
    unit_states: tuple[np.ndarray, ...]


def _markov_path(rng: np.random.Generator, init: np.ndarray, trans: np.ndarray, T: int) -> np.ndarray:
    draws = rng.random(T)
    cum_init = np.cumsum(init)
    cum_trans = np.cumsum(trans, axis=1)
    k = len(init)
    path = np.empty(T, dtype=int)
    path[0] = min(np.searchsorted(cum_init, draws[0], side="right"), k - 1)
    for t in range(1, T):
        path[t] = min(np.searchsorted(cum_trans[path[t - 1]], draws[t], side="right"), k - 1)
    return path


def _cluster_rng(seed: int, h: int) -> np.random.Generator:
    return np.random.default_rng((seed, h, 0, 0))


def _unit_rng(seed: int, h: int, i: int) -> np.random.Generator:
    return np.random.default_rng((seed, h, 1, i))


def simulate(design: SimDesign) -> tuple[PanelDataset, LatentRecord]:
    """Draw a panel and its latent paths.

    Each cluster and each unit has its own random stream keyed by
    ``(seed, cluster, unit)``, so a cluster's data do not depend on how many
    clusters are generated before it.
    """
    spec, theta, T = design.spec, design.theta, design.T
    unit_names = tuple(design.unit_covariates)
    cluster_names = tuple(design.cluster_covariates)
    z_cols = [unit_names.index(c) for c in spec.unit_covariates]
    x_cols = [cluster_names.index(c) for c in spec.cluster_covariates]
    lag_col = next((j for j, g in enumerate(design.unit_covariates.values()) if g.kind == "lag"), None)
    derived_lag = spec.lag_handling != "none"
    delta = theta.delta
    sd = np.sqrt(theta.sigma2) if spec.family == "gaussian" else None
    lo, hi = design.cluster_size

    clusters, cluster_states, unit_states = [], [], []
    for h in range(design.H):
        rng = _cluster_rng(design.seed, h)
        n_h = int(rng.integers(lo, hi + 1))
        x = np.column_stack([g.draw(rng, T) for g in design.cluster_covariates.values()]) if cluster_names else np.zeros((T, 0))
        u_path = _markov_path(rng, theta.lambda_, theta.Lambda, T)
        base = theta.intercept + theta.alpha[u_path] + x[:, x_cols] @ theta.gamma
        units, v_paths = [], []
        for i in range(n_h):
            urng = _unit_rng(design.seed, h, i)
            z = np.column_stack([g.draw(urng, T) for g in design.unit_covariates.values()]) if unit_names else np.zeros((T, 0))
            v_path = _markov_path(urng, theta.pi, theta.Pi, T)
            noise = urng.random(T) if spec.family == "bernoulli" else urng.standard_normal(T)
            y = np.empty(T)
            for t in range(T):
                prev = y[t - 1] if t > 0 else None
                if lag_col is not None and prev is not None:
                    z[t, lag_col] = prev
                zt = z[t, z_cols]
                if derived_lag:
                    zt = np.append(zt, prev if prev is not None else 0.0)
                eta = base[t] + theta.beta[v_path[t]] + zt @ delta
                if spec.family == "bernoulli":
                    y[t] = float(noise[t] < expit(eta))
                else:
                    y[t] = eta + sd * noise[t]
            units.append(UnitData(unit_id=i + 1, responses=y, unit_covariates=z))
            v_paths.append(v_path)
        clusters.append(ClusterData(cluster_id=h + 1, cluster_covariates=x, units=tuple(units)))
        cluster_states.append(u_path)
        unit_states.append(np.asarray(v_paths))
    data = PanelDataset(
        clusters=tuple(clusters),
        T=T,
        unit_covariate_names=unit_names,
        cluster_covariate_names=cluster_names,
    )
    return data, LatentRecord(cluster_states=np.asarray(cluster_states), unit_states=tuple(unit_states))
