"""Reading and writing panels, run configurations and fit artifacts.

Panel files are long-format CSV, one row per unit-occasion::

    cluster_id,unit_id,t,y,<covariate columns...>

Columns named as cluster covariates in the model must be constant within
each ``(cluster_id, t)``. Configuration files are flat ``key = value`` text
with ``#`` comments.
"""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nested_hmm.chain import build_tridiagonal
from nested_hmm.em import EmConfig, FitResult
from nested_hmm.errors import ConfigError, DataError
from nested_hmm.model import (
    LAG_COLUMN,
    ClusterData,
    Constraint,
    ModelSpec,
    PanelDataset,
    ParameterSet,
    UnitData,
    check_parameters,
    flatten_parameters,
    parameter_names,
)
from nested_hmm.simulate import CovariateGenerator, LatentRecord, SimDesign

REQUIRED_COLUMNS = ("cluster_id", "unit_id", "t", "y")
FIT_FORMAT = "nested-hmm-fit/1"
_MISSING = {"", "na", "nan", "null", "none"}


# ---------------------------------------------------------------------------
# panel CSV


def _parse_float(text: str, line: int, column: str) -> float:
    if text.strip().lower() in _MISSING:
        raise DataError(f"line {line}: missing value in column {column!r}", line=line, column=column)
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: cannot parse {text!r} in column {column!r}", line=line, column=column) from None
    if not math.isfinite(value):
        raise DataError(f"line {line}: non-finite value in column {column!r}", line=line, column=column)
    return value


def load_panel(path, spec: ModelSpec | None = None, cluster_covariates=None) -> PanelDataset:
    """Parse a long-format panel CSV.

    Cluster-level columns are those named in ``spec.cluster_covariates`` (or
    ``cluster_covariates``); every other extra column is unit-level.

    Raises:
        DataError: header mismatch, parse failures, duplicate or
            non-contiguous occasions, or a cluster covariate that differs
            across units of one cluster at one occasion. Messages carry line
            numbers.
    """
    if cluster_covariates is None:
        cluster_covariates = spec.cluster_covariates if spec is not None else ()
    cluster_covariates = tuple(cluster_covariates)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file", line=1) from None
        if tuple(header[:4]) != REQUIRED_COLUMNS:
            raise DataError(f"line 1: header must start with {','.join(REQUIRED_COLUMNS)}, got {header[:4]}", line=1)
        extra = header[4:]
        if len(set(header)) != len(header):
            raise DataError("line 1: duplicate column names", line=1)
        for c in cluster_covariates:
            if c not in extra:
                raise DataError(f"line 1: cluster covariate {c!r} not in header", line=1, column=c)
        ccols = [extra.index(c) for c in cluster_covariates]
        ucols = [j for j, c in enumerate(extra) if c not in cluster_covariates]
        unit_names = tuple(extra[j] for j in ucols)

        clusters: OrderedDict = OrderedDict()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}", line=line)
            cid, uid = row[0].strip(), row[1].strip()
            if not cid or not uid:
                raise DataError(f"line {line}: empty cluster_id or unit_id", line=line)
            try:
                t = int(row[2])
            except ValueError:
                raise DataError(f"line {line}: occasion t={row[2]!r} is not an integer", line=line) from None
            y = _parse_float(row[3], line, "y")
            vals = [_parse_float(row[4 + j], line, extra[j]) for j in range(len(extra))]
            units = clusters.setdefault(cid, OrderedDict())
            occ = units.setdefault(uid, {})
            if t in occ:
                raise DataError(f"line {line}: duplicate occasion t={t} for cluster {cid!r}, unit {uid!r}", line=line)
            occ[t] = (line, y, vals)

    if not clusters:
        raise DataError(f"{path}: no data rows")
    T = max(max(occ) for units in clusters.values() for occ in units.values())
    out = []
    for cid, units in clusters.items():
        cluster_x: dict[int, tuple[int, list[float]]] = {}
        unit_objs = []
        for uid, occ in units.items():
            ts = sorted(occ)
            if ts != list(range(1, len(ts) + 1)):
                lines = [occ[t][0] for t in ts]
                raise DataError(
                    f"lines {lines}: occasions {ts} for cluster {cid!r}, unit {uid!r} are not contiguous from 1",
                    cluster=cid,
                    unit=uid,
                    lines=lines,
                )
            for t in ts:
                line, _, vals = occ[t]
                xv = [vals[j] for j in ccols]
                if t in cluster_x:
                    first_line, first = cluster_x[t]
                    for c, a, b in zip(cluster_covariates, first, xv):
                        if a != b:
                            raise DataError(
                                f"line {line}: cluster covariate {c!r} differs within cluster {cid!r} at t={t} "
                                f"(line {first_line} has {a!r}, this line {b!r})",
                                cluster=cid,
                                t=t,
                                column=c,
                                line=line,
                            )
                else:
                    cluster_x[t] = (line, xv)
            y = np.array([occ[t][1] for t in ts])
            z = np.array([[occ[t][2][j] for j in ucols] for t in ts]).reshape(len(ts), len(ucols))
            unit_objs.append(UnitData(unit_id=uid, responses=y, unit_covariates=z))
        x = np.array([cluster_x[t][1] for t in sorted(cluster_x)]).reshape(len(cluster_x), len(ccols))
        out.append(ClusterData(cluster_id=cid, cluster_covariates=x, units=tuple(unit_objs)))
    return PanelDataset(
        clusters=tuple(out),
        T=T,
        unit_covariate_names=unit_names,
        cluster_covariate_names=cluster_covariates,
    )


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_panel(data: PanelDataset, path) -> None:
    header = list(REQUIRED_COLUMNS) + list(data.cluster_covariate_names) + list(data.unit_covariate_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for cluster in data.clusters:
            for unit in cluster.units:
                for t in range(data.T):
                    row = [cluster.cluster_id, unit.unit_id, t + 1, _fmt(unit.responses[t])]
                    row += [_fmt(v) for v in cluster.cluster_covariates[t]]
                    row += [_fmt(v) for v in unit.unit_covariates[t]]
                    w.writerow(row)


def write_latent(record: LatentRecord, data: PanelDataset, path) -> None:
    """Write true latent states (1-based) next to, never inside, the dataset."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "unit_id", "t", "cluster_state", "unit_state"])
        for h, cluster in enumerate(data.clusters):
            for i, unit in enumerate(cluster.units):
                for t in range(data.T):
                    w.writerow([
                        cluster.cluster_id,
                        unit.unit_id,
                        t + 1,
                        int(record.cluster_states[h, t]) + 1,
                        int(record.unit_states[h][i, t]) + 1,
                    ])


# ---------------------------------------------------------------------------
# configuration

MODEL_KEYS = {
    "k1": "1",
    "k2": "1",
    "family": "bernoulli",
    "cluster_transition": "unconstrained",
    "unit_transition": "unconstrained",
    "lag_handling": "none",
    "unit_covariates": None,
    "cluster_covariates": "",
    "strict_pairs": "false",
}
EM_KEYS = {
    "max_iterations": "5000",
    "rel_tolerance": "1e-08",
    "n_random_starts": "10",
    "seed": "0",
    "newton_max_steps": "100",
    "newton_tolerance": "1e-08",
    "threads": None,
    "weighted_pairs": "false",
}
SIM_KEYS = {
    "H": None,
    "cluster_size_min": None,
    "cluster_size_max": None,
    "T": None,
    "intercept": None,
    "alpha": None,
    "beta": None,
    "gamma": "",
    "delta": "",
    "sigma2": None,
    "lambda": None,
    "pi": None,
    "rho_cluster": None,
    "rho_unit": None,
    "Lambda": None,
    "Pi": None,
}
COVARIATE_PREFIXES = ("unit_covariate.", "cluster_covariate.")


def _known(key: str) -> bool:
    return key in MODEL_KEYS or key in EM_KEYS or key in SIM_KEYS or key.startswith(COVARIATE_PREFIXES)


def parse_config_text(text: str, source: str = "<config>") -> "OrderedDict[str, str]":
    values: OrderedDict = OrderedDict()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'", line=n)
        key, value = (s.strip() for s in line.split("=", 1))
        if not _known(key):
            raise ConfigError(f"{source}:{n}: unknown key {key!r}", line=n, key=key)
        if key in values:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}", line=n, key=key)
        values[key] = value
    return values


def _list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _floats(text: str, key: str) -> np.ndarray:
    try:
        return np.array([float(s) for s in text.replace(";", ",").split(",") if s.strip()])
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _matrix(text: str, key: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    mat = [_floats(r, key) for r in rows]
    if len({len(r) for r in mat}) != 1:
        raise ConfigError(f"{key}: ragged matrix")
    return np.array(mat)


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


@dataclass
class RunConfig:
    """Resolved key-value settings for one command."""

    values: "OrderedDict[str, str]" = field(default_factory=OrderedDict)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        values = parse_config_text(Path(path).read_text(), str(path)) if path else OrderedDict()
        cfg = cls(values)
        for k, v in (overrides or {}).items():
            if v is not None:
                if not _known(k):
                    raise ConfigError(f"unknown key {k!r}")
                cfg.values[k] = str(v)
        return cfg

    def get(self, key: str, default=None):
        for table in (MODEL_KEYS, EM_KEYS, SIM_KEYS):
            if key in table:
                return self.values.get(key, table[key] if default is None else default)
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        v = self.get(key)
        if v is None:
            raise ConfigError(f"missing required key {key!r}", key=key)
        return v

    def unit_generators(self) -> dict[str, CovariateGenerator]:
        return {k.split(".", 1)[1]: CovariateGenerator.parse(v) for k, v in self.values.items() if k.startswith("unit_covariate.")}

    def cluster_generators(self) -> dict[str, CovariateGenerator]:
        return {k.split(".", 1)[1]: CovariateGenerator.parse(v) for k, v in self.values.items() if k.startswith("cluster_covariate.")}

    def model_spec(self, available_unit_covariates=()) -> ModelSpec:
        """Model settings; ``unit_covariates`` defaults to every available unit column."""
        unit_cov = self.get("unit_covariates")
        lag = self.get("lag_handling")
        if unit_cov is None:
            unit_cov_t = tuple(c for c in available_unit_covariates if not (lag != "none" and c == LAG_COLUMN))
        else:
            unit_cov_t = _list(unit_cov)
        return ModelSpec(
            k1=_int(self.get("k1"), "k1"),
            k2=_int(self.get("k2"), "k2"),
            cluster_transition=self.get("cluster_transition"),
            unit_transition=self.get("unit_transition"),
            family=self.get("family"),
            lag_handling=lag,
            unit_covariates=unit_cov_t,
            cluster_covariates=_list(self.get("cluster_covariates")),
            strict_pairs=_bool(self.get("strict_pairs"), "strict_pairs"),
        )

    def em_config(self) -> EmConfig:
        return EmConfig(
            max_iterations=_int(self.get("max_iterations"), "max_iterations"),
            rel_tolerance=_float(self.get("rel_tolerance"), "rel_tolerance"),
            n_random_starts=_int(self.get("n_random_starts"), "n_random_starts"),
            random_seed=_int(self.get("seed"), "seed"),
            newton_max_steps=_int(self.get("newton_max_steps"), "newton_max_steps"),
            newton_tolerance=_float(self.get("newton_tolerance"), "newton_tolerance"),
            threads=_int(self.get("threads", "1"), "threads"),
            weighted_pairs=_bool(self.get("weighted_pairs"), "weighted_pairs"),
        )

    def _transition(self, k: int, constraint: Constraint, rho_key: str, mat_key: str) -> np.ndarray:
        if k == 1:
            return np.eye(1)
        if constraint is Constraint.DIAGONAL:
            return np.eye(k)
        if constraint is Constraint.TRIDIAGONAL:
            return build_tridiagonal(k, _float(self.require(rho_key), rho_key))
        return _matrix(self.require(mat_key), mat_key)

    def sim_design(self) -> SimDesign:
        unit_gen = self.unit_generators()
        spec = self.model_spec(available_unit_covariates=[n for n, g in unit_gen.items()])
        k1, k2 = spec.k1, spec.k2
        lam = _floats(self.get("lambda") or ",".join([repr(1.0 / k1)] * k1), "lambda")
        pi = _floats(self.get("pi") or ",".join([repr(1.0 / k2)] * k2), "pi")
        theta = ParameterSet(
            lambda_=lam,
            Lambda=self._transition(k1, spec.cluster_transition, "rho_cluster", "Lambda"),
            pi=pi,
            Pi=self._transition(k2, spec.unit_transition, "rho_unit", "Pi"),
            intercept=_float(self.require("intercept"), "intercept"),
            alpha=_floats(self.get("alpha") or "0", "alpha"),
            beta=_floats(self.get("beta") or "0", "beta"),
            gamma=_floats(self.get("gamma"), "gamma"),
            delta=_floats(self.get("delta"), "delta"),
            sigma2=_float(self.require("sigma2"), "sigma2") if spec.family == "gaussian" else None,
        )
        try:
            check_parameters(theta, spec)
        except Exception as err:
            raise ConfigError(f"simulation parameters inconsistent with the model: {err}") from None
        size_min = _int(self.require("cluster_size_min"), "cluster_size_min")
        size_max = _int(self.get("cluster_size_max") or str(size_min), "cluster_size_max")
        return SimDesign(
            H=_int(self.require("H"), "H"),
            cluster_size=(size_min, size_max),
            T=_int(self.require("T"), "T"),
            spec=spec,
            theta=theta,
            unit_covariates=unit_gen,
            cluster_covariates=self.cluster_generators(),
            seed=_int(self.get("seed"), "seed"),
        )

    def resolved(self, keys) -> "OrderedDict[str, str]":
        out = OrderedDict()
        for k in keys:
            v = self.get(k)
            if v is not None:
                out[k] = v
        for k, v in self.values.items():
            if k not in out:
                out[k] = v
        return out


# ---------------------------------------------------------------------------
# fit artifacts


def _clean(obj):
    """Convert numpy values to JSON types; NaN and inf become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "k1": spec.k1,
        "k2": spec.k2,
        "family": spec.family,
        "cluster_transition": spec.cluster_transition.value,
        "unit_transition": spec.unit_transition.value,
        "lag_handling": spec.lag_handling,
        "unit_covariates": list(spec.unit_covariates),
        "cluster_covariates": list(spec.cluster_covariates),
        "strict_pairs": spec.strict_pairs,
    }


def spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(**{**d, "unit_covariates": tuple(d["unit_covariates"]), "cluster_covariates": tuple(d["cluster_covariates"])})


def theta_to_dict(theta: ParameterSet, spec: ModelSpec) -> dict:
    out = {
        "intercept": theta.intercept,
        "alpha": theta.alpha,
        "beta": theta.beta,
        "gamma": dict(zip(spec.cluster_covariates, theta.gamma.tolist())),
        "delta": dict(zip(spec.effective_unit_covariates, theta.delta.tolist())),
        "sigma2": theta.sigma2,
        "lambda": theta.lambda_,
        "Lambda": theta.Lambda,
        "pi": theta.pi,
        "Pi": theta.Pi,
    }
    if spec.k1 > 1 and spec.cluster_transition is Constraint.TRIDIAGONAL:
        out["rho_cluster"] = float(theta.Lambda[0, 1])
    if spec.k2 > 1 and spec.unit_transition is Constraint.TRIDIAGONAL:
        out["rho_unit"] = float(theta.Pi[0, 1])
    return out


def theta_from_dict(d: dict, spec: ModelSpec) -> ParameterSet:
    theta = ParameterSet(
        lambda_=d["lambda"],
        Lambda=d["Lambda"],
        pi=d["pi"],
        Pi=d["Pi"],
        intercept=d["intercept"],
        alpha=d["alpha"],
        beta=d["beta"],
        gamma=[d["gamma"][c] for c in spec.cluster_covariates],
        delta=[d["delta"][c] for c in spec.effective_unit_covariates],
        sigma2=d.get("sigma2"),
    )
    check_parameters(theta, spec)
    return theta


def _table_rows(rows) -> list[dict]:
    return [{"parameter": n, "estimate": e, "se": s, "z": z, "p_value": p} for n, e, s, z, p in rows]


def fit_to_dict(result: FitResult, report=None, config: dict | None = None) -> dict:
    spec = result.spec
    out = {
        "format": FIT_FORMAT,
        "config": dict(config or {}),
        "spec": spec_to_dict(spec),
        "ploglik": result.ploglik,
        "converged": result.converged,
        "n_iterations": result.n_iterations,
        "parameters": theta_to_dict(result.theta_hat, spec),
        "free_parameters": {
            "names": parameter_names(spec),
            "values": flatten_parameters(result.theta_hat, spec),
        },
        "state_order": {"cluster": result.cluster_order, "unit": result.unit_order},
        "starts": [
            {"ploglik": pl, "converged": c, "error": e, "trace": tr}
            for pl, c, e, tr in zip(result.start_ploglik, result.start_converged, result.start_errors, result.start_traces)
        ],
    }
    if report is not None:
        out["inference"] = {
            "clic": report.clic,
            "penalty": report.penalty,
            "n_free_parameters": len(report.names),
            "rcond": report.rcond,
            "asymmetry": report.asymmetry,
            "table": _table_rows(report.table(natural=True)),
            "free_table": _table_rows(report.table(natural=False)),
            "covariance": report.covariance,
            "J": report.J,
            "K": report.K,
            "transform": "probabilities and rho are reported with delta-method s.e. from the free "
            "scale (log-ratios against state 1, logit of 2*rho, log sigma2)",
        }
    return _clean(out)


def save_fit(path, result: FitResult, report=None, config: dict | None = None) -> None:
    text = json.dumps(fit_to_dict(result, report, config), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_fit(path) -> tuple[ModelSpec, ParameterSet, dict]:
    """Read a fit artifact; returns ``(spec, theta, raw_dict)``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read fit file {path}: {err}") from None
    if raw.get("format") != FIT_FORMAT:
        raise ConfigError(f"{path}: not a {FIT_FORMAT} file")
    spec = spec_from_dict(raw["spec"])
    return spec, theta_from_dict(raw["parameters"], spec), raw


# ---------------------------------------------------------------------------
# grid reports


def write_grid(result, path) -> None:
    """CLIC grid with rows indexed by k1 and columns by k2; the best cell carries a ``*``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k1\\k2"] + [str(b) for b in result.k2_values])
        for a in result.k1_values:
            row = [str(a)]
            for b in result.k2_values:
                v = result.cells[(a, b)].clic
                cell = "NA" if not np.isfinite(v) else f"{v:.3f}"
                if result.best == (a, b):
                    cell += "*"
                row.append(cell)
            w.writerow(row)


def read_grid(path) -> tuple[list[int], list[int], np.ndarray, tuple[int, int] | None]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    k2 = [int(c) for c in rows[0][1:]]
    k1, vals, best = [], [], None
    for r in rows[1:]:
        k1.append(int(r[0]))
        line = []
        for j, c in enumerate(r[1:]):
            if c.endswith("*"):
                best = (k1[-1], k2[j])
                c = c[:-1]
            line.append(math.nan if c == "NA" else float(c))
        vals.append(line)
    return k1, k2, np.array(vals), best
