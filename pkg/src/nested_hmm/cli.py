"""Command-line entry point: ``nested-hmm {simulate,fit,loglik,select}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from nested_hmm.em import as_arrays, fit, pairwise_loglik
from nested_hmm.errors import ConfigError, NestedHMMError
from nested_hmm.inference import sandwich, select_grid
from nested_hmm.io import (
    EM_KEYS,
    MODEL_KEYS,
    RunConfig,
    load_fit,
    load_panel,
    save_fit,
    write_grid,
    write_latent,
    write_panel,
)
from nested_hmm.simulate import simulate

log = logging.getLogger("nested_hmm")


def _range(text: str) -> list[int]:
    """``"1..4"`` or ``"2"`` -> list of ints."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or invalid range {text!r}")
    return list(range(lo, hi + 1))


def _threads(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("NESTED_HMM_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"NESTED_HMM_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _config(args, **extra) -> RunConfig:
    overrides = {"seed": args.seed, "threads": _threads(args.threads)}
    if getattr(args, "strict_pairs", False):
        overrides["strict_pairs"] = "true"
    overrides.update(extra)
    return RunConfig.from_file(args.config, overrides)


def _model_config(cfg: RunConfig, data):
    spec = cfg.model_spec(available_unit_covariates=data.unit_covariate_names)
    return spec, cfg.em_config()


def cmd_simulate(args) -> int:
    cfg = _config(args)
    design = cfg.sim_design()
    data, latent = simulate(design)
    write_panel(data, args.out)
    if args.latent:
        write_latent(latent, data, args.latent)
    print(json.dumps({"clusters": data.n_clusters, "units": data.n_units, "T": data.T, "out": args.out}))
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    cluster_cov = [c.strip() for c in (cfg.get("cluster_covariates") or "").split(",") if c.strip()]
    data = load_panel(args.data, cluster_covariates=cluster_cov)
    spec, em_config = _model_config(cfg, data)
    result = fit(data, spec, em_config)
    report = sandwich(data, spec, result.theta_hat, threads=em_config.threads, ploglik=result.ploglik)
    resolved = cfg.resolved(list(MODEL_KEYS) + list(EM_KEYS))
    resolved["unit_covariates"] = ",".join(spec.unit_covariates)
    save_fit(args.out, result, report, resolved)
    print(json.dumps({"ploglik": result.ploglik, "clic": report.clic, "converged": result.converged, "out": args.out}))
    return 0


def cmd_loglik(args) -> int:
    spec, theta, _ = load_fit(args.params)
    data = load_panel(args.data, spec)
    arrays = as_arrays(data, spec)
    print(repr(pairwise_loglik(arrays, spec, theta, threads=_threads(args.threads))))
    return 0


def cmd_select(args) -> int:
    cfg = _config(args)
    cluster_cov = [c.strip() for c in (cfg.get("cluster_covariates") or "").split(",") if c.strip()]
    data = load_panel(args.data, cluster_covariates=cluster_cov)
    template, em_config = _model_config(cfg, data)
    k1_values = args.k1 or [template.k1]
    k2_values = args.k2 or [template.k2]
    result = select_grid(data, k1_values, k2_values, template, em_config, workers=em_config.threads)
    write_grid(result, args.out)
    for cell in result.cells.values():
        if cell.error is not None:
            log.warning("k1=%d k2=%d failed: %s", cell.k1, cell.k2, cell.error)
    print(json.dumps({"best": list(result.best) if result.best else None, "out": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nested-hmm", description="Nested hidden Markov models fitted by pairwise likelihood.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, config=True):
        if data:
            p.add_argument("--data", required=True, help="long-format panel CSV")
        if config:
            p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, help="worker count (default: NESTED_HMM_THREADS or all cores)")

    p = sub.add_parser("simulate", help="draw a panel from a configured model")
    common(p, data=False)
    p.add_argument("--out", required=True)
    p.add_argument("--latent", help="sidecar CSV for the true latent states")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model and write fit.json")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--strict-pairs", action="store_true", help="reject clusters with a single unit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("loglik", help="print the pairwise log-likelihood at stored parameters")
    common(p, config=False)
    p.add_argument("--params", required=True, help="fit.json")
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("select", help="CLIC grid over numbers of latent states")
    common(p)
    p.add_argument("--k1", type=_range, help="cluster-state range A..B")
    p.add_argument("--k2", type=_range, help="unit-state range C..D")
    p.add_argument("--out", required=True)
    p.add_argument("--strict-pairs", action="store_true")
    p.set_defaults(func=cmd_select)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NestedHMMError as err:
        print(json.dumps(err.to_record(), default=str), file=sys.stderr)
        return 2
    except OSError as err:
        print(json.dumps({"error": "E_IO", "message": str(err), "details": {"path": err.filename}}, default=str), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
