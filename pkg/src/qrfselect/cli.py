"""Command-line interface.

Subcommands: simulate, select, backmse, ngr, evaluate, verify, experiment.
Machine-readable output goes to --out (or stdout when absent); progress and
diagnostics go to stderr. Every randomized command either takes --seed or
draws one and prints it. Exit codes: 0 success, 2 usage error, 3 missing or
unreadable file, 4 invalid data or configuration, 1 any other failure.
"""

import argparse
import json
import secrets
import sys
import time

import numpy as np

from . import __version__
from .baselines import MeanForestParams, NgrError, backward_select_mse, ngr_bic_stepwise
from .data import (
    ConfigError,
    DataError,
    Dataset,
    IndexSet,
    MissingFileError,
    RunConfig,
    config_from_mapping,
    load_csv,
    read_config,
    write_csv,
)
from .forest import fit as fit_forest
from .forest import validate_forest
from .scoring import QuantileGrid, StepCDF
from .selection import EmptySubforestError, estimate_risk, select
from .simulation import METHODS, SimulationConfig, run_experiment, simulate_model
from .verification import pit_histogram, quantile_reliability, randomized_pit, reliability_diagram

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_INVALID = 4
EXIT_OTHER = 1

_EPILOG = """exit codes:
  0  success
  2  usage error (unknown flag, missing required argument)
  3  missing or unreadable file
  4  invalid data or configuration
  1  any other failure
"""


def _emit(payload: str, out_path) -> None:
    if out_path is None:
        sys.stdout.write(payload)
        if not payload.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(payload)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    seed = secrets.randbits(32)
    print(f"seed not given; using generated seed {seed}", file=sys.stderr)
    return seed


def _load_run_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config(args.config))
    for key in (
        "trees",
        "subsample_fraction",
        "mtry",
        "min_node_size",
        "crps_grid_k",
        "alpha",
        "threads",
    ):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "split_quantiles", None):
        values["split_quantiles"] = tuple(
            float(t) for t in args.split_quantiles.split(",") if t.strip()
        )
    values["seed"] = _resolve_seed(args)
    return config_from_mapping(values)


def _load_dataset(args) -> Dataset:
    return load_csv(args.data, args.response)


def _covariate_set(dataset: Dataset, spec) -> IndexSet:
    if not spec:
        return dataset.all_covariates()
    idx = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        idx.append(dataset.column_index(token))
    return IndexSet(tuple(idx))


def _add_data_args(p):
    p.add_argument("--data", required=True, help="input CSV (header row, comma, UTF-8)")
    p.add_argument("--response", required=True, help="response column name")


def _add_forest_args(p):
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--trees", type=int, help="number of trees per forest")
    p.add_argument("--subsample-fraction", dest="subsample_fraction", type=float)
    p.add_argument("--mtry", type=int, help="split candidates per node (default: all)")
    p.add_argument("--min-node-size", dest="min_node_size", type=int)
    p.add_argument(
        "--split-quantiles",
        dest="split_quantiles",
        help="comma-separated relabeling levels, e.g. 0.25,0.5,0.75",
    )
    p.add_argument("--crps-grid-k", dest="crps_grid_k", type=int)
    p.add_argument("--alpha", type=float, help="significance level of the stopping test")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--seed", type=int, help="master seed (generated if absent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrfselect",
        description="Forward variable selection for honest quantile forests under the CRPS",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated benchmark dataset as CSV",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--d", type=int, default=25)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("select", help="forward selection; writes a JSON trace",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data_args(p)
    _add_forest_args(p)
    p.add_argument("--out", help="trace JSON path (stdout when absent)")

    p = sub.add_parser("backmse", help="backward elimination baseline; JSON report",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data_args(p)
    p.add_argument("--trees", type=int, default=2000)
    p.add_argument("--replicates", type=int, default=20, help="forests averaged per round")
    p.add_argument("--min-leaf-size", dest="min_leaf_size", type=int, default=5)
    p.add_argument("--mtry", type=int, help="default: ceil(d/3)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("ngr", help="Gaussian-regression BIC stepwise baseline; JSON report",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data_args(p)
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="out-of-bag CRPS risk of one covariate set",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data_args(p)
    _add_forest_args(p)
    p.add_argument("--covariates", help="comma-separated covariate names (default: all)")
    p.add_argument("--out")

    p = sub.add_parser("verify", help="calibration diagnostics from out-of-bag predictions",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data_args(p)
    _add_forest_args(p)
    p.add_argument("--covariates", help="comma-separated covariate names (default: all)")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument(
        "--thresholds",
        default="0.25,0.5,0.75,0.9",
        help="response-quantile levels defining reliability thresholds",
    )
    p.add_argument(
        "--levels", default="0.25,0.5,0.75", help="quantile-reliability levels"
    )
    p.add_argument("--out-prefix", required=True, help="prefix for the emitted CSV files")

    p = sub.add_parser("experiment", help="replicated benchmark; CSV rows + JSON aggregate",
                       epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--d", type=int, default=25)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--trees", type=int, default=200, help="trees per forest (desk scale)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--crps-grid-k", dest="crps_grid_k", type=int, default=50)
    p.add_argument("--backmse-replicates", dest="backmse_replicates", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-prefix", required=True)
    return parser


def _cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    cfg = SimulationConfig(model=args.model, n=args.n, rho=args.rho, d=args.d, seed=seed)
    sim = simulate_model(cfg)
    write_csv(sim.dataset, args.out, response="y")
    print(
        f"wrote {args.out}: model {cfg.model}, n={cfg.n}, d={cfg.d}, rho={cfg.rho}, seed={seed}",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_select(args) -> int:
    config = _load_run_config(args)
    dataset = _load_dataset(args)
    t0 = time.perf_counter()
    trace = select(dataset, config)
    elapsed = time.perf_counter() - t0
    payload = trace.to_dict(names=dataset.names)
    payload["wall_clock_s"] = elapsed
    _emit(json.dumps(payload, indent=2), args.out)
    names = ", ".join(trace.selected.names(dataset.names)) or "(none)"
    print(f"selected: {names}", file=sys.stderr)
    return EXIT_OK


def _cmd_backmse(args) -> int:
    seed = _resolve_seed(args)
    dataset = _load_dataset(args)
    params = MeanForestParams(
        trees=args.trees, mtry=args.mtry, min_leaf_size=args.min_leaf_size
    )
    t0 = time.perf_counter()
    result = backward_select_mse(
        dataset,
        params=params,
        n_replicates=args.replicates,
        seed=seed,
        threads=args.threads,
    )
    payload = result.to_dict(names=dataset.names)
    payload["config"] = {
        "trees": args.trees,
        "replicates": args.replicates,
        "min_leaf_size": args.min_leaf_size,
        "mtry": args.mtry,
        "seed": seed,
        "threads": args.threads,
    }
    payload["wall_clock_s"] = time.perf_counter() - t0
    _emit(json.dumps(payload, indent=2), args.out)
    names = ", ".join(dataset.names[i] for i in sorted(result.selected.indices)) or "(none)"
    print(f"selected: {names}", file=sys.stderr)
    return EXIT_OK


def _cmd_ngr(args) -> int:
    dataset = _load_dataset(args)
    t0 = time.perf_counter()
    model = ngr_bic_stepwise(dataset)
    cols = sorted(model.selected.indices)
    payload = {
        "schema_version": 1,
        "method": "ngr_bic",
        "selected": [dataset.names[i] for i in cols],
        "selected_indices": cols,
        "bic": model.bic,
        "loglik": model.loglik,
        "beta": model.beta.tolist(),
        "gamma": model.gamma.tolist(),
        "n_obs": model.n_obs,
        "wall_clock_s": time.perf_counter() - t0,
    }
    _emit(json.dumps(payload, indent=2), args.out)
    names = ", ".join(dataset.names[i] for i in cols) or "(none)"
    print(f"selected: {names}", file=sys.stderr)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    dataset = _load_dataset(args)
    covs = _covariate_set(dataset, args.covariates)
    detail = estimate_risk(
        dataset,
        covs,
        config.forest,
        QuantileGrid(config.crps_grid_k),
        config.seed,
        detail=True,
    )
    payload = {
        "schema_version": 1,
        "method": "evaluate",
        "covariates": [dataset.names[i] for i in covs],
        "oob_crps_risk": detail.risk,
        "excluded_observations": detail.excluded,
        "config": config.to_dict(),
    }
    _emit(json.dumps(payload, indent=2), args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = _load_run_config(args)
    dataset = _load_dataset(args)
    covs = _covariate_set(dataset, args.covariates)
    fitted = fit_forest(dataset, covs, config.forest, config.seed)
    validate_forest(fitted, dataset)
    grid = QuantileGrid(config.crps_grid_k)
    rng = np.random.default_rng(config.seed)

    from .forest import oob_weights

    pit_vals = []
    rows = []
    for i in range(dataset.n):
        w = oob_weights(fitted, i)
        if w is None:
            continue
        cdf = StepCDF.from_sample(fitted.y, w)
        pit_vals.append(randomized_pit(cdf, float(dataset.y[i]), float(rng.uniform())))
        rows.append((i, cdf))
    if not rows:
        raise EmptySubforestError("no observation has a usable sub-forest")

    written = []
    diagram = pit_histogram(np.asarray(pit_vals), bins=args.bins)
    path = f"{args.out_prefix}_pit.csv"
    diagram.write_csv(path)
    written.append(path)

    obs = np.array([dataset.y[i] for i, _ in rows])
    for t in (float(s) for s in args.thresholds.split(",") if s.strip()):
        thr = float(np.quantile(dataset.y, t))
        probs = np.array([cdf.cdf_at(thr) for _, cdf in rows])
        outcomes = (obs <= thr).astype(np.float64)
        diagram = reliability_diagram(probs, outcomes, bins=args.bins)
        path = f"{args.out_prefix}_reliability_q{int(round(t * 100)):02d}.csv"
        diagram.write_csv(path)
        written.append(path)

    for tau in (float(s) for s in args.levels.split(",") if s.strip()):
        qf = np.array([cdf.quantile(tau) for _, cdf in rows])
        diagram = quantile_reliability(qf, obs, tau, bins=args.bins)
        path = f"{args.out_prefix}_quantile_reliability_q{int(round(tau * 100)):02d}.csv"
        diagram.write_csv(path)
        written.append(path)

    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_experiment(args) -> int:
    seed = _resolve_seed(args)
    sim_cfg = SimulationConfig(
        model=args.model, n=args.n, rho=args.rho, d=args.d,
        replications=args.reps, seed=seed,
    )
    run_cfg = RunConfig(seed=seed, alpha=args.alpha, crps_grid_k=args.crps_grid_k).with_updates(
        trees=args.trees
    )
    t0 = time.perf_counter()
    summary = run_experiment(
        sim_cfg,
        args.method,
        run_config=run_cfg,
        backmse_params=MeanForestParams(trees=args.trees),
        backmse_replicates=args.backmse_replicates,
        threads=args.threads,
    )
    csv_path = f"{args.out_prefix}_replications.csv"
    summary.write_csv(csv_path)
    agg = summary.to_dict()
    agg["wall_clock_s"] = time.perf_counter() - t0
    json_path = f"{args.out_prefix}_summary.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(agg, indent=2))
    print(
        f"wrote {csv_path} and {json_path}: mean signal {summary.mean_signal:.2f}, "
        f"mean noise {summary.mean_noise:.2f}",
        file=sys.stderr,
    )
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "select": _cmd_select,
    "backmse": _cmd_backmse,
    "ngr": _cmd_ngr,
    "evaluate": _cmd_evaluate,
    "verify": _cmd_verify,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (MissingFileError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except (DataError, ConfigError, NgrError, EmptySubforestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
