"""Command-line front end: run experiments, sweep parameters, fit tails,
and validate the closed-form SINR.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 validation
failure. The default output directory comes from --out, then the
CFRAN_EVT_OUT environment variable, then the config file's directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .channel import sinr_validation
from .config import load_config, parse_override_value
from .evt import InsufficientExceedances, extract_pot, fit_gpd_mle, gaussian_tail_comparison
from .sim import Policy, compare_policies, run_experiment, write_metrics_csv
from .topology import ConfigurationError, generate_topology

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VALIDATION = 4


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    raise TypeError(f"cannot serialize {type(obj)}")


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _out_dir(args, config_path: Path) -> Path:
    if args.out:
        out = Path(args.out)
    elif os.environ.get("CFRAN_EVT_OUT"):
        out = Path(os.environ["CFRAN_EVT_OUT"])
    else:
        out = config_path.resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_one(cfg, kind, seed):
    return run_experiment(cfg, Policy(kind), seed=seed)


def cmd_run(args) -> int:
    config_path = Path(args.config)
    cfg = load_config(config_path, args.override)
    out = _out_dir(args, config_path)

    tasks = [(kind, seed) for kind in cfg.sim.policies for seed in cfg.sim.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*[(cfg, k, s) for k, s in tasks])))
    else:
        results = [_run_one(cfg, k, s) for k, s in tasks]

    summaries = []
    for res in results:
        csv_path = out / f"run_{res.policy.kind}_seed{res.seed}.csv"
        write_metrics_csv(csv_path, res.metrics)
        entry = dict(res.summary)
        entry["csv"] = csv_path.name
        entry["arrival_checksum"] = res.arrival_checksum
        summaries.append(entry)

    for seed in cfg.sim.seeds:
        from dataclasses import replace

        topo, _ = generate_topology(replace(cfg.network, seed=seed))
        _dump_json(out / f"run_topology_seed{seed}.json", topo.to_json_dict())

    payload = {
        "version": __version__,
        "config": results[0].config,
        "runs": summaries,
    }
    _dump_json(out / "run_summary.json", payload)
    print(f"wrote {len(results)} run(s) to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config_path = Path(args.config)
    values = [parse_override_value(v) for v in args.values.split(",") if v.strip() != ""]
    if not values:
        raise ConfigurationError("sweep needs a nonempty value list")
    out = _out_dir(args, config_path)

    reports = []
    for v in values:
        cfg = load_config(config_path, list(args.override or ()) + [f"{args.axis}={v!r}" if isinstance(v, str) else f"{args.axis}={v}"])
        rep = compare_policies(cfg)
        rep["axis"] = args.axis
        rep["value"] = v
        reports.append(rep)

    rows_path = out / "sweep_summary.csv"
    with open(rows_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            (
                "axis",
                "value",
                "seed",
                "evt_exceed_freq",
                "baseline_exceed_freq",
                "evt_ee_median",
                "baseline_ee_median",
                "evt_tail_mean_S",
                "evt_nontail_mean_S",
                "baseline_tail_mean_S",
                "baseline_nontail_mean_S",
            )
        )
        for rep in reports:
            for row in rep["per_seed"]:
                e, b = row["evt_aware"], row["baseline"]
                w.writerow(
                    (
                        rep["axis"],
                        rep["value"],
                        row["seed"],
                        e["exceed_freq_mean"],
                        b["exceed_freq_mean"],
                        e["ee_median"],
                        b["ee_median"],
                        e["tail_mean_S"],
                        e["nontail_mean_S"],
                        b["tail_mean_S"],
                        b["nontail_mean_S"],
                    )
                )
    _dump_json(out / "sweep_summary.json", {"version": __version__, "sweep": reports})
    print(f"swept {args.axis} over {values}; results in {out}")
    return EXIT_OK


def cmd_fit_gpd(args) -> int:
    path = Path(args.csv_path)
    if not path.exists():
        print(f"no such file: {path}", file=sys.stderr)
        return EXIT_DATA
    values = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or args.column not in reader.fieldnames:
            print(f"column {args.column!r} not found in {path}", file=sys.stderr)
            return EXIT_DATA
        for row in reader:
            if args.ue is not None and int(float(row.get("k", -1))) != args.ue:
                continue
            values.append(float(row[args.column]))
    if not values:
        print("no samples selected", file=sys.stderr)
        return EXIT_DATA

    exc, p_exc = extract_pot(np.asarray(values), args.q0)
    try:
        fit = fit_gpd_mle(exc, n_min=args.n_min, threshold=args.q0, n_total=len(values))
        comparison = gaussian_tail_comparison(exc, n_min=args.n_min)
    except InsufficientExceedances as err:
        print(f"insufficient exceedances: {err.count} < {err.n_min}", file=sys.stderr)
        return EXIT_DATA
    payload = {
        "version": __version__,
        "column": args.column,
        "ue": args.ue,
        "threshold": args.q0,
        "n_samples": len(values),
        "n_exceed": int(exc.size),
        "p_exc": p_exc,
        "xi": fit.xi,
        "sigma": fit.sigma,
        "log_likelihood": fit.log_likelihood,
        "boundary": fit.boundary,
        "gpd_sf_mse": comparison["gpd_sf_mse"],
        "gauss_sf_mse": comparison["gauss_sf_mse"],
    }
    json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=_jsonable)
    print()
    return EXIT_OK


def cmd_validate_sinr(args) -> int:
    cfg = load_config(Path(args.config), args.override)
    rows, worst = sinr_validation(
        cfg.network,
        n_instances=args.instances,
        n_real=args.n_real,
        seed=args.seed,
        contamination=cfg.sinr_contamination,
    )
    print(f"{'inst':>4} {'K':>2} {'L':>2} {'sharing':>7} {'max rel err':>12}")
    for r in rows:
        print(f"{r['instance']:>4} {r['K']:>2} {r['L']:>2} {str(r['pilot_sharing']):>7} {r['max_rel_err']:>12.5f}")
    print(f"worst relative error: {worst:.5f} over {args.instances} instances at {args.n_real} realizations")
    if args.n_real >= 1000 and worst > 0.05:
        print("validation FAILED: closed form and Monte Carlo disagree beyond 5%", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfran-evt", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured experiments")
    run.add_argument("config")
    run.add_argument("--out", default=None)
    run.add_argument("--override", action="append", default=[], metavar="block.key=value")
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="paired policy comparison along one config axis")
    sweep.add_argument("config")
    sweep.add_argument("--axis", required=True, metavar="block.key")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--override", action="append", default=[], metavar="block.key=value")
    sweep.set_defaults(func=cmd_sweep)

    fit = sub.add_parser("fit-gpd", help="fit the exceedance tail of a CSV trace column")
    fit.add_argument("csv_path")
    fit.add_argument("--column", default="Q")
    fit.add_argument("--q0", type=float, required=True)
    fit.add_argument("--ue", type=int, default=None)
    fit.add_argument("--n-min", type=int, default=50)
    fit.set_defaults(func=cmd_fit_gpd)

    val = sub.add_parser("validate-sinr", help="closed-form SINR vs Monte Carlo oracle")
    val.add_argument("config")
    val.add_argument("--n-real", type=int, default=10_000)
    val.add_argument("--instances", type=int, default=20)
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--override", action="append", default=[], metavar="block.key=value")
    val.set_defaults(func=cmd_validate_sinr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
