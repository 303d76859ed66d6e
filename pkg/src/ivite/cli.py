"""Command-line front end: estimate, density, diagnose, simulate.

All randomness flows from --seed; repeated invocations with identical flags
produce byte-identical outputs at any --threads setting. Progress and errors
go to stderr; stdout stays clean for piped JSON when --json is set. Exit
codes: 0 success (possibly with warnings), 1 estimation failure, 2 usage
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import density as density_mod
from . import simulate as sim_mod
from .counterfactual import mass_point_diagnostic
from .data import ColumnSchema, cell_stats, load_csv
from .empirical import complier_cdf, monotonicity_diagnostic, support_condition_diagnostic
from .errors import IviteError
from .ite import deltas_from_records, sign_classification
from .pipeline import PipelineConfig, run_estimation


def _fmt(v) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(args: argparse.Namespace) -> dict:
    # threads never affects results, so it is excluded to keep outputs
    # byte-identical across worker counts
    skip = {"func", "config", "threads"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _schema_from(args) -> ColumnSchema:
    covs = tuple(c for c in (args.covariates or "").split(",") if c)
    return ColumnSchema(
        outcome=args.outcome,
        treatment=args.treatment,
        instrument=args.instrument,
        covariates=covs,
    )


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        propensity_tol=args.propensity_tol,
        min_cell=args.min_cell,
        min_arm=args.min_arm,
        monotonize=getattr(args, "monotonize", False),
        with_inference=getattr(args, "with_inference", True),
    )


def _cell_label(cell) -> str:
    return "|".join(map(str, cell)) if cell else "-"


def cmd_estimate(args) -> int:
    dataset = load_csv(args.input, _schema_from(args))
    config = _pipeline_config(args)
    result = run_estimation(dataset, config)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    _write_csv(
        outdir / "ite.csv",
        ["id", "cell", "d", "y", "y_counterfactual", "delta_hat", "out_of_support_flag"],
        (
            (
                r.id,
                _cell_label(r.cell),
                r.d,
                r.y_observed,
                r.y_counterfactual,
                r.delta_hat,
                int(r.out_of_support),
            )
            for r in result.records
        ),
    )

    map_rows = []
    for (cell, arm), inf in sorted(result.inference.items()):
        cf = result.maps[(cell, arm)]
        for i, q in enumerate(inf.query_points):
            map_rows.append(
                (
                    _cell_label(cell),
                    arm,
                    q,
                    inf.phi[i],
                    inf.se[i],
                    inf.r_hat[i],
                    inf.c_star[i],
                    cf.flat_widths[i],
                )
            )
    _write_csv(
        outdir / "maps.csv",
        ["cell", "target_arm", "y_query", "phi_hat", "se", "R_hat", "c_star_hat", "flat_width"],
        map_rows,
    )

    summary = {
        "config": _echo_config(args),
        "n": len(dataset),
        "n_dropped_rows": dataset.n_dropped,
        "sign_classification": sign_classification(result.records, dataset),
        "late": {
            ("pooled" if k == "pooled" else _cell_label(k)): v.value
            for k, v in result.lates.items()
        },
        "warnings": result.warnings,
        "skipped_cells": [
            {"cell": _cell_label(c), "reason": reason} for c, reason in result.skipped_cells
        ],
    }
    _write_json(outdir / "summary.json", summary)
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"wrote {outdir}/ite.csv, maps.csv, summary.json", file=sys.stderr)
    return 0


def cmd_density(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.bandwidth is not None and not args.bandwidth > 0:
        raise IviteError(f"--bandwidth must be positive, got {args.bandwidth}")

    frame = pd.read_csv(args.input)
    is_ite_csv = "delta_hat" in frame.columns
    band = None
    if is_ite_csv:
        if not args.no_bootstrap:
            raise IviteError(
                "bootstrap bands need the raw dataset; rerun with --no-bootstrap "
                "or pass the original CSV"
            )
        keep = frame["out_of_support_flag"] == 0 if "out_of_support_flag" in frame else slice(None)
        deltas = frame.loc[keep, "delta_hat"].to_numpy(dtype=float)
        est = density_mod.kde(
            deltas, kernel=args.kernel, h=args.bandwidth, rule=args.rule, P=args.P
        )
    else:
        dataset = load_csv(args.input, _schema_from(args))
        config = _pipeline_config(args)
        if args.no_bootstrap:
            result = run_estimation(dataset, config)
            deltas = deltas_from_records(result.records)
            est = density_mod.kde(
                deltas, kernel=args.kernel, h=args.bandwidth, rule=args.rule, P=args.P
            )
        else:
            band = density_mod.bootstrap_band(
                dataset,
                config,
                B=args.B,
                level=args.level,
                seed=args.seed,
                threads=args.threads,
                kernel=args.kernel,
                h=args.bandwidth,
                rule=args.rule,
                P=args.P,
            )
            est = None

    if band is not None:
        rows = zip(band.grid, band.point, band.lower, band.upper)
        header = ["delta", "f_hat", "lower", "upper"]
        n_used, h_used = None, None
        meta_extra = {
            "B": band.replications,
            "level": band.level,
            "method": band.method,
            "failures": band.n_failures,
            "degraded": band.degraded,
        }
    else:
        rows = ((g, v) for g, v in zip(est.grid, est.values))
        header = ["delta", "f_hat"]
        n_used, h_used = est.n, est.bandwidth
        meta_extra = {}
    _write_csv(outdir / "density.csv", header, rows)
    meta = {
        "config": _echo_config(args),
        "kernel": args.kernel,
        "rule": args.rule,
        "P": args.P,
        "bandwidth": h_used if h_used is not None else args.bandwidth,
        "n": n_used,
        "seed": args.seed,
        **meta_extra,
    }
    _write_json(outdir / "density_meta.json", meta)
    if args.json:
        print(json.dumps(meta, sort_keys=True))
    else:
        print(f"wrote {outdir}/density.csv, density_meta.json", file=sys.stderr)
    return 0


def cmd_diagnose(args) -> int:
    dataset = load_csv(args.input, _schema_from(args))
    config = _pipeline_config(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    cells_report = []
    for cell in dataset.cell_keys:
        entry: dict = {"cell": _cell_label(cell)}
        try:
            stats = cell_stats(dataset, cell)
            entry["n"] = stats.n
            entry["propensity_gap"] = stats.propensity_gap
            for d in (0, 1):
                c = complier_cdf(
                    dataset, cell, d, propensity_tol=config.propensity_tol
                )
                mono = monotonicity_diagnostic(c)
                entry[f"monotonicity_d{d}"] = {
                    "max_violation": mono.max_violation,
                    "violating_fraction": mono.violating_fraction,
                    "n_below_zero": mono.n_below_zero,
                    "n_above_one": mono.n_above_one,
                }
                supp = support_condition_diagnostic(
                    dataset, cell, d, propensity_tol=config.propensity_tol
                )
                entry[f"support_d{d}"] = {
                    "arm_support": list(supp.arm_support),
                    "complier_support": list(supp.complier_support),
                    "hausdorff_gap": supp.hausdorff_gap,
                }
            from .pipeline import build_cell_maps

            for (ck, arm), cf in build_cell_maps(dataset, cell, config).items():
                entry[f"mass_point_d{arm}"] = mass_point_diagnostic(cf)
        except IviteError as exc:
            entry["error"] = str(exc)
        cells_report.append(entry)

    report = {"config": _echo_config(args), "cells": cells_report}
    _write_json(outdir / "diagnostics.json", report)
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(f"wrote {outdir}/diagnostics.json", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.design == "table1":
        configs = [
            sim_mod.SimConfig(
                n=args.n,
                gamma1=args.gamma1,
                reps=args.reps,
                seed=args.seed,
                family=args.family,
            )
        ]
    elif args.design == "table1-full":
        configs = sim_mod.table1_grid(args.seed, reps=args.reps, family=args.family)
    else:  # argparse choices guard this
        raise IviteError(f"unknown design {args.design!r}")

    report = sim_mod.table1_harness(configs, threads=args.threads)
    payload = {"config": _echo_config(args), **report.to_dict()}

    if args.densities:
        band = sim_mod.density_replication_band(configs[0], threads=args.threads)
        _write_csv(
            outdir / "density_replications.csv",
            ["delta", "lower", "upper"],
            zip(band.grid, band.lower, band.upper),
        )
        payload["density_band"] = {
            "method": band.method,
            "level": band.level,
            "replications": band.replications,
        }

    _write_json(outdir / "simulation_report.json", payload)
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"wrote {outdir}/simulation_report.json", file=sys.stderr)
    return 0


def _add_schema_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--outcome", default="y", help="outcome column name")
    p.add_argument("--treatment", default="d", help="binary treatment column name")
    p.add_argument("--instrument", default="z", help="binary instrument column name")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", action="store_true", help="print summary JSON on stdout")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--propensity-tol", dest="propensity_tol", type=float, default=0.02)
    p.add_argument("--min-cell", dest="min_cell", type=int, default=50)
    p.add_argument("--min-arm", dest="min_arm", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivite",
        description="Individual treatment effects from a binary instrument",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate maps, effects and summaries")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    _add_schema_flags(p)
    _add_common_flags(p)
    p.add_argument("--monotonize", action="store_true")
    p.set_defaults(func=cmd_estimate, with_inference=True)

    p = sub.add_parser("density", help="effect density with optional bootstrap band")
    p.add_argument("--input", required=True, help="raw dataset CSV or an ite.csv")
    p.add_argument("--outdir", required=True)
    _add_schema_flags(p)
    _add_common_flags(p)
    p.add_argument("--kernel", default="gaussian", choices=sorted(density_mod.KERNELS))
    p.add_argument("--rule", default="paper_mc", choices=density_mod.BANDWIDTH_RULES)
    p.add_argument("--P", type=int, default=2, help="kernel order for the rule")
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--B", type=int, default=density_mod.DEFAULT_BOOTSTRAP_REPS)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--no-bootstrap", dest="no_bootstrap", action="store_true")
    p.set_defaults(func=cmd_density, with_inference=False, monotonize=False)

    p = sub.add_parser("diagnose", help="per-cell identification diagnostics")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    _add_schema_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_diagnose, with_inference=False, monotonize=False)

    p = sub.add_parser("simulate", help="Monte Carlo RMSE harness")
    p.add_argument("--design", default="table1", choices=("table1", "table1-full"))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--gamma1", type=float, default=0.3)
    p.add_argument("--reps", type=int, default=sim_mod.DEFAULT_REPS)
    p.add_argument("--family", default="power", choices=sim_mod.FAMILIES)
    p.add_argument("--outdir", required=True)
    p.add_argument("--densities", action="store_true", help="emit replication density band")
    _add_common_flags(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Flags override values from an optional JSON config file."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    with open(path) as fh:
        loaded = json.load(fh)
    extra = []
    for key, value in sorted(loaded.items()):
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue
        if isinstance(value, bool):
            if value:
                extra.append(flag)
        else:
            extra.extend([flag, str(value)])
    # append config-file defaults; keys with an explicit flag were skipped above
    return argv + extra


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if argv and not argv[0].startswith("-"):
        try:
            argv = argv[:1] + _apply_config_file(parser, argv[1:])
        except (OSError, json.JSONDecodeError) as exc:
            print(json.dumps({"error": f"bad config file: {exc}"}), file=sys.stderr)
            return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IviteError as exc:
        msg = json.dumps({"error": str(exc), "type": type(exc).__name__}, sort_keys=True)
        if getattr(args, "json", False):
            print(msg)
        else:
            print(msg, file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
