"""Command-line entry point.

Single-step subcommands read one long-format panel CSV (national series use
region ``00``) and write their results into ``--out-dir``. ``train`` and
``predict`` work on wide feature tables with one row per region-month.

Exit codes: 0 on success, 2 on a validation error or failed certificate,
1 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from ..eqi import clusters_csv, eqi_compute, eqi_csv, period_rankings, rankings_csv
from ..errors import CoverageError, DomainError, ReconError, StageError
from ..estimator.mlp import MlpModel, predict_rates, train
from ..estimator.shares import FeatureMatrix, TargetBlock
from ..estimator.validation import ValidationScheme, run_validation
from ..panel import (
    NATIONAL,
    ConversionRule,
    MonthKey,
    Panel,
    RegionId,
    SchemaSpec,
    close_identities,
    derive_rate_series,
    identity_residuals,
    panel_to_csv,
    read_csv,
)
from ..splice import donor_map, donors_csv, national_align, reconcile_informality, splice_extend
from ..tempdisagg import DisaggProblem, denton_pfd, disaggregate
from .config import eqi_spec_from_table, load_config, load_toml, mlp_config_from_table
from .run import run_pipeline
from .synth import SynthSpec, generate_synthetic_panel, write_fixture

log = logging.getLogger("panelrecon")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2
CLOSURE_TOL = 1e-12
ALIGN_TOL = 1e-10


class CertificateFailure(Exception):
    """A command finished but one of its consistency checks failed."""


# --------------------------------------------------------------------------- helpers


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _load_panel(path: str) -> Panel:
    result = read_csv(path)
    if result.rejects:
        first = result.rejects[0]
        log.warning("%s: %d rejected row(s); first at line %d (%s)", path, len(result.rejects), first.line, first.reason)
    return result.panel


def _region(panel: Panel, code: str) -> RegionId:
    matches = sorted({r for r in panel.regions() if r.code == code})
    if not matches:
        raise CoverageError(f"region {code!r} is not in the panel")
    return matches[0]


def _codes(text: str | None) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _toml(args) -> dict:
    return load_toml(args.config) if args.config else {}


def _read_table(path: str, columns: Sequence[str] | None = None) -> tuple[FeatureMatrix, dict[str, np.ndarray]]:
    """Rows of a wide CSV as a feature matrix over every (region, month) carrying all columns."""
    result = read_csv(path, SchemaSpec(layout="wide"))
    if result.rejects:
        raise DomainError(f"{path}: line {result.rejects[0].line}: {result.rejects[0].reason}")
    panel = result.panel
    names = list(columns) if columns is not None else panel.variables()
    rows: list[tuple[RegionId, MonthKey]] = sorted(
        {(r, k) for r in panel.regions() for v in names if panel.has(r, v) for k in panel.series(r, v).keys}
    )
    if not rows:
        raise CoverageError(f"{path} holds no rows")
    values = np.empty((len(rows), len(names)))
    for j, v in enumerate(names):
        for i, (r, k) in enumerate(rows):
            x = panel.series(r, v).get(k) if panel.has(r, v) else None
            if x is None:
                raise CoverageError(f"{path}: {r.code} {k} has no {v!r}")
            values[i, j] = x
    groups = np.array([r.code for r, _ in rows])
    times = tuple(k for _, k in rows)
    cols = {v: values[:, j] for j, v in enumerate(names)}
    return FeatureMatrix(values, tuple(names), groups, times), cols


# --------------------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    result = read_csv(args.input, SchemaSpec(layout=args.layout))
    out = _out_dir(args)
    _write(out, "panel.csv", panel_to_csv(result.panel))
    lines = ["line,reason"] + [f"{r.line},\"{r.reason}\"" for r in result.rejects]
    _write(out, "rejects.csv", "\n".join(lines) + "\n")
    print(f"{len(result.panel)} series, {len(result.rejects)} rejected row(s)")
    if args.strict and result.rejects:
        raise CertificateFailure(f"{len(result.rejects)} rejected row(s)")
    return EXIT_OK


def cmd_disagg(args) -> int:
    panel = _load_panel(args.input)
    region = _region(panel, args.region)
    annual = panel.series(region, args.target)
    names = _codes(args.indicators)
    if not names:
        raise DomainError("--indicators needs at least one variable")
    indicators = {n: panel.series(region, n) if panel.has(region, n) else panel.series(NATIONAL, n) for n in names}
    out = _out_dir(args)
    if args.method == "denton":
        if len(names) != 1:
            raise DomainError("Denton benchmarking takes exactly one indicator")
        path = denton_pfd(annual, indicators[names[0]], args.rule)
        info = {"method": "denton-pfd", "aggregation_deviation": path.meta["aggregation_deviation"]}
    else:
        grid = tuple(round(i * 0.01, 2) for i in range(int(round(args.rho_min * 100)), 100))
        fit, path = disaggregate(DisaggProblem.from_series(annual, indicators, args.rule, grid))
        info = {
            "method": "chow-lin",
            "rho": fit.rho,
            "beta": [float(b) for b in fit.beta],
            "sigma2": fit.sigma2,
            "loglik": fit.loglik,
            "kept_columns": list(fit.kept_columns),
            "condition_number": fit.condition_number,
            "aggregation_deviation": fit.certificate,
        }
    _write(out, "disagg.csv", panel_to_csv(Panel({(region, args.target): path})))
    _write(out, "disagg_fit.json", json.dumps(info, indent=2) + "\n")
    print(f"{region.code}/{args.target}: {len(path)} months, aggregation deviation {info['aggregation_deviation']:.3g}")
    return EXIT_OK


def cmd_splice(args) -> int:
    panel = _load_panel(args.input)
    region = _region(panel, args.region)
    target = panel.series(region, args.variable)
    candidates = {r: panel.series(r, args.variable) for r in panel.regions(args.variable) if r != region}
    dm = donor_map(target, candidates, args.min_overlap, target=region, variable=args.variable)
    donor = candidates[dm.donor]
    start = MonthKey.parse(args.start) if args.start else donor.first
    spliced = splice_extend(target, donor, start)
    out = _out_dir(args)
    _write(out, "donors.csv", donors_csv([dm]))
    _write(out, "spliced.csv", panel_to_csv(Panel({(region, args.variable): spliced})))
    print(f"{region.code}/{args.variable}: donor {dm.donor.code} (spearman {dm.spearman:.4f}), from {spliced.first}")
    return EXIT_OK


def cmd_align(args) -> int:
    panel = _load_panel(args.input)
    national = panel.series(NATIONAL, args.variable)
    codes = _codes(args.regions)
    members = [_region(panel, c) for c in codes] if codes else [r for r in panel.regions(args.variable) if r != NATIONAL]
    if not members:
        raise CoverageError(f"no member regions carry {args.variable!r}")
    aligned = national_align({r: panel.series(r, args.variable) for r in members}, national)
    gap = 0.0
    for k in national.keys:
        parts = [s[k] for s in aligned.values() if k in s]
        if len(parts) == len(aligned):
            gap = max(gap, abs(sum(parts) - national[k]) / max(abs(national[k]), 1e-12))
    out = _out_dir(args)
    _write(out, "aligned.csv", panel_to_csv(Panel({(r, args.variable): s for r, s in aligned.items()})))
    print(f"{len(aligned)} regions aligned; max relative gap {gap:.3g}")
    if gap > ALIGN_TOL:
        raise CertificateFailure(f"alignment gap {gap:.3g} exceeds {ALIGN_TOL:g}")
    return EXIT_OK


def cmd_close(args) -> int:
    panel = _load_panel(args.input)
    closed, report = close_identities(panel, args.tolerance)
    regions = sorted({e.region for e in report.entries})
    after = identity_residuals(closed, regions).max_abs_relative if regions else 0.0
    out = _out_dir(args)
    _write(out, "closed.csv", panel_to_csv(closed.merge(derive_rate_series(closed, regions)) if regions else closed))
    _write(out, "residuals.json", report.to_json() + "\n")
    flagged = report.exceedances()
    if flagged:
        log.warning("%d region-month(s) exceeded the %g pre-closure tolerance", len(flagged), args.tolerance)
    print(f"pre-closure max residual {report.max_abs_relative:.3g}; post-closure {after:.3g}")
    if after > CLOSURE_TOL:
        raise CertificateFailure(f"post-closure residual {after:.3g} exceeds {CLOSURE_TOL:g}")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _toml(args)
    config = mlp_config_from_table(raw.get("estimator", {}), args.seed)
    X_all, cols = _read_table(args.input)
    drop = {args.target, *(_codes(args.exclude))} | ({args.divisor} if args.divisor else set())
    features = [c for c in X_all.columns if c not in drop]
    if args.target not in cols:
        raise CoverageError(f"target column {args.target!r} is missing")
    X = FeatureMatrix(np.column_stack([cols[c] for c in features]), tuple(features), X_all.groups, X_all.times)
    y = cols[args.target] / cols[args.divisor] if args.divisor else cols[args.target]
    if np.any((y <= 0) | (y >= 1)):
        raise DomainError("targets must be shares strictly inside (0, 1); pass --divisor for levels")
    model, tlog = train(X, y, config)
    out = _out_dir(args)
    _write(out, "model.json", model.to_json())
    _write(out, "training_log.json", json.dumps({
        "epochs": tlog.epochs, "best_epoch": tlog.best_epoch, "stopped_early": tlog.stopped_early,
        "train_rows": tlog.train_rows, "val_rows": tlog.val_rows,
    }, indent=2) + "\n")
    if args.validation:
        scheme = ValidationScheme.from_name(args.validation, args.seed)
        divisor = cols[args.divisor] if args.divisor else np.ones(X.n_rows)
        block = TargetBlock(y[:, None], (args.target,), divisor)
        report = run_validation(X, block, config, scheme)
        _write(out, "metrics.csv", report.to_csv())
        print(f"{args.validation} share MAPE {report.mean(args.target, 'share').mape:.4f}%")
    print(f"trained {model.epochs_run} epochs, best validation loss {model.best_val_loss:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = MlpModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    X_all, cols = _read_table(args.input)
    missing = [c for c in model.columns if c not in cols]
    if missing:
        raise CoverageError(f"feature table lacks model columns {missing}")
    X = FeatureMatrix(np.column_stack([cols[c] for c in model.columns]), model.columns, X_all.groups, X_all.times)
    shares = predict_rates(model, X)
    header = "region_code,date,share" + (",level" if args.divisor else "")
    lines = [header]
    for i, (g, t) in enumerate(zip(X.groups, X.times)):
        row = f"{g},{t},{float(shares[i])!r}"
        if args.divisor:
            row += f",{float(shares[i] * cols[args.divisor][i])!r}"
        lines.append(row)
    _write(_out_dir(args), "predictions.csv", "\n".join(lines) + "\n")
    print(f"{len(shares)} predictions")
    return EXIT_OK


def cmd_reconcile(args) -> int:
    panel = _load_panel(args.input)
    regions = [r for r in panel.regions("informality_rate") if r != NATIONAL and panel.has(r, "employed")]
    if not regions:
        raise CoverageError("no region carries both informality_rate and employed")
    schedule, calibrated = reconcile_informality(
        {r: panel.series(r, "informality_rate") for r in regions},
        {r: panel.series(r, "employed") for r in regions},
        panel.series(NATIONAL, "informality_rate"),
    )
    worst = max(schedule.residual.values())
    out = _out_dir(args)
    _write(out, "lambda.csv", schedule.to_csv())
    _write(out, "informality.csv", panel_to_csv(Panel({(r, "informality_rate"): s for r, s in calibrated.items()})))
    print(f"{len(schedule.values)} months reconciled; lambda in [{min(schedule.values.values()):.4f}, {max(schedule.values.values()):.4f}]")
    if worst > ALIGN_TOL:
        raise CertificateFailure(f"conservation gap {worst:.3g} exceeds {ALIGN_TOL:g}")
    return EXIT_OK


def cmd_eqi(args) -> int:
    panel = _load_panel(args.input)
    if "employment_rate" not in panel.variables() and "pet" in panel.variables():
        panel = panel.merge(derive_rate_series(panel, panel.regions("pet")))
    regions = [r for r in panel.regions("employment_rate") if r != NATIONAL]
    spec, periods = eqi_spec_from_table(_toml(args).get("eqi", {}), all(panel.has(r, "informality_rate") for r in regions))
    result = eqi_compute(panel, spec, regions)
    out = _out_dir(args)
    _write(out, "eqi.csv", eqi_csv(result))
    if result.cluster:
        _write(out, "clusters.csv", clusters_csv(result.cluster, spec.labels))
    if periods:
        _write(out, "rankings.csv", rankings_csv(period_rankings(result, periods)))
    print(f"EQI for {len(result.eqi)} regions")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    if not args.config:
        raise DomainError("pipeline needs --config")
    config = load_config(args.config, args.seed)
    manifest = run_pipeline(config, args.out_dir)
    failed = [c for c in manifest.certificates if not c.passed]
    print(f"{len(manifest.stages_completed)} stage(s) completed, {len(manifest.certificates)} certificate(s), {len(failed)} failed")
    if failed:
        raise CertificateFailure(", ".join(f"{c.stage}/{c.name}" for c in failed))
    return EXIT_OK


def cmd_synth(args) -> int:
    regions = tuple(_codes(args.regions))
    d = SynthSpec()
    spans = {k: min(getattr(d, k), args.years) for k in ("national_monthly_years", "department_years", "short_city_years")}
    spec = SynthSpec(seed=args.seed, years=args.years, **spans)
    if regions:
        # the first two thirds of the listed departments carry survey data
        spec = replace(spec, regions=regions, observed=regions[: max(1, 2 * len(regions) // 3)])
    path = write_fixture(generate_synthetic_panel(spec), _out_dir(args))
    print(f"fixture written; config at {path}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default: current directory)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="panelrecon", description="Monthly regional labor panel reconstruction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse a CSV into the canonical long panel")
    p.add_argument("input")
    p.add_argument("--layout", choices=["long", "wide"], default="long")
    p.add_argument("--strict", action="store_true", help="exit 2 when any row is rejected")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("disagg", parents=[common], help="annual-to-monthly temporal disaggregation")
    p.add_argument("input")
    p.add_argument("--region", default=NATIONAL.code)
    p.add_argument("--target", required=True, help="annual variable to distribute")
    p.add_argument("--indicators", required=True, help="comma-separated monthly indicator variables")
    p.add_argument("--rule", choices=[r.value for r in ConversionRule], default=ConversionRule.AVERAGE.value)
    p.add_argument("--method", choices=["chowlin", "denton"], default="chowlin")
    p.add_argument("--rho-min", type=float, default=-0.99, help="lower end of the AR(1) grid (default: -0.99)")
    p.set_defaults(func=cmd_disagg)

    p = sub.add_parser("splice", parents=[common], help="extend a series backward with its best rank-correlated donor")
    p.add_argument("input")
    p.add_argument("--region", required=True)
    p.add_argument("--variable", required=True)
    p.add_argument("--start", help="first month of the extended series (default: the donor's first month)")
    p.add_argument("--min-overlap", type=int, default=10)
    p.set_defaults(func=cmd_splice)

    p = sub.add_parser("align", parents=[common], help="scale regional series to the national total month by month")
    p.add_argument("input")
    p.add_argument("--variable", required=True)
    p.add_argument("--regions", help="comma-separated member codes (default: every non-national region)")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("close", parents=[common], help="enforce the labor accounting identities")
    p.add_argument("input")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_close)

    p = sub.add_parser("train", parents=[common], help="train the residual MLP on a wide feature table")
    p.add_argument("input")
    p.add_argument("--target", required=True)
    p.add_argument("--divisor", help="column the target is divided by to form a share")
    p.add_argument("--exclude", help="comma-separated columns to leave out of the features")
    p.add_argument("--validation", choices=["full_fit", "holdout_stratified", "lko", "logo", "loyo"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict shares with a trained model")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--divisor", help="column to multiply shares by for levels")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("reconcile", parents=[common], help="match implied informal counts to the national rate")
    p.add_argument("input")
    p.set_defaults(func=cmd_reconcile)

    p = sub.add_parser("eqi", parents=[common], help="employment quality index, clusters and rankings")
    p.add_argument("input")
    p.set_defaults(func=cmd_eqi)

    p = sub.add_parser("pipeline", parents=[common], help="run every configured stage")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fixture with its hidden truth and config")
    p.add_argument("--years", type=int, default=10)
    p.add_argument("--regions", help="comma-separated department codes")
    p.set_defaults(func=cmd_synth)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    return EXIT_IO if isinstance(exc, OSError) else EXIT_INVALID


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ReconError, CertificateFailure, OSError) as exc:
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
