"""Command-line front end.

Four subcommands: `simulate` writes one synthetic population, `scan` sweeps
a correlation-by-confounders grid, `fit` runs a single logistic regression
on a matrix file, and `ingest` runs the staged survey analysis.  Every
output embeds the tool version and the resolved configuration (including
the master seed), so any file can be regenerated bit-exactly from its own
header.  Execution details such as --threads and --out are not part of the
embedded config.

Exit codes: 0 success (including partial results carrying per-row flags),
1 I/O failure, 2 usage or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .ensemble import (EnsembleError, GridSpec, format_grid_csv,
                       format_grid_json, scan_grid)
from .glm import (DesignMatrix, SingularDesignError, fit_logistic,
                  relative_risk)
from .ingest import (IngestError, MappingParseError, apply_mappings,
                     build_design, load_survey, parse_mapping_file,
                     parse_study_json, staged_analysis)
from .metamodel import ModelParams, draw_population, write_population_csv

_Z95 = 1.959963984540054

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _config_comments(config: dict) -> tuple[str, ...]:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return (f"confoundsim {__version__}", f"config: {blob}")


def _metadata(config: dict) -> dict:
    return {"version": __version__, "config": config}


def _write_output(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _read_text(path: str) -> str:
    # unreadable inputs are usage errors (exit 2); only output I/O is exit 1
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc


def _json_safe_tree(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe_tree(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe_tree(v) for v in value]
    return value


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ValueError(f"expected a comma-separated list of numbers, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ValueError(f"expected a comma-separated list of integers, got {text!r}")


def cmd_simulate(args: argparse.Namespace) -> int:
    params = ModelParams(p=args.p, k=args.k, n_respondents=args.n,
                         seed=args.seed, causal_increment=args.beta_prime)
    matrix = draw_population(params, params.k + 1)
    config = {"command": "simulate", "p": args.p, "k": args.k, "n": args.n,
              "beta_prime": args.beta_prime, "seed": args.seed}
    buf = io.StringIO()
    for comment in _config_comments(config):
        buf.write(f"# {comment}\n")
    write_population_csv(matrix, buf)
    _write_output(args.out, buf.getvalue())
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    spec = GridSpec(
        correlations=_parse_float_list(args.r_list),
        confounder_counts=_parse_int_list(args.n_list),
        n_respondents=args.N,
        replications=args.reps,
        seed=args.seed,
        causal_increment=args.beta_prime,
        ci_n_respondents=args.ci_N,
        rr_baseline=args.rr_baseline,
    )
    cells = scan_grid(spec, threads=args.threads)
    if all(cell.error is not None for cell in cells):
        print("error: every grid cell failed", file=sys.stderr)
        return EXIT_NUMERICAL

    config = {"command": "scan", "r_list": list(spec.correlations),
              "n_list": list(spec.confounder_counts), "N": spec.n_respondents,
              "reps": spec.replications, "beta_prime": spec.causal_increment,
              "ci_N": spec.ci_n_respondents, "rr_baseline": spec.rr_baseline,
              "seed": spec.seed, "format": args.format}
    extra = ("predicted_beta1", "predicted_sigma1", "mc_error_beta1", "error")
    if args.format == "json":
        text = format_grid_json(cells, extra_fields=extra, metadata=_metadata(config))
    else:
        text = format_grid_csv(cells, extra_fields=extra,
                               comments=_config_comments(config))
    _write_output(args.out, text)
    return EXIT_OK


def _read_matrix_csv(path: str) -> tuple[list[str], np.ndarray]:
    text = _read_text(path)
    rows = [row for row in csv.reader(
        line for line in text.splitlines() if not line.startswith("#")) if row]
    if not rows:
        raise ValueError(f"{path} contains no data")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(c) for c in row] for row in rows[1:]])
    except ValueError:
        raise ValueError(f"{path} contains non-numeric cells")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path} rows do not match the header width")
    return header, data


def cmd_fit(args: argparse.Namespace) -> int:
    header, data = _read_matrix_csv(args.input)
    if args.dependent not in header:
        raise ValueError(f"dependent column {args.dependent!r} not in {header}")
    y = data[:, header.index(args.dependent)]
    regressors = [t.strip() for t in (args.regressors or "").split(",") if t.strip()]
    for name in regressors:
        if name not in header:
            raise ValueError(f"regressor {name!r} not in {header}")
    columns = [data[:, header.index(name)] for name in regressors]
    intercept = not args.no_intercept
    if not columns and not intercept:
        raise ValueError("need at least one regressor or an intercept")
    design = DesignMatrix.build(columns, intercept=intercept, names=regressors,
                                n_rows=data.shape[0])
    fit = fit_logistic(y, design, tol=args.tol, max_iter=args.max_iter)

    prevalence = float(np.mean(y))
    terms = []
    for i, name in enumerate(design.names or
                             [f"x{j}" for j in range(design.n_cols)]):
        b = float(fit.coefficients[i])
        s = float(fit.std_errors[i])
        term = {"term": name, "coefficient": b, "std_error": s}
        if fit.converged:
            term["ci_low"] = b - _Z95 * s
            term["ci_high"] = b + _Z95 * s
        if not (intercept and i == 0) and prevalence < 1.0:
            term["relative_risk"] = relative_risk(b, prevalence)
        terms.append(term)

    report = {
        "converged": fit.converged,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
        "separation_detected": fit.separation_detected,
        "baseline_prevalence": prevalence,
        "n_rows": int(data.shape[0]),
        "terms": terms,
    }
    config = {"command": "fit", "input": args.input, "dependent": args.dependent,
              "regressors": regressors, "intercept": intercept,
              "tol": args.tol, "max_iter": args.max_iter}

    lines = [f"{'term':<16}{'coef':>12}{'std_err':>12}{'ci_low':>12}"
             f"{'ci_high':>12}{'rel_risk':>12}"]
    for t in terms:
        lines.append("{:<16}{:>12.6g}{:>12.6g}{:>12}{:>12}{:>12}".format(
            t["term"], t["coefficient"], t["std_error"],
            f"{t['ci_low']:.6g}" if "ci_low" in t else "",
            f"{t['ci_high']:.6g}" if "ci_high" in t else "",
            f"{t['relative_risk']:.6g}" if "relative_risk" in t else ""))
    lines.append(f"converged={fit.converged} iterations={fit.iterations} "
                 f"log_likelihood={fit.log_likelihood:.6f} "
                 f"separation_detected={fit.separation_detected}")
    print("\n".join(lines))

    if args.out:
        _write_output(args.out, json.dumps(
            _json_safe_tree({"metadata": _metadata(config), "fit": report}),
            indent=2, allow_nan=False) + "\n")
    return EXIT_OK


_STAGE_FIELDS = ("stage", "r", "n_confounders", "N", "replications",
                 "mean_beta1", "mean_sigma1", "relative_risk", "ci_low",
                 "ci_high", "excluded", "baseline_prevalence", "error")


def _stage_row(result) -> dict:
    return {
        "stage": result.stage,
        "r": None,
        "n_confounders": result.n_confounders,
        "N": result.n_used,
        "replications": 1,
        "mean_beta1": result.beta1,
        "mean_sigma1": result.sigma1,
        "relative_risk": result.relative_risk,
        "ci_low": result.ci_low,
        "ci_high": result.ci_high,
        "excluded": 0 if result.error is None else 1,
        "baseline_prevalence": result.baseline_prevalence,
        "error": result.error,
    }


def cmd_ingest(args: argparse.Namespace) -> int:
    specs, warnings = parse_mapping_file(_read_text(args.mappings))
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    study = parse_study_json(_read_text(args.study))
    table = load_survey(_read_text(args.data), delimiter=args.delimiter)

    mapped = apply_mappings(table, specs)
    results = staged_analysis(mapped, study, unit_change=args.unit_change)
    if all(r.error is not None for r in results):
        for r in results:
            print(f"error: stage {r.stage}: {r.error}", file=sys.stderr)
        return EXIT_NUMERICAL

    config = {"command": "ingest", "data": args.data, "mappings": args.mappings,
              "study": args.study, "delimiter": args.delimiter,
              "unit_change": args.unit_change
              if args.unit_change is not None else study.unit_change,
              "format": args.format}
    rows = [_stage_row(r) for r in results]
    if args.format == "json":
        payload = {"metadata": _metadata(config),
                   "results": [{k: _json_safe(v) for k, v in row.items()}
                               for row in rows]}
        text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    else:
        buf = io.StringIO()
        for comment in _config_comments(config):
            buf.write(f"# {comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_STAGE_FIELDS)
        for row in rows:
            writer.writerow([_csv_safe(row[f]) for f in _STAGE_FIELDS])
        text = buf.getvalue()
    _write_output(args.out, text)
    return EXIT_OK


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _csv_safe(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confoundsim",
        description="Latent-confounder simulations and staged survey analysis")
    parser.add_argument("--version", action="version",
                        version=f"confoundsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write one synthetic population as CSV")
    sim.add_argument("--p", type=float, required=True,
                     help="latent agreement probability, in (0.5, 1)")
    sim.add_argument("--k", type=int, required=True,
                     help="regressor count: predictor plus k-1 confounders")
    sim.add_argument("--n", type=int, required=True, help="population size N")
    sim.add_argument("--beta-prime", type=float, default=0.0,
                     help="causal logit increment for the dependent column")
    sim.add_argument("--seed", type=int, required=True, help="master seed")
    sim.add_argument("--out", default="-", help="output path, '-' for stdout")
    sim.set_defaults(func=cmd_simulate)

    scan = sub.add_parser("scan", help="sweep a correlation-by-confounders grid")
    scan.add_argument("--r-list", default="0.01,0.02,0.05,0.1,0.15",
                      help="comma-separated pairwise correlations")
    scan.add_argument("--n-list", default="1,2,4,8",
                      help="comma-separated confounder counts")
    scan.add_argument("--N", type=int, default=10000, help="population size per run")
    scan.add_argument("--reps", type=int, default=500,
                      help="replications per grid cell")
    scan.add_argument("--beta-prime", type=float, default=0.0,
                      help="causal logit increment (0 = purely spurious)")
    scan.add_argument("--ci-N", type=int, default=None,
                      help="population size the error bars are scaled to")
    scan.add_argument("--rr-baseline", type=float, default=0.0,
                      help="baseline prevalence for relative-risk conversion")
    scan.add_argument("--seed", type=int, required=True, help="master seed")
    scan.add_argument("--threads", type=int, default=1,
                      help="worker threads (output is independent of this)")
    scan.add_argument("--format", choices=("csv", "json"), default="csv")
    scan.add_argument("--out", default="-", help="output path, '-' for stdout")
    scan.set_defaults(func=cmd_scan)

    fit = sub.add_parser("fit", help="logistic regression on a matrix CSV")
    fit.add_argument("input", help="CSV file with a header row; '#' lines ignored")
    fit.add_argument("--dependent", required=True, help="dependent column name")
    fit.add_argument("--regressors", default="",
                     help="comma-separated regressor columns (empty: intercept only)")
    fit.add_argument("--no-intercept", action="store_true",
                     help="do not prepend an intercept column")
    fit.add_argument("--tol", type=float, default=1e-8)
    fit.add_argument("--max-iter", type=int, default=100)
    fit.add_argument("--out", default=None, help="also write a JSON report here")
    fit.set_defaults(func=cmd_fit)

    ing = sub.add_parser("ingest", help="staged confounder analysis of a survey file")
    ing.add_argument("--data", required=True, help="delimited survey file")
    ing.add_argument("--mappings", required=True, help="column recoding spec file")
    ing.add_argument("--study", required=True, help="study spec (JSON)")
    ing.add_argument("--delimiter", default="\t", help="field delimiter (default tab)")
    ing.add_argument("--unit-change", type=float, default=None,
                     help="override the study spec's per-unit rescaling")
    ing.add_argument("--format", choices=("csv", "json"), default="csv")
    ing.add_argument("--out", default="-", help="output path, '-' for stdout")
    ing.set_defaults(func=cmd_ingest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MappingParseError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SingularDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EnsembleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
