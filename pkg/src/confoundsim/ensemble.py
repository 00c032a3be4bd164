"""Monte Carlo harness measuring spurious association that survives adjustment.

Runs many independent populations, regresses the dependent column on the
predictor plus confounders, and averages the predictor's logit coefficient
and its standard error.  The averaged surfaces follow simple empirical
scaling laws in the agreement bias b = 2p - 1, the regressor count k, and
the population size N:

    mean coefficient   ~ 3 b^2 / k
    mean standard error ~ N^(-1/2) (4 + 12 b^5) (k - (1 + b) / 4) / k

Grid scans sweep pairwise correlation r against confounder count n and emit
plot-ready rows (relative risk with 95% intervals), mirroring how real
survey analyses report adjusted associations.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .glm import SingularDesignError, fit_logistic, relative_risk
from .metamodel import ModelParams, derive_seed, draw_population

__all__ = [
    "EnsembleError",
    "ReplicationDigest",
    "EnsembleSummary",
    "GridSpec",
    "GridCell",
    "run_ensemble",
    "empirical_beta_formula",
    "empirical_sigma_formula",
    "scan_grid",
    "scan_grid_causal",
    "GRID_FIELDS",
    "format_grid_csv",
    "format_grid_json",
]

# two-sided 95% normal quantile, used for the reported intervals
_Z95 = 1.959963984540054


class EnsembleError(RuntimeError):
    """Every replication of an ensemble failed to produce a usable fit."""


def empirical_beta_formula(p: float, k: int) -> float:
    """Fitted scaling law 3 b^2 / k for the averaged logit coefficient."""
    _check_formula_args(p, k)
    b = 2.0 * p - 1.0
    return 3.0 * b * b / k


def empirical_sigma_formula(p: float, k: int, n_respondents: int) -> float:
    """Fitted scaling law for the averaged standard error; exact N^(-1/2) decay."""
    _check_formula_args(p, k)
    if n_respondents < 1:
        raise ValueError(f"n_respondents must be >= 1, got {n_respondents}")
    b = 2.0 * p - 1.0
    return (4.0 + 12.0 * b**5) * ((k - (1.0 + b) / 4.0) / k) / math.sqrt(n_respondents)


def _check_formula_args(p: float, k: int) -> None:
    # p = 0.5 allowed here as the zero-bias boundary of the pure formulas
    if not 0.5 <= p < 1.0:
        raise ValueError(f"p must be in [0.5, 1), got {p}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


@dataclass(frozen=True)
class ReplicationDigest:
    """Per-replication record kept when a caller asks for them."""

    index: int
    beta1: float
    sigma1: float
    converged: bool
    separation_detected: bool


@dataclass(frozen=True)
class EnsembleSummary:
    """Averages over the converged replications of one parameter setting.

    When the causal increment is zero all non-dependent columns are
    statistically equivalent, so beta1 and sigma1 are additionally averaged
    over the k possible choices of predictor column within each fit.
    """

    params: ModelParams
    replications: int
    mean_beta1: float
    mean_sigma1: float
    mc_error_beta1: float
    excluded: int
    per_replication: tuple[ReplicationDigest, ...] | None = None

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.mc_error_beta1 >= 0.0:
            raise ValueError("mc_error_beta1 must be nonnegative")


def _fit_one_replication(params: ModelParams, rep_index: int) -> ReplicationDigest:
    rep_params = replace(params, seed=derive_seed(params.seed, rep_index))
    population = draw_population(rep_params, params.k + 1)
    y = population.responses[:, 0].astype(np.float64)
    regressors = population.responses[:, 1:].astype(np.float64)
    try:
        # the survey regressions this models fit raw response columns with no
        # constant term; the scaling laws above describe exactly those fits
        fit = fit_logistic(y, regressors)
    except (SingularDesignError, ValueError):
        return ReplicationDigest(rep_index, math.nan, math.nan, False, False)
    if params.causal_increment == 0.0:
        beta1 = float(fit.coefficients.mean())
        sigma1 = float(fit.std_errors.mean())
    else:
        beta1 = float(fit.coefficients[0])
        sigma1 = float(fit.std_errors[0])
    usable = fit.converged and not fit.separation_detected
    return ReplicationDigest(rep_index, beta1 if usable else math.nan,
                             sigma1 if usable else math.nan,
                             fit.converged, fit.separation_detected)


def run_ensemble(params: ModelParams, replications: int, *,
                 executor: Executor | None = None,
                 keep_replications: bool = False) -> EnsembleSummary:
    """Generate and fit `replications` independent populations.

    Replication streams are keyed by (params.seed, replication index), and
    results are reduced in index order, so output is identical whether the
    work runs serially or on the supplied executor.  Non-converged or
    separated fits are excluded and counted, never retried.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    indices = range(replications)
    if executor is None:
        digests = [_fit_one_replication(params, i) for i in indices]
    else:
        digests = list(executor.map(lambda i: _fit_one_replication(params, i), indices))

    betas = np.array([d.beta1 for d in digests])
    sigmas = np.array([d.sigma1 for d in digests])
    kept = ~np.isnan(betas)
    n_kept = int(kept.sum())
    if n_kept == 0:
        raise EnsembleError(
            f"all {replications} replications failed to converge "
            f"(p={params.p}, k={params.k}, N={params.n_respondents})")
    mc_error = (float(np.std(betas[kept], ddof=1)) / math.sqrt(n_kept)
                if n_kept >= 2 else math.inf)
    return EnsembleSummary(
        params=params,
        replications=replications,
        mean_beta1=float(np.mean(betas[kept])),
        mean_sigma1=float(np.mean(sigmas[kept])),
        mc_error_beta1=mc_error,
        excluded=replications - n_kept,
        per_replication=tuple(digests) if keep_replications else None,
    )


@dataclass(frozen=True)
class GridSpec:
    """A sweep over pairwise correlations r and confounder counts n.

    Each grid cell runs a full ensemble with k = n + 1 regressors (the
    predictor plus n confounders) at p = (1 + sqrt(r)) / 2.  Reported
    intervals are rescaled to ci_n_respondents when given (error bars decay
    as N^(-1/2)); rr_baseline is the baseline prevalence used to convert
    coefficients to relative risks.
    """

    correlations: tuple[float, ...]
    confounder_counts: tuple[int, ...]
    n_respondents: int
    replications: int
    seed: int
    causal_increment: float = 0.0
    ci_n_respondents: int | None = None
    rr_baseline: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "correlations", tuple(float(r) for r in self.correlations))
        object.__setattr__(self, "confounder_counts",
                           tuple(int(n) for n in self.confounder_counts))
        if not self.correlations:
            raise ValueError("correlations must be non-empty")
        if any(not 0.0 < r < 1.0 for r in self.correlations):
            raise ValueError("every correlation must be in (0, 1)")
        if not self.confounder_counts:
            raise ValueError("confounder_counts must be non-empty")
        if any(n < 1 for n in self.confounder_counts):
            raise ValueError("every confounder count must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.ci_n_respondents is not None and self.ci_n_respondents < 1:
            raise ValueError("ci_n_respondents must be >= 1")
        if not 0.0 <= self.rr_baseline < 1.0:
            raise ValueError("rr_baseline must be in [0, 1)")


@dataclass(frozen=True)
class GridCell:
    """One row of a grid scan; `error` is set when the whole cell failed."""

    r: float
    n_confounders: int
    n_respondents: int
    replications: int
    mean_beta1: float
    mean_sigma1: float
    relative_risk: float
    ci_low: float
    ci_high: float
    excluded: int
    predicted_beta1: float
    predicted_sigma1: float
    mc_error_beta1: float
    error: str | None = None


def scan_grid(spec: GridSpec, threads: int = 1) -> list[GridCell]:
    """Run every (r, n) cell of the grid; failed cells are kept, flagged.

    Deterministic for a fixed spec seed regardless of `threads`.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        cells = []
        index = 0
        for r in spec.correlations:
            for n_conf in spec.confounder_counts:
                cells.append(_run_cell(spec, r, n_conf, index, executor))
                index += 1
        return cells
    finally:
        if executor is not None:
            executor.shutdown()


def scan_grid_causal(spec: GridSpec, threads: int = 1) -> list[GridCell]:
    """Grid scan with the spec's causal increment; identical machinery.

    With a zero increment this degenerates to exactly scan_grid's output.
    """
    return scan_grid(spec, threads=threads)


def _run_cell(spec: GridSpec, r: float, n_conf: int, index: int,
              executor: Executor | None) -> GridCell:
    p = 0.5 * (1.0 + math.sqrt(r))
    k = n_conf + 1
    predicted_beta = empirical_beta_formula(p, k)
    predicted_sigma = empirical_sigma_formula(p, k, spec.n_respondents)
    params = ModelParams(p=p, k=k, n_respondents=spec.n_respondents,
                         seed=derive_seed(spec.seed, index),
                         causal_increment=spec.causal_increment)
    try:
        summary = run_ensemble(params, spec.replications, executor=executor)
    except EnsembleError as exc:
        nan = math.nan
        return GridCell(r, n_conf, spec.n_respondents, spec.replications,
                        nan, nan, nan, nan, nan, spec.replications,
                        predicted_beta, predicted_sigma, nan, error=str(exc))

    ci_n = spec.ci_n_respondents or spec.n_respondents
    sigma_scaled = summary.mean_sigma1 * math.sqrt(spec.n_respondents / ci_n)
    rr = relative_risk(summary.mean_beta1, spec.rr_baseline)
    ci_low = relative_risk(summary.mean_beta1 - _Z95 * sigma_scaled, spec.rr_baseline)
    ci_high = relative_risk(summary.mean_beta1 + _Z95 * sigma_scaled, spec.rr_baseline)
    return GridCell(r, n_conf, spec.n_respondents, spec.replications,
                    summary.mean_beta1, summary.mean_sigma1, rr, ci_low, ci_high,
                    summary.excluded, predicted_beta, predicted_sigma,
                    summary.mc_error_beta1, error=None)


# canonical column order shared by the CSV and JSON emitters
GRID_FIELDS = ("r", "n_confounders", "N", "replications", "mean_beta1",
               "mean_sigma1", "relative_risk", "ci_low", "ci_high", "excluded")
_FIELD_ATTRS = {"N": "n_respondents"}


def _cell_value(cell: GridCell, field: str):
    return getattr(cell, _FIELD_ATTRS.get(field, field))


def _csv_repr(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def format_grid_csv(cells: list[GridCell], extra_fields: tuple[str, ...] = (),
                    comments: tuple[str, ...] = ()) -> str:
    """Render cells as CSV; leading '#' lines carry caller metadata."""
    fields = GRID_FIELDS + extra_fields
    buf = io.StringIO()
    for comment in comments:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for cell in cells:
        writer.writerow([_csv_repr(_cell_value(cell, f)) for f in fields])
    return buf.getvalue()


def format_grid_json(cells: list[GridCell], extra_fields: tuple[str, ...] = (),
                     metadata: dict | None = None) -> str:
    """Render cells as JSON with the same field set as the CSV emitter."""
    fields = GRID_FIELDS + extra_fields
    rows = [{f: _json_value(_cell_value(c, f)) for f in fields} for c in cells]
    payload: dict = {}
    if metadata:
        payload["metadata"] = metadata
    payload["results"] = rows
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"
