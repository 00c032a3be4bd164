"""Delimited survey ingestion, value recoding, and staged confounder fits.

Survey public-use files code answers as integers, with sentinel codes for
skip patterns, refusals, and bad data.  A small text DSL describes how each
column is cleaned: `COLUMN KIND rules...` per line, where KIND is ORD
(ordinal, used numerically) or CAT (categorical, one-hot expanded) and the
rules are comma-separated `source:target` or `low-high:target` recodes.
Rules apply first-match-wins; values no rule covers pass through unchanged.

A study spec names one dependent and one independent column plus named
stages of confounders, each stage cumulative with the ones before it.  The
staged analysis fits every cumulative design and reports the independent
variable's effect as a relative risk, which is how adjusted survey
associations are usually published.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .glm import (DesignMatrix, confidence_interval, fit_logistic, one_hot,
                  relative_risk)

__all__ = [
    "MappingParseError",
    "IngestError",
    "MappingRule",
    "ColumnSpec",
    "StudySpec",
    "SurveyTable",
    "MappedTable",
    "StageResult",
    "parse_mapping_rule",
    "serialize_rules",
    "parse_mapping_file",
    "parse_study_json",
    "load_survey",
    "apply_mappings",
    "build_design",
    "staged_analysis",
]

ORD = "ORD"
CAT = "CAT"

_RULE_RE = re.compile(r"^(\d+)(?:-(\d+))?:(-?\d+)$")


class MappingParseError(ValueError):
    """A mapping rule or mapping file line could not be parsed."""

    def __init__(self, message: str, *, token_index: int | None = None,
                 line: int | None = None):
        self.token_index = token_index
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if token_index is not None:
            where.append(f"token {token_index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class IngestError(ValueError):
    """Bad cell or column encountered while ingesting survey data."""

    def __init__(self, message: str, *, row: int | None = None,
                 column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


@dataclass(frozen=True)
class MappingRule:
    """Recode the inclusive source range [low, high] to `target`."""

    low: int
    high: int
    target: int

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise MappingParseError(f"inverted range {self.low}-{self.high}")

    def covers(self, value: int) -> bool:
        return self.low <= value <= self.high

    def overlaps(self, other: "MappingRule") -> bool:
        return self.low <= other.high and other.low <= self.high

    def text(self) -> str:
        src = str(self.low) if self.low == self.high else f"{self.low}-{self.high}"
        return f"{src}:{self.target}"


def parse_mapping_rule(text: str) -> tuple[MappingRule, ...]:
    """Parse `2:0, 85-97:0` style rule lists; empty text means no recoding."""
    if not text.strip():
        return ()
    rules = []
    for i, token in enumerate(text.split(",")):
        token = token.strip()
        m = _RULE_RE.match(token)
        if m is None:
            raise MappingParseError(f"malformed rule {token!r}", token_index=i)
        low = int(m.group(1))
        high = int(m.group(2)) if m.group(2) is not None else low
        if low > high:
            raise MappingParseError(f"inverted range in {token!r}", token_index=i)
        rules.append(MappingRule(low, high, int(m.group(3))))
    return tuple(rules)


def serialize_rules(rules: tuple[MappingRule, ...]) -> str:
    """Canonical text form; parse_mapping_rule round-trips it exactly."""
    return ", ".join(rule.text() for rule in rules)


@dataclass(frozen=True)
class ColumnSpec:
    """Recoding instructions for one survey column.

    CAT columns are relabeled to consecutive integers from 0 after recoding
    (category 0 becomes the one-hot reference); n_categories, when given,
    instead asserts the recoded values already lie in [0, n_categories).
    """

    name: str
    kind: str
    rules: tuple[MappingRule, ...] = ()
    n_categories: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("column name must be non-empty")
        if self.kind not in (ORD, CAT):
            raise ValueError(f"kind must be ORD or CAT, got {self.kind!r}")
        if self.n_categories is not None and self.n_categories < 2:
            raise ValueError("n_categories must be >= 2")

    def overlapping_pairs(self) -> list[tuple[MappingRule, MappingRule]]:
        out = []
        for i, a in enumerate(self.rules):
            for b in self.rules[i + 1:]:
                if a.overlaps(b):
                    out.append((a, b))
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Recode a vector, first matching rule wins, else pass through."""
        out = values.copy()
        unresolved = np.ones(values.shape, dtype=bool)
        for rule in self.rules:
            hit = unresolved & (values >= rule.low) & (values <= rule.high)
            out[hit] = rule.target
            unresolved &= ~hit
        return out


def parse_mapping_file(text: str) -> tuple[list[ColumnSpec], list[str]]:
    """Parse a mapping spec file, one `COLUMN KIND rules...` per line.

    Blank lines and '#' comments are skipped.  Returns the specs plus
    warnings for any overlapping rules (tolerated, first match wins).
    """
    specs: list[ColumnSpec] = []
    warnings: list[str] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        if len(parts) < 2:
            raise MappingParseError(f"expected 'COLUMN KIND rules...', got {line!r}",
                                    line=lineno)
        name, kind = parts[0], parts[1]
        if kind not in (ORD, CAT):
            raise MappingParseError(f"unknown kind {kind!r} for column {name}",
                                    line=lineno)
        if name in seen:
            raise MappingParseError(f"duplicate column {name}", line=lineno)
        seen.add(name)
        try:
            rules = parse_mapping_rule(parts[2] if len(parts) == 3 else "")
        except MappingParseError as exc:
            raise MappingParseError(str(exc), line=lineno) from exc
        spec = ColumnSpec(name=name, kind=kind, rules=rules)
        for a, b in spec.overlapping_pairs():
            warnings.append(
                f"{name} (line {lineno}): rules {a.text()} and {b.text()} overlap; "
                "first match wins")
        specs.append(spec)
    return specs, warnings


@dataclass(frozen=True)
class StudySpec:
    """One dependent column, one independent column, staged confounder sets."""

    dependent: str
    independent: str
    stages: tuple[tuple[str, tuple[str, ...]], ...]
    unit_change: float = 1.0

    def __post_init__(self) -> None:
        if not self.dependent or not self.independent:
            raise ValueError("dependent and independent column names are required")
        if self.dependent == self.independent:
            raise ValueError("dependent and independent must differ")
        if not self.stages:
            raise ValueError("at least one stage is required")
        names = [name for name, _ in self.stages]
        if len(names) != len(set(names)):
            raise ValueError("stage names must be unique")
        seen: set[str] = set()
        for stage_name, cols in self.stages:
            for col in cols:
                if col in (self.dependent, self.independent):
                    raise ValueError(
                        f"{col} is the dependent or independent variable and "
                        f"cannot be a confounder (stage {stage_name})")
                if col in seen:
                    raise ValueError(f"duplicate confounder {col} across stages")
                seen.add(col)
        if not (math.isfinite(self.unit_change) and self.unit_change > 0):
            raise ValueError("unit_change must be a positive finite number")

    def stage_names(self) -> list[str]:
        return [name for name, _ in self.stages]

    def cumulative_confounders(self, stage: str) -> tuple[str, ...]:
        if stage not in self.stage_names():
            raise ValueError(f"unknown stage {stage!r}; defined: {self.stage_names()}")
        out: list[str] = []
        for name, cols in self.stages:
            out.extend(cols)
            if name == stage:
                break
        return tuple(out)


def parse_study_json(text: str) -> StudySpec:
    """Parse the study spec config (JSON: dependent, independent, stages...)."""
    def no_duplicates(pairs):
        keys = [k for k, _ in pairs]
        if len(keys) != len(set(keys)):
            dup = next(k for k in keys if keys.count(k) > 1)
            raise ValueError(f"duplicate key {dup!r} in study spec")
        return dict(pairs)

    try:
        data = json.loads(text, object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as exc:
        raise ValueError(f"study spec is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError("study spec must be a JSON object")
    try:
        stages_obj = data["stages"]
        dependent = data["dependent"]
        independent = data["independent"]
    except KeyError as exc:
        raise ValueError(f"study spec missing required key {exc}") from exc
    if not isinstance(stages_obj, dict) or not stages_obj:
        raise ValueError("stages must be a non-empty object of name -> column list")
    stages = tuple(
        (name, tuple(cols)) for name, cols in stages_obj.items())
    return StudySpec(dependent=dependent, independent=independent, stages=stages,
                     unit_change=float(data.get("unit_change", 1.0)))


@dataclass(frozen=True)
class SurveyTable:
    """Integer-coded survey table; blank cells are recorded as missing."""

    names: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise IngestError(f"no such column", column=name) from None


def load_survey(text: str, delimiter: str = "\t") -> SurveyTable:
    """Parse a delimited survey file: UTF-8, header row, integer cells."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise IngestError("empty survey file")
    names = tuple(h.strip() for h in lines[0].split(delimiter))
    if len(set(names)) != len(names):
        raise IngestError("duplicate column names in header")
    n_cols = len(names)
    values = np.zeros((len(lines) - 1, n_cols), dtype=np.int64)
    missing = np.zeros((len(lines) - 1, n_cols), dtype=bool)
    for i, line in enumerate(lines[1:]):
        cells = line.split(delimiter)
        if len(cells) != n_cols:
            raise IngestError(
                f"expected {n_cols} cells, found {len(cells)}", row=i + 1)
        for j, cell in enumerate(cells):
            cell = cell.strip()
            if not cell:
                missing[i, j] = True
                continue
            try:
                values[i, j] = int(cell)
            except ValueError:
                raise IngestError(f"non-integer cell {cell!r}",
                                  row=i + 1, column=names[j]) from None
    return SurveyTable(names=names, values=values, missing=missing)


@dataclass(frozen=True)
class MappedTable:
    """Recoded survey table plus per-column typing metadata.

    CAT columns hold consecutive category codes from 0; `categories` maps
    each CAT column to the recoded values behind those codes.
    """

    names: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray
    kinds: dict[str, str]
    categories: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._index(name)]

    def column_missing(self, name: str) -> np.ndarray:
        return self.missing[:, self._index(name)]

    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise IngestError(f"no such column", column=name) from None


def apply_mappings(table: SurveyTable, specs: list[ColumnSpec]) -> MappedTable:
    """Recode every specified column; unspecified columns stay ordinal as-is."""
    by_name = {spec.name: spec for spec in specs}
    for name in by_name:
        if name not in table.names:
            raise IngestError("mapping spec names a column absent from the data",
                              column=name)
    values = table.values.copy()
    kinds: dict[str, str] = {}
    categories: dict[str, tuple[int, ...]] = {}
    for j, name in enumerate(table.names):
        spec = by_name.get(name)
        if spec is None:
            kinds[name] = ORD
            continue
        kinds[name] = spec.kind
        col = spec.apply(table.values[:, j])
        present = ~table.missing[:, j]
        if spec.kind == CAT:
            observed = np.unique(col[present])
            if spec.n_categories is not None:
                bad = present & ((col < 0) | (col >= spec.n_categories))
                if bad.any():
                    row = int(np.flatnonzero(bad)[0])
                    raise IngestError(
                        f"category value {int(col[row])} outside declared "
                        f"range [0, {spec.n_categories})",
                        row=row + 1, column=name)
                categories[name] = tuple(range(spec.n_categories))
            else:
                # relabel to consecutive codes from 0 in value order
                col[present] = np.searchsorted(observed, col[present])
                categories[name] = tuple(int(v) for v in observed)
        values[:, j] = col
    return MappedTable(names=table.names, values=values, missing=table.missing,
                       kinds=kinds, categories=categories)


@dataclass(frozen=True)
class BuildInfo:
    """Row accounting and layout for one staged design."""

    stage: str
    confounders: tuple[str, ...]
    n_used: int
    n_dropped: int
    column_names: tuple[str, ...]


def build_design(mapped: MappedTable, study: StudySpec,
                 stage: str) -> tuple[np.ndarray, DesignMatrix, BuildInfo]:
    """Assemble (y, X) for one cumulative stage.

    X is intercept + independent + every confounder up to and including
    `stage`; CAT confounders expand to indicator columns against category 0.
    Rows missing any used column are dropped and counted.
    """
    confounders = study.cumulative_confounders(stage)
    used = [study.dependent, study.independent, *confounders]

    keep = np.ones(mapped.values.shape[0], dtype=bool)
    for name in used:
        keep &= ~mapped.column_missing(name)
    n_used = int(keep.sum())
    n_dropped = int((~keep).sum())
    if n_used == 0:
        raise IngestError("no rows remain after dropping missing values")

    y = mapped.column(study.dependent)[keep].astype(np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise IngestError("dependent column is not binary after recoding",
                          column=study.dependent)
    for name in (study.dependent, study.independent):
        if mapped.kinds.get(name) == CAT:
            raise IngestError("dependent and independent columns must be ORD",
                              column=name)

    columns = [mapped.column(study.independent)[keep].astype(np.float64)]
    names = [study.independent]
    for name in confounders:
        col = mapped.column(name)[keep]
        if mapped.kinds.get(name) == CAT:
            encoded, kept_codes = one_hot(col, reference=0)
            for code, vec in zip(kept_codes, encoded.T):
                columns.append(vec)
                names.append(f"{name}={code}")
        else:
            columns.append(col.astype(np.float64))
            names.append(name)
    design = DesignMatrix.build(columns, intercept=True, names=names)
    info = BuildInfo(stage=stage, confounders=confounders, n_used=n_used,
                     n_dropped=n_dropped, column_names=design.names)
    return y, design, info


@dataclass(frozen=True)
class StageResult:
    """Outcome of one cumulative-stage fit; `error` set if the stage failed."""

    stage: str
    n_confounders: int
    n_used: int
    n_dropped: int
    beta1: float
    sigma1: float
    relative_risk: float
    ci_low: float
    ci_high: float
    baseline_prevalence: float
    error: str | None = None


def staged_analysis(mapped: MappedTable, study: StudySpec,
                    unit_change: float | None = None) -> list[StageResult]:
    """Fit every cumulative stage and report per-unit-change relative risks.

    The fitted per-unit coefficient is rescaled by `unit_change` (for
    example 52.18 turns a days-per-year coefficient into the effect of one
    additional day per week) and converted to a relative risk at the
    dependent column's observed prevalence.  Failures in one stage do not
    stop later stages.
    """
    scale = study.unit_change if unit_change is None else unit_change
    if not (math.isfinite(scale) and scale > 0):
        raise ValueError("unit_change must be a positive finite number")
    results: list[StageResult] = []
    nan = math.nan
    for stage_name, _ in study.stages:
        confounders = study.cumulative_confounders(stage_name)
        try:
            y, design, info = build_design(mapped, study, stage_name)
            fit = fit_logistic(y, design)
            if fit.separation_detected:
                raise IngestError(f"separation detected in stage {stage_name}")
            if not fit.converged:
                raise IngestError(f"fit did not converge in stage {stage_name}")
            lo, hi = confidence_interval(fit, 1, 0.95)
            prevalence = float(y.mean())
            beta = float(fit.coefficients[1]) * scale
            sigma = float(fit.std_errors[1]) * scale
            results.append(StageResult(
                stage=stage_name,
                n_confounders=len(confounders),
                n_used=info.n_used,
                n_dropped=info.n_dropped,
                beta1=beta,
                sigma1=sigma,
                relative_risk=relative_risk(beta, prevalence),
                ci_low=relative_risk(lo * scale, prevalence),
                ci_high=relative_risk(hi * scale, prevalence),
                baseline_prevalence=prevalence,
            ))
        except (IngestError, ValueError, np.linalg.LinAlgError) as exc:
            results.append(StageResult(
                stage=stage_name, n_confounders=len(confounders), n_used=0,
                n_dropped=0, beta1=nan, sigma1=nan, relative_risk=nan,
                ci_low=nan, ci_high=nan, baseline_prevalence=nan,
                error=str(exc)))
    return results
