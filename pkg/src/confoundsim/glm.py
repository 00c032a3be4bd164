"""Binary logistic regression by iteratively reweighted least squares.

Self-contained maximum-likelihood engine: Newton-Raphson on the Bernoulli
log-likelihood with step-halving, standard errors from the inverse observed
information, and deterministic separation diagnostics.  Also houses the small
link-function helpers and the relative-risk conversion used by the reporting
layers.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SingularDesignError",
    "NotConvergedError",
    "DesignMatrix",
    "FitResult",
    "logit",
    "inverse_logit",
    "fit_logistic",
    "relative_risk",
    "confidence_interval",
    "one_hot",
]

# |x| beyond this adds nothing to a float64 sigmoid; clamping avoids overflow
_LOGIT_CLAMP = 36.0

# any coefficient this large during iteration signals a separated fit
_SEPARATION_COEF = 30.0
_PIN_EPS = 1e-10


class SingularDesignError(ValueError):
    """Design matrix is rank deficient (collinear or constant regressors)."""


class NotConvergedError(RuntimeError):
    """An operation required a converged fit but did not get one."""


def logit(p):
    """log(p / (1 - p)) for p strictly inside (0, 1); scalar or array."""
    scalar = np.ndim(p) == 0
    arr = np.asarray(p, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("logit requires 0 < p < 1")
    out = np.log(arr / (1.0 - arr))
    return float(out) if scalar else out


def inverse_logit(x):
    """Logistic sigmoid 1 / (1 + exp(-x)), clamped at |x| = 36.

    The clamp keeps exp() in range; past it the result is within one part
    in 1e15 of 0 or 1 anyway.  Accepts scalars or arrays.
    """
    scalar = np.ndim(x) == 0
    arr = np.atleast_1d(
        np.clip(np.asarray(x, dtype=np.float64), -_LOGIT_CLAMP, _LOGIT_CLAMP))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class DesignMatrix:
    """Regressor matrix plus a flag recording whether column 0 is a constant.

    Use build() to assemble one from raw columns; it prepends the intercept
    column when asked and rejects degenerate (all-zero) regressors.
    """

    values: np.ndarray
    intercept_included: bool
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        # contiguous layout so results never depend on the caller's strides
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise ValueError("design matrix must be 2-D with at least one column")
        if not np.isfinite(vals).all():
            raise ValueError("design matrix entries must be finite")
        start = 1 if self.intercept_included else 0
        dead = ~vals[:, start:].any(axis=0)
        if dead.any():
            j = int(np.flatnonzero(dead)[0]) + start
            raise ValueError(f"column {j} is all zero")
        if self.names and len(self.names) != vals.shape[1]:
            raise ValueError("names length must match column count")
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)

    @classmethod
    def build(cls, columns, intercept: bool = True, names=None,
              n_rows: int | None = None) -> "DesignMatrix":
        """Stack 1-D columns into a design, optionally prepending an intercept.

        n_rows is only needed for an intercept-only design (no columns).
        """
        cols = [np.asarray(c, dtype=np.float64).reshape(-1) for c in columns]
        if not cols and not intercept:
            raise ValueError("no columns and no intercept")
        n = len(cols[0]) if cols else n_rows
        if intercept:
            if not n:
                raise ValueError("intercept-only design needs n_rows")
            cols = [np.ones(n)] + cols
            if names is not None:
                names = ("intercept", *names)
        return cls(np.column_stack(cols), intercept_included=intercept,
                   names=tuple(names) if names else ())

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Output of one maximum-likelihood fit."""

    coefficients: np.ndarray
    std_errors: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    separation_detected: bool
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.coefficients) != len(self.std_errors):
            raise ValueError("coefficients and std_errors must have equal length")


def _log_likelihood(y: np.ndarray, eta: np.ndarray) -> float:
    # sum y*eta - log(1 + exp(eta)), stable via logaddexp
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _check_rank(x: np.ndarray) -> None:
    # rank-revealing check on the Gram matrix; cheap (m x m) and it keeps
    # silently pseudo-inverted collinear confounders out of the results
    gram = x.T @ x
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= eigvals[-1] * x.shape[1] * np.finfo(np.float64).eps:
        raise SingularDesignError("design matrix is rank deficient")


def fit_logistic(y, X, tol: float = 1e-8, max_iter: int = 100) -> FitResult:
    """Maximum-likelihood logistic fit of binary y on the given design.

    X may be a DesignMatrix or a plain 2-D array (taken as-is, no intercept
    added).  Converges when the largest absolute coefficient update drops
    below tol.  Separated fits are flagged, not raised; a rank-deficient
    design raises SingularDesignError.
    """
    design = X if isinstance(X, DesignMatrix) else DesignMatrix(
        np.asarray(X, dtype=np.float64), intercept_included=False)
    x = design.values
    yv = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(-1))
    n, m = x.shape
    if yv.shape[0] != n:
        raise ValueError(f"y has {yv.shape[0]} rows, design has {n}")
    if not np.isin(yv, (0.0, 1.0)).all():
        raise ValueError("y entries must be 0 or 1")
    if n <= m:
        raise ValueError(f"need more observations ({n}) than regressors ({m})")
    _check_rank(x)

    beta = np.zeros(m)
    eta = np.zeros(n)
    ll = _log_likelihood(yv, eta)
    converged = False
    separated = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        mu = inverse_logit(eta)
        w = mu * (1.0 - mu)
        grad = x.T @ (yv - mu)
        hess = x.T @ (w[:, None] * x)
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("weighted normal equations are singular") from exc

        # Newton step with halving whenever the log-likelihood would drop
        step = 1.0
        while True:
            candidate = beta + step * delta
            eta_cand = x @ candidate
            ll_cand = _log_likelihood(yv, eta_cand)
            if ll_cand >= ll or step <= 2.0**-30:
                break
            step *= 0.5

        update = float(np.max(np.abs(candidate - beta)))
        beta, eta, ll = candidate, eta_cand, ll_cand

        if np.any(np.abs(beta) > _SEPARATION_COEF) or _probabilities_pinned(yv, eta):
            separated = True
            break
        if update < tol:
            converged = True
            break

    mu = inverse_logit(eta)
    w = mu * (1.0 - mu)
    hess = x.T @ (w[:, None] * x)
    try:
        covariance = np.linalg.inv(hess)
        std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    except np.linalg.LinAlgError:
        std_errors = np.full(m, np.inf)

    return FitResult(
        coefficients=beta,
        std_errors=std_errors,
        converged=converged,
        iterations=iterations,
        log_likelihood=ll,
        separation_detected=separated,
        names=design.names,
    )


def _probabilities_pinned(y: np.ndarray, eta: np.ndarray) -> bool:
    # complete separation: every fitted probability pinned to its own class
    mu = inverse_logit(eta)
    ones = y == 1.0
    if not ones.any() or ones.all():
        return False
    return bool((mu[ones] > 1.0 - _PIN_EPS).all() and (mu[~ones] < _PIN_EPS).all())


def relative_risk(beta1: float, baseline_p: float) -> float:
    """Fractional outcome change per unit predictor change.

    exp(b) / (1 + (exp(b) - 1) * p) - 1, the exact conversion of a logit
    coefficient at baseline prevalence p; approaches beta1 itself as both
    shrink.
    """
    if not 0.0 <= baseline_p < 1.0:
        raise ValueError(f"baseline_p must be in [0, 1), got {baseline_p}")
    eb = math.exp(beta1)
    return eb / (1.0 + (eb - 1.0) * baseline_p) - 1.0


def confidence_interval(fit: FitResult, index: int, level: float = 0.95) -> tuple[float, float]:
    """Two-sided normal-approximation interval for one coefficient."""
    if not fit.converged:
        raise NotConvergedError("confidence interval requires a converged fit")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    z = statistics.NormalDist().inv_cdf(0.5 + level / 2.0)
    b = float(fit.coefficients[index])
    s = float(fit.std_errors[index])
    return (b - z * s, b + z * s)


def one_hot(values, reference: int) -> tuple[np.ndarray, list[int]]:
    """Indicator columns for every category except the reference.

    Returns (matrix, kept_categories); the reference category encodes as an
    all-zero row.  Categories are the sorted distinct values observed.
    """
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError("one_hot expects a 1-D vector")
    cats = np.unique(arr)
    if cats.size < 2:
        raise ValueError("one_hot needs at least 2 distinct categories")
    if reference not in cats:
        raise ValueError(f"reference category {reference} not present")
    kept = [int(c) for c in cats if c != reference]
    cols = np.column_stack([(arr == c).astype(np.float64) for c in kept])
    return cols, kept
