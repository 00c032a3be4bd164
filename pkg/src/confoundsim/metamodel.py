"""Synthetic survey populations driven by a single latent cause.

Every respondent carries a hidden binary trait Q in {-1, +1}, drawn fair.
Each observed binary response agrees with Q with a fixed probability p in
(0.5, 1), independently per cell.  No response causes any other, yet every
pair of responses shows the same positive correlation (2p - 1)^2, which makes
these populations a clean stress test for confounder-adjusted regressions.

An optional causal increment can be injected into the dependent column
(column 0): its per-respondent success probability gets a fixed logit shift
proportional to the predictor column (column 1).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "ResponseMatrix",
    "UndefinedCorrelationError",
    "bias_of",
    "p_of",
    "theoretical_correlation",
    "draw_population",
    "sample_correlation",
    "derive_seed",
    "stream_generator",
    "write_population_csv",
]

_SEED_MAX = 2**64


class UndefinedCorrelationError(ValueError):
    """A correlation was requested for a column with zero variance."""


def bias_of(p: float) -> float:
    """Excess agreement 2p - 1 of a response with the latent trait.

    Accepts the full closed range [0, 1]; the generative model itself is
    stricter (see ModelParams).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return 2.0 * p - 1.0

def p_of(b: float) -> float:
    """Inverse of bias_of: agreement probability (b + 1) / 2."""
    if not -1.0 <= b <= 1.0:
        raise ValueError(f"bias must be in [-1, 1], got {b}")
    return (b + 1.0) / 2.0


def theoretical_correlation(p: float) -> float:
    """Pairwise correlation (2p - 1)^2 shared by every pair of responses."""
    if not 0.5 < p < 1.0:
        raise ValueError(f"p must be in (0.5, 1), got {p}")
    b = 2.0 * p - 1.0
    return b * b


@dataclass(frozen=True)
class ModelParams:
    """Configuration of one synthetic population.

    p: agreement probability, strictly between 0.5 and 1.
    k: number of regressors excluding the intercept, i.e. the predictor
       plus k - 1 confounders; the population has k + 1 response columns.
    n_respondents: population size N.
    causal_increment: logit shift added to the dependent column per unit of
       the predictor column (0 means purely spurious association).
    seed: unsigned 64-bit master seed; all randomness derives from it.
    """

    p: float
    k: int
    n_respondents: int
    seed: int
    causal_increment: float = 0.0

    def __post_init__(self) -> None:
        if not 0.5 < self.p < 1.0:
            raise ValueError(f"p must be in (0.5, 1), got {self.p}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be an integer >= 1, got {self.k}")
        if not isinstance(self.n_respondents, int) or self.n_respondents < 1:
            raise ValueError(f"n_respondents must be >= 1, got {self.n_respondents}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < _SEED_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not np.isfinite(self.causal_increment):
            raise ValueError("causal_increment must be finite")

    @property
    def bias(self) -> float:
        return bias_of(self.p)

    @property
    def correlation(self) -> float:
        return theoretical_correlation(self.p)


@dataclass(frozen=True)
class ResponseMatrix:
    """One realized population: latent traits plus the binary response table.

    responses has shape (N, k + 1): column 0 is the dependent variable,
    column 1 the predictor, columns 2..k the confounders.  Arrays are
    read-only; instances are safe to share across threads.
    """

    latent: np.ndarray
    responses: np.ndarray
    params: ModelParams

    def __post_init__(self) -> None:
        lat = np.asarray(self.latent)
        resp = np.asarray(self.responses)
        n, k = self.params.n_respondents, self.params.k
        if resp.shape != (n, k + 1):
            raise ValueError(f"responses must have shape {(n, k + 1)}, got {resp.shape}")
        if lat.shape != (n,):
            raise ValueError(f"latent must have shape {(n,)}, got {lat.shape}")
        if not np.isin(lat, (-1, 1)).all():
            raise ValueError("latent entries must be -1 or +1")
        if not np.isin(resp, (0, 1)).all():
            raise ValueError("response entries must be 0 or 1")
        lat.setflags(write=False)
        resp.setflags(write=False)

    @property
    def n_columns(self) -> int:
        return self.responses.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.responses[:, j]


def derive_seed(master: int, *indices: int) -> int:
    """Derive an independent 64-bit stream seed from a master seed.

    Keyed derivation (rather than sequential jumps) keeps parallel work
    units reproducible no matter the execution order.
    """
    state = np.random.SeedSequence((master, *indices)).generate_state(1, np.uint64)
    return int(state[0])


def stream_generator(seed: int, *indices: int) -> np.random.Generator:
    """Counter-based generator for the stream keyed by (seed, *indices)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *indices))))


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p / (1.0 - p))


def _inverse_logit(x: np.ndarray) -> np.ndarray:
    # stable two-branch sigmoid; inputs here are mild so no clamp needed
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def draw_population(params: ModelParams, column_count: int) -> ResponseMatrix:
    """Draw one population of column_count = k + 1 binary response columns.

    Latent traits are fair coin flips on {-1, +1}; each response cell agrees
    with the trait with probability p.  With a nonzero causal increment the
    dependent column is drawn with per-respondent probability
    inverse_logit(logit(p_i) + increment * predictor_i), where p_i is the
    agreement probability implied by the respondent's trait.  Bit-identical
    output for identical params.
    """
    if column_count != params.k + 1:
        raise ValueError(
            f"column_count must equal k + 1 = {params.k + 1}, got {column_count}"
        )
    n = params.n_respondents
    rng = stream_generator(params.seed)

    latent = rng.integers(0, 2, size=n, dtype=np.int8) * 2 - 1
    uniforms = rng.random((n, column_count))

    # agreement probability per respondent given the latent trait
    p_i = np.where(latent == 1, params.p, 1.0 - params.p)

    responses = np.empty((n, column_count), dtype=np.int8)
    responses[:, 1:] = uniforms[:, 1:] < p_i[:, None]
    if params.causal_increment == 0.0:
        threshold = p_i
    else:
        shift = params.causal_increment * responses[:, 1]
        threshold = _inverse_logit(_logit(p_i) + shift)
    responses[:, 0] = uniforms[:, 0] < threshold

    return ResponseMatrix(latent=latent, responses=responses, params=params)


def sample_correlation(m: ResponseMatrix, col_a: int, col_b: int) -> float:
    """Pearson correlation between two response columns.

    Raises UndefinedCorrelationError if either column is constant.
    """
    ncol = m.n_columns
    for c in (col_a, col_b):
        if not 0 <= c < ncol:
            raise IndexError(f"column index {c} out of range [0, {ncol})")
    if col_a == col_b:
        raise ValueError("column indices must be distinct")
    x = m.responses[:, col_a].astype(np.float64)
    y = m.responses[:, col_b].astype(np.float64)
    x -= x.mean()
    y -= y.mean()
    ssx = float(x @ x)
    ssy = float(y @ y)
    if ssx == 0.0 or ssy == 0.0:
        raise UndefinedCorrelationError(
            f"correlation undefined: column {col_a if ssx == 0.0 else col_b} is constant"
        )
    return float((x @ y) / (np.sqrt(ssx) * np.sqrt(ssy)))


def write_population_csv(m: ResponseMatrix, fh: io.TextIOBase) -> None:
    """Dense debugging dump: header Q,R0,...,Rk then one row per respondent.

    Not a stability-guaranteed format.
    """
    header = "Q," + ",".join(f"R{j}" for j in range(m.n_columns))
    fh.write(header + "\n")
    table = np.column_stack([m.latent, m.responses])
    for row in table:
        fh.write(",".join(str(int(v)) for v in row) + "\n")
