from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


def dataset_from_2x2(a: int, b: int, c: int, d: int):
    """Expand 2x2 cell counts into (y, x) vectors.

    a: y=1,x=1   b: y=1,x=0   c: y=0,x=1   d: y=0,x=0
    """
    y = np.concatenate([np.ones(a + b), np.zeros(c + d)])
    x = np.concatenate([np.ones(a), np.zeros(b), np.ones(c), np.zeros(d)])
    return y, x


def log_odds_ratio(a: int, b: int, c: int, d: int) -> float:
    """Closed-form 2x2 oracle for the slope of y on x (with intercept)."""
    return float(np.log((a * d) / (b * c)))


def log_odds_ratio_se(a: int, b: int, c: int, d: int) -> float:
    """Closed-form standard error of the 2x2 log odds ratio."""
    return float(np.sqrt(1 / a + 1 / b + 1 / c + 1 / d))
