"""Statistical primitives: percentile bootstrap intervals and Spearman
rank correlation with tie handling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "BootstrapCI",
    "RankCorrelation",
    "bootstrap_ci",
    "spearman",
    "DEFAULT_N_BOOT",
    "DEFAULT_LEVEL",
]

DEFAULT_N_BOOT = 1000
DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lower: float
    upper: float
    level: float
    n_boot: int
    seed: int


@dataclass(frozen=True)
class RankCorrelation:
    """Spearman rho with the tie bookkeeping used to compute it.

    num_ties_x / num_ties_y count duplicate elements beyond the first
    occurrence of each value (n minus the number of distinct values).
    """

    rho: float
    n: int
    num_ties_x: int
    num_ties_y: int


def bootstrap_ci(
    values,
    statistic: Callable[[np.ndarray], float] | None = None,
    n_boot: int = DEFAULT_N_BOOT,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
) -> BootstrapCI:
    """Two-sided percentile bootstrap interval for a statistic of ``values``.

    Args:
        values: nonempty 1-d sample.
        statistic: aggregate mapping a 1-d array to a float; the mean when
            omitted.
        n_boot: number of with-replacement resamples.
        level: two-sided coverage level in (0, 1).
        seed: generator seed; identical seeds give identical intervals.

    The full resample index matrix is drawn up front from one seeded
    generator, so results do not depend on evaluation order or worker
    scheduling.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty values")
    if not np.isfinite(x).all():
        raise ValueError("non-finite entry in values")
    if n_boot < 1:
        raise ValueError(f"n_boot must be positive, got {n_boot}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")

    n = x.size
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_boot, n))
    if statistic is None:
        point = float(x.mean())
        resampled = x[idx].mean(axis=1)
    else:
        point = float(statistic(x))
        resampled = np.array([statistic(x[row]) for row in idx], dtype=np.float64)

    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(resampled, [tail, 1.0 - tail])
    return BootstrapCI(
        point=point,
        lower=float(lower),
        upper=float(upper),
        level=level,
        n_boot=n_boot,
        seed=seed,
    )


def _excess_duplicates(x: np.ndarray) -> int:
    return int(x.size - np.unique(x).size)


def spearman(x, y) -> RankCorrelation:
    """Spearman correlation: Pearson correlation of fractional average ranks.

    Ties receive the mean of the ranks they occupy, so the result is exact on
    tied data and invariant under strictly monotone transforms of either
    argument.

    Raises:
        ValueError: mismatched lengths, fewer than 2 observations, or zero
            rank variance in either input ("degenerate ranks").
    """
    xa = np.asarray(x, dtype=np.float64).ravel()
    ya = np.asarray(y, dtype=np.float64).ravel()
    if xa.size != ya.size:
        raise ValueError(f"length mismatch: {xa.size} vs {ya.size}")
    if xa.size < 2:
        raise ValueError(f"need at least 2 observations, got {xa.size}")
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise ValueError("non-finite entry in correlation input")

    rx = rankdata(xa, method="average")
    ry = rankdata(ya, method="average")
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ValueError("degenerate ranks: an input is constant")
    rho = float(np.corrcoef(rx, ry)[0, 1])
    return RankCorrelation(
        rho=rho,
        n=int(xa.size),
        num_ties_x=_excess_duplicates(xa),
        num_ties_y=_excess_duplicates(ya),
    )
