"""Stationarity, location and scale tests for simulated price trajectories.

Kruskal-Wallis, Bartlett, Spearman and the augmented Dickey-Fuller regression
are computed here directly with numpy.  Tail probabilities come from
``scipy.special`` (regularised incomplete gamma, normal CDF).  ADF p-values
use MacKinnon's response-surface coefficients; see ``MACKINNON.md``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .market import PriceSeries

__all__ = [
    "TestResult",
    "StatisticsError",
    "DegenerateInput",
    "schwert_lags",
    "adf_test",
    "mackinnon_pvalue",
    "mackinnon_critical_values",
    "kruskal_wallis",
    "bartlett",
    "chi_square_sf",
    "rank_average",
    "spearman_rank",
    "terminal_summary",
]


class StatisticsError(ValueError):
    """Input does not satisfy a test's preconditions."""


class DegenerateInput(StatisticsError):
    """The statistic is undefined for this input (e.g. all values tied)."""


@dataclass
class TestResult:
    statistic: float
    p_value: float
    detail: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, **self.detail}


# MacKinnon (1994) response surface, constant-only regression, one variable.
_TAU_STAR = -1.61
_TAU_MIN = -18.83
_TAU_MAX = 2.74
_SMALLP = (2.1659, 1.4412, 3.8269e-2)
_LARGEP = (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2)
# MacKinnon (2010) finite-sample critical values: b0 + b1/T + b2/T^2 + b3/T^3
_CRIT_2010 = {
    "1%": (-3.43035, -6.5393, -16.786, -79.433),
    "5%": (-2.86154, -2.8903, -4.234, -40.040),
    "10%": (-2.56677, -1.5384, -2.809, 0.0),
}


def _poly(coefs: Sequence[float], x: float) -> float:
    return sum(c * x**i for i, c in enumerate(coefs))


def mackinnon_pvalue(stat: float) -> float:
    """Approximate p-value of an ADF t-statistic (constant, no trend)."""
    if stat > _TAU_MAX:
        return 1.0
    if stat < _TAU_MIN:
        return 0.0
    coefs = _SMALLP if stat <= _TAU_STAR else _LARGEP
    return float(special.ndtr(_poly(coefs, stat)))


def mackinnon_critical_values(nobs: int) -> dict[str, float]:
    return {k: _poly(b, 1.0 / nobs) for k, b in _CRIT_2010.items()}


def schwert_lags(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(series: Sequence[float], lags: int | None = None) -> TestResult:
    """Augmented Dickey-Fuller test with a constant and ``lags`` lagged diffs.

    Regresses ``dy_t`` on ``[y_{t-1}, dy_{t-1}, ..., dy_{t-lags}, 1]`` and
    returns the t-ratio of the ``y_{t-1}`` coefficient.  ``lags`` defaults to
    Schwert's ``floor(12 (T/100)^(1/4))``.
    """
    y = np.asarray(series, dtype=np.float64).ravel()
    n = y.size
    if lags is None:
        lags = schwert_lags(n)
    if lags < 0:
        raise StatisticsError("lags must be non-negative")
    if n < 20 + lags:
        raise StatisticsError(f"series of length {n} too short for {lags} lags (need >= {20 + lags})")
    if not np.isfinite(y).all():
        raise StatisticsError("series contains non-finite values")
    if np.ptp(y) == 0.0:
        raise DegenerateInput("constant series: ADF regression is singular")

    dy = np.diff(y)
    nobs = dy.size - lags
    target = dy[lags:]
    cols = [y[lags:-1]]
    for i in range(1, lags + 1):
        cols.append(dy[lags - i : dy.size - i])
    cols.append(np.ones(nobs))
    X = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        raise DegenerateInput("ADF design matrix is rank deficient")
    resid = target - X @ beta
    dof = nobs - X.shape[1]
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = math.sqrt(cov[0, 0])
    if se == 0.0:
        raise DegenerateInput("zero residual variance in ADF regression")
    stat = float(beta[0] / se)
    return TestResult(
        stat,
        mackinnon_pvalue(stat),
        {"lags": lags, "nobs": nobs, "critical_values": mackinnon_critical_values(nobs)},
    )


def chi_square_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution, ``Q(df/2, x/2)``."""
    if df <= 0:
        raise StatisticsError("df must be positive")
    if x < 0:
        raise StatisticsError("x must be non-negative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def rank_average(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-based ranks with ties averaged, plus the sizes of the tie groups."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [values.size]])
    avg = (starts + ends + 1) / 2.0  # mean of ranks start+1..end
    ranks = np.empty(values.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks, ends - starts


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> TestResult:
    """Rank-based H statistic with tie correction; chi-square(g-1) p-value."""
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(arrays) < 2:
        raise StatisticsError("need at least two groups")
    if any(a.size == 0 for a in arrays):
        raise StatisticsError("every group must be non-empty")
    sizes = np.array([a.size for a in arrays])
    n = int(sizes.sum())
    ranks, ties = rank_average(np.concatenate(arrays))
    correction = 1.0 - float((ties.astype(np.float64) ** 3 - ties).sum()) / (float(n) ** 3 - n)
    if correction <= 0.0:
        raise DegenerateInput("all observations are identical")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rank_sums = np.array([ranks[bounds[i] : bounds[i + 1]].sum() for i in range(len(arrays))])
    h = 12.0 / (n * (n + 1.0)) * float((rank_sums**2 / sizes).sum()) - 3.0 * (n + 1.0)
    h /= correction
    df = len(arrays) - 1
    return TestResult(h, chi_square_sf(max(h, 0.0), df), {"df": df, "sizes": sizes.tolist(), "tie_correction": correction})


def bartlett(groups: Sequence[Sequence[float]]) -> TestResult:
    """Bartlett's test for equal variances across groups."""
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    k = len(arrays)
    if k < 2:
        raise StatisticsError("need at least two groups")
    if any(a.size < 2 for a in arrays):
        raise StatisticsError("every group needs at least two observations")
    sizes = np.array([a.size for a in arrays], dtype=np.float64)
    variances = np.array([a.var(ddof=1) for a in arrays])
    if (variances <= 0).any():
        bad = int(np.flatnonzero(variances <= 0)[0])
        raise DegenerateInput(f"group {bad} has zero variance")
    n = sizes.sum()
    pooled = float(((sizes - 1) * variances).sum() / (n - k))
    num = (n - k) * math.log(pooled) - float(((sizes - 1) * np.log(variances)).sum())
    den = 1.0 + (float((1.0 / (sizes - 1)).sum()) - 1.0 / (n - k)) / (3.0 * (k - 1))
    stat = max(num / den, 0.0)
    return TestResult(stat, chi_square_sf(stat, k - 1), {"df": k - 1, "variances": variances.tolist()})


def spearman_rank(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise StatisticsError("spearman needs two equal-length vectors of length >= 2")
    rx, _ = rank_average(x)
    ry, _ = rank_average(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise DegenerateInput("spearman correlation undefined for constant input")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def terminal_summary(series: PriceSeries | np.ndarray, window: int = 1) -> dict:
    """Cross-asset mean and (population) std of terminal prices.

    The terminal price of an asset is its mean close over the last ``window``
    ticks; ``window=1`` is the final close.
    """
    closes = series.closes if isinstance(series, PriceSeries) else np.asarray(series, dtype=np.float64)
    if window < 1 or window > closes.shape[0]:
        raise StatisticsError(f"window must be in [1, {closes.shape[0]}], got {window}")
    terminal = closes[-window:].mean(axis=0)
    return {"mean": float(terminal.mean()), "std": float(terminal.std()), "per_asset_terminal": terminal.tolist()}
