"""Exact buy probabilities of the stylised one-tick budget model.

Setting: every asset trades at a common price ``P``; each trader flips a fair
coin per asset (buy or sell one unit); a buy succeeds iff the trader's cash
still covers ``P``.  Under parallel clearing each asset sees the whole budget.
Under sequential clearing asset ``j`` sees what is left after the buys on
assets ``0..j-1``.

Because prices are common, the residual budget before asset ``j`` is
``B - m * P`` with ``m`` the number of earlier buys, so the sequential case is
a Markov chain on ``m in {0..K}`` with ``K = floor(B / P)``: from ``m < K`` a
buy happens with probability 1/2, and ``m = K`` is absorbing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .market import Mode

__all__ = [
    "BiasModel",
    "ProbTable",
    "OrderingVerdict",
    "affordable_units",
    "buy_count_distributions",
    "parallel_probs",
    "sequential_probs",
    "mc_probs",
    "strictness_condition",
    "check_volume_ordering",
    "close_price_ordering",
]


@dataclass(frozen=True)
class BiasModel:
    budgets: np.ndarray
    price: float
    n_assets: int

    def __post_init__(self) -> None:
        budgets = np.atleast_1d(np.asarray(self.budgets, dtype=np.float64))
        object.__setattr__(self, "budgets", budgets)
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError(f"price must be positive, got {self.price!r}")
        if budgets.ndim != 1 or budgets.size == 0:
            raise ValueError("budgets must be a non-empty vector")
        if (budgets < 0).any() or not np.isfinite(budgets).all():
            raise ValueError("budgets must be finite and non-negative")
        if not isinstance(self.n_assets, (int, np.integer)) or self.n_assets < 1:
            raise ValueError(f"n_assets must be a positive integer, got {self.n_assets!r}")

    @classmethod
    def identical(cls, n_traders: int, budget: float, price: float, n_assets: int) -> "BiasModel":
        return cls(np.full(n_traders, float(budget)), price, n_assets)


@dataclass
class ProbTable:
    """Per-trader, per-asset buy probabilities and their column sums."""

    p: np.ndarray
    expected_volume: np.ndarray
    stderr: np.ndarray | None = None
    volume_stderr: np.ndarray | None = None

    @classmethod
    def from_p(cls, p: np.ndarray) -> "ProbTable":
        return cls(p, p.sum(axis=0))

    def rows(self):
        n, j = self.p.shape
        for i in range(n):
            for a in range(j):
                yield i, a, float(self.p[i, a])


def affordable_units(budget: float, price: float) -> int:
    """Largest ``k`` with ``k * price <= budget`` (exact at the boundary)."""
    k = int(math.floor(budget / price))
    while (k + 1) * price <= budget:
        k += 1
    while k > 0 and k * price > budget:
        k -= 1
    return k


def buy_count_distributions(model: BiasModel) -> np.ndarray:
    """Distribution of earlier buys before each asset under sequential clearing.

    Returns ``dist`` of shape ``(N, J, M + 1)`` where ``dist[i, j, m]`` is the
    probability that trader ``i`` bought ``m`` units among assets ``0..j-1``
    and ``M = min(max K_i, J)``.
    """
    n, n_assets = model.budgets.size, model.n_assets
    ks = np.array([affordable_units(b, model.price) for b in model.budgets])
    width = int(min(ks.max(initial=0), n_assets)) + 1
    dist = np.zeros((n, n_assets, width))
    for i, k in enumerate(ks):
        k = min(int(k), width - 1)
        cur = np.zeros(width)
        cur[0] = 1.0
        for j in range(n_assets):
            dist[i, j] = cur
            nxt = np.zeros(width)
            nxt[k] += cur[k]
            nxt[:k] += 0.5 * cur[:k]
            nxt[1 : k + 1] += 0.5 * cur[:k]
            cur = nxt
    return dist


def parallel_probs(model: BiasModel) -> ProbTable:
    """Each asset sees the untouched budget: ``p = 1/2`` iff ``B >= P``."""
    row = np.where(model.budgets >= model.price, 0.5, 0.0)
    return ProbTable.from_p(np.repeat(row[:, None], model.n_assets, axis=1))


def sequential_probs(model: BiasModel) -> ProbTable:
    """``p[i, j] = 1/2 * Pr(residual budget before j >= P)`` by exact recursion."""
    dist = buy_count_distributions(model)
    ks = np.array([affordable_units(b, model.price) for b in model.budgets])
    m = np.arange(dist.shape[2])
    can_buy = m[None, :] < ks[:, None]  # (N, M+1)
    p = 0.5 * np.einsum("ijm,im->ij", dist, can_buy.astype(np.float64))
    return ProbTable.from_p(p)


def mc_probs(model: BiasModel, regime: Mode | str, trials: int, seed: int = 0) -> ProbTable:
    """Monte Carlo estimate by direct simulation of the coin-flip model.

    Independent of the recursion above: draws the buy/sell signs, walks the
    assets with an explicit residual budget, counts successful buys.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    regime = Mode(regime)
    rng = np.random.default_rng(seed)
    n, n_assets = model.budgets.size, model.n_assets
    counts = np.zeros((n, n_assets), dtype=np.int64)
    chunk = max(1, min(trials, 2_000_000 // max(n * n_assets, 1)))
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        wants_buy = rng.random((size, n, n_assets)) < 0.5
        budget = np.broadcast_to(model.budgets, (size, n)).copy()
        for j in range(n_assets):
            if regime is Mode.SEQUENTIAL:
                bought = wants_buy[:, :, j] & (budget >= model.price)
                budget -= model.price * bought
            else:
                bought = wants_buy[:, :, j] & (model.budgets >= model.price)[None, :]
            counts[:, j] += bought.sum(axis=0)
        done += size
    p = counts / trials
    se = np.sqrt(p * (1.0 - p) / trials)
    return ProbTable(p, p.sum(axis=0), se, np.sqrt((se**2).sum(axis=0)))


def strictness_condition(model: BiasModel) -> np.ndarray:
    """Boolean per step ``j = 1..J-1`` (0-based asset ``j`` vs ``j-1``).

    True when some trader has positive probability of holding a residual
    budget in ``[P, 2P)`` before asset ``j-1``: exactly the case in which one
    more buy there can lock the trader out of asset ``j``.
    """
    J = model.n_assets
    if J < 2:
        return np.zeros(0, dtype=bool)
    dist = buy_count_distributions(model)
    ks = np.array([affordable_units(b, model.price) for b in model.budgets])
    out = np.zeros(J - 1, dtype=bool)
    for step in range(1, J):
        # residual in [P, 2P) <=> exactly one more unit affordable: m == K - 1
        for i, k in enumerate(ks):
            if k >= 1 and k - 1 < dist.shape[2] and dist[i, step - 1, k - 1] > 0:
                out[step - 1] = True
                break
    return out


@dataclass
class OrderingVerdict:
    regime: str
    ordering: str  # "equal", "non-increasing" or "violated"
    segments: list[str]  # per step j-1 -> j: "strict", "weak" or "violated"
    strict_expected: list[bool] | None = None
    consistent: bool = True

    @property
    def ok(self) -> bool:
        return self.ordering != "violated" and self.consistent

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "ordering": self.ordering,
            "segments": self.segments,
            "strict_expected": self.strict_expected,
            "consistent": self.consistent,
            "ok": self.ok,
        }


def check_volume_ordering(
    table: ProbTable,
    regime: Mode | str,
    model: BiasModel | None = None,
    *,
    tol: float = 1e-12,
) -> OrderingVerdict:
    """Classify the expected-volume profile across assets.

    Parallel profiles must be flat.  Sequential profiles must be
    non-increasing; with ``model`` supplied, each step must also be strict
    exactly where :func:`strictness_condition` holds.
    """
    regime = Mode(regime)
    v = np.asarray(table.expected_volume, dtype=np.float64)
    diffs = v[1:] - v[:-1]
    segments = ["strict" if d < -tol else "weak" if abs(d) <= tol else "violated" for d in diffs]
    if regime is Mode.SEQUENTIAL:
        ordering = "violated" if "violated" in segments else (
            "equal" if all(s == "weak" for s in segments) else "non-increasing"
        )
        if model is None:
            return OrderingVerdict(regime.value, ordering, segments)
        expected = strictness_condition(model).tolist()
        consistent = all((s == "strict") == e for s, e in zip(segments, expected))
        return OrderingVerdict(regime.value, ordering, segments, expected, consistent)
    flat = all(abs(d) <= tol for d in diffs)
    return OrderingVerdict(regime.value, "equal" if flat else "violated", segments)


def close_price_ordering(
    expected_volumes: Sequence[float],
    impact: Callable[[float], float],
    price: float,
    *,
    probes: int = 65,
) -> tuple[np.ndarray, list[str]]:
    """Expected closes ``price + impact(E[V_j])`` and their step ordering.

    ``impact`` must be strictly increasing; it is probed on the given volumes
    and on an even grid across their range, and rejected otherwise.
    """
    v = np.asarray(expected_volumes, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    grid = np.unique(np.concatenate([v, np.linspace(lo, hi, probes) if hi > lo else v]))
    values = np.array([impact(x) for x in grid], dtype=np.float64)
    if grid.size > 1 and not (np.diff(values) > 0).all():
        raise ValueError("impact must be strictly increasing")
    closes = price + np.array([impact(x) for x in v], dtype=np.float64)
    steps = [
        "down" if b < a else "up" if b > a else "equal" for a, b in zip(closes[:-1], closes[1:])
    ]
    return closes, steps
