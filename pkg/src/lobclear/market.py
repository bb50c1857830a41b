"""Domain types, order book mechanics and trade settlement.

Everything here is shared by the agent, clearing and CLI layers.  Prices are
float64; share holdings are integers.  Asset and trader indices are 0-based.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

__all__ = [
    "Side",
    "Mode",
    "Proceeds",
    "Order",
    "Trade",
    "TraderState",
    "Traders",
    "OrderBook",
    "PriceSeries",
    "SimConfig",
    "MatchingError",
    "SettlementError",
    "InvariantViolation",
    "insert_order",
    "best_bid",
    "best_ask",
    "mid_price",
    "apply_trade",
    "check_conservation",
    "read_trades_csv",
]


class MatchingError(RuntimeError):
    """Matcher logic error (uncrossed book, inverted quotes, malformed order)."""


class SettlementError(RuntimeError):
    """A trade reached settlement without passing validation."""


class InvariantViolation(AssertionError):
    """Money/share conservation or non-negativity broke."""


class Side(enum.IntEnum):
    BID = 1
    ASK = -1


class Mode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"
    PARALLEL_DETERMINISTIC = "parallel_deterministic"


class Proceeds(str, enum.Enum):
    """When a seller's cash from a sale becomes spendable.

    ``DEFERRED`` credits sale proceeds after the whole tick has cleared, so
    within a tick a trader can only spend the cash held at its start.
    ``IMMEDIATE`` credits the seller the moment the trade settles.
    """

    DEFERRED = "deferred"
    IMMEDIATE = "immediate"


@dataclass(frozen=True, slots=True)
class Order:
    asset: int
    side: Side
    limit_price: float
    owner: int
    seq: int
    quantity: int = 1

    def __post_init__(self) -> None:
        if not (self.limit_price > 0.0) or not math.isfinite(self.limit_price):
            raise MatchingError(f"order limit price must be positive, got {self.limit_price!r}")
        if self.quantity < 1:
            raise MatchingError(f"order quantity must be >= 1, got {self.quantity!r}")


@dataclass(frozen=True, slots=True)
class Trade:
    asset: int
    buyer: int
    seller: int
    price: float
    quantity: int = 1
    tick: int = 0
    intra_tick_index: int = 0
    bid_limit: float = math.nan
    ask_limit: float = math.nan


@dataclass(slots=True)
class TraderState:
    """Snapshot of one agent's holdings.

    ``pending`` holds sale proceeds not yet spendable (deferred settlement);
    it is always zero between ticks.
    """

    trader_id: int
    cash: float
    shares: np.ndarray
    pending: float = 0.0

    def wealth(self, prices: np.ndarray) -> float:
        return self.cash + self.pending + float(np.dot(self.shares, prices))


class Traders:
    """Array-backed population of ``n`` traders holding ``n_assets`` assets."""

    def __init__(self, cash: np.ndarray, shares: np.ndarray) -> None:
        self.cash = np.ascontiguousarray(cash, dtype=np.float64)
        self.shares = np.ascontiguousarray(shares, dtype=np.int64)
        if self.shares.ndim != 2 or self.shares.shape[0] != self.cash.shape[0]:
            raise ValueError("shares must be an (n_traders, n_assets) matrix")
        self.pending = np.zeros_like(self.cash)

    @classmethod
    def uniform(cls, n: int, n_assets: int, cash: float, shares: int) -> "Traders":
        return cls(np.full(n, float(cash)), np.full((n, n_assets), int(shares), dtype=np.int64))

    def __len__(self) -> int:
        return self.cash.shape[0]

    @property
    def n_assets(self) -> int:
        return self.shares.shape[1]

    def state(self, i: int) -> TraderState:
        return TraderState(i, float(self.cash[i]), self.shares[i].copy(), float(self.pending[i]))

    def settle_pending(self) -> None:
        """Make deferred sale proceeds spendable (end of tick)."""
        self.cash += self.pending
        self.pending[:] = 0.0

    def copy(self) -> "Traders":
        out = Traders(self.cash.copy(), self.shares.copy())
        out.pending = self.pending.copy()
        return out


class OrderBook:
    """Bids and asks of one asset under price-time priority.

    Bids are ordered by (limit price desc, seq asc); asks by (limit price asc,
    seq asc).  Both sides are binary heaps.
    """

    def __init__(self, asset: int) -> None:
        self.asset = asset
        self._bids: list[tuple[float, int, Order]] = []
        self._asks: list[tuple[float, int, Order]] = []

    def __len__(self) -> int:
        return len(self._bids) + len(self._asks)

    @property
    def n_bids(self) -> int:
        return len(self._bids)

    @property
    def n_asks(self) -> int:
        return len(self._asks)

    def insert(self, order: Order) -> None:
        if order.asset != self.asset:
            raise MatchingError(f"order for asset {order.asset} sent to book {self.asset}")
        if order.side is Side.BID:
            heapq.heappush(self._bids, (-order.limit_price, order.seq, order))
        else:
            heapq.heappush(self._asks, (order.limit_price, order.seq, order))

    def top_bid(self) -> Order | None:
        return self._bids[0][2] if self._bids else None

    def top_ask(self) -> Order | None:
        return self._asks[0][2] if self._asks else None

    def pop_bid(self) -> Order:
        return heapq.heappop(self._bids)[2]

    def pop_ask(self) -> Order:
        return heapq.heappop(self._asks)[2]

    def bids(self) -> list[Order]:
        """Bids in priority order."""
        return [entry[2] for entry in sorted(self._bids)]

    def asks(self) -> list[Order]:
        """Asks in priority order."""
        return [entry[2] for entry in sorted(self._asks)]

    def clear(self) -> None:
        self._bids.clear()
        self._asks.clear()


def insert_order(book: OrderBook, order: Order) -> OrderBook:
    book.insert(order)
    return book


def best_bid(book: OrderBook) -> float | None:
    top = book.top_bid()
    return None if top is None else top.limit_price


def best_ask(book: OrderBook) -> float | None:
    top = book.top_ask()
    return None if top is None else top.limit_price


def mid_price(bid_limit: float, ask_limit: float) -> float:
    """Settlement price of a crossed pair: the mean of the two limits."""
    if bid_limit < ask_limit:
        raise MatchingError(f"bid {bid_limit} below ask {ask_limit}: books do not cross")
    return 0.5 * (bid_limit + ask_limit)


def apply_trade(traders: Traders, trade: Trade, *, defer_proceeds: bool = False) -> Traders:
    """Move cash buyer -> seller and shares seller -> buyer, in place.

    With ``defer_proceeds`` the seller's cash lands in ``traders.pending``
    rather than in spendable cash.
    """
    j, b, s, q = trade.asset, trade.buyer, trade.seller, trade.quantity
    cost = trade.price * q
    if traders.cash[b] < cost:
        raise SettlementError(f"buyer {b} holds {traders.cash[b]} < cost {cost}")
    if traders.shares[s, j] < q:
        raise SettlementError(f"seller {s} holds {traders.shares[s, j]} < {q} shares of asset {j}")
    traders.cash[b] -= cost
    if defer_proceeds:
        traders.pending[s] += cost
    else:
        traders.cash[s] += cost
    traders.shares[b, j] += q
    traders.shares[s, j] -= q
    return traders


def check_conservation(
    cash: np.ndarray,
    shares: np.ndarray,
    total_cash: float,
    total_shares: np.ndarray,
    *,
    pending: np.ndarray | None = None,
    rtol: float = 1e-9,
    where: str = "",
) -> None:
    """Raise :class:`InvariantViolation` if holdings drifted or went negative."""
    money = float(cash.sum()) + (float(pending.sum()) if pending is not None else 0.0)
    if abs(money - total_cash) > rtol * max(abs(total_cash), 1.0):
        raise InvariantViolation(f"{where}money {money!r} != {total_cash!r}")
    held = shares.sum(axis=0)
    if not np.array_equal(held, total_shares):
        raise InvariantViolation(f"{where}shares {held.tolist()} != {np.asarray(total_shares).tolist()}")
    if cash.size and cash.min() < 0.0:
        raise InvariantViolation(f"{where}negative cash {cash.min()!r}")
    if shares.size and shares.min() < 0:
        raise InvariantViolation(f"{where}negative shares {shares.min()!r}")


@dataclass
class PriceSeries:
    """Closing prices and volumes, one row per tick (tick t is row t-1)."""

    closes: np.ndarray
    volumes: np.ndarray
    trades: list[Trade] | None = None
    rejected: np.ndarray | None = None
    order_digests: list[str] | None = None

    def __post_init__(self) -> None:
        self.closes = np.asarray(self.closes, dtype=np.float64)
        self.volumes = np.asarray(self.volumes, dtype=np.int64)
        if self.closes.ndim != 2 or self.closes.shape != self.volumes.shape:
            raise ValueError("closes and volumes must be matching T x J matrices")

    @property
    def horizon(self) -> int:
        return self.closes.shape[0]

    @property
    def n_assets(self) -> int:
        return self.closes.shape[1]

    def header(self) -> list[str]:
        j = self.n_assets
        return ["tick"] + [f"P_{a}" for a in range(1, j + 1)] + [f"V_{a}" for a in range(1, j + 1)]

    def write_csv(self, out: str | os.PathLike | TextIO) -> None:
        if isinstance(out, (str, os.PathLike)):
            with open(out, "w", newline="") as fh:
                self.write_csv(fh)
            return
        out.write(",".join(self.header()) + "\n")
        for t in range(self.horizon):
            prices = ",".join(f"{p:.6f}" for p in self.closes[t])
            vols = ",".join(str(int(v)) for v in self.volumes[t])
            out.write(f"{t + 1},{prices},{vols}\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, src: str | os.PathLike | TextIO) -> "PriceSeries":
        if isinstance(src, (str, os.PathLike)):
            with open(src, newline="") as fh:
                return cls.read_csv(fh)
        reader = csv.reader(src)
        header = next(reader)
        if not header or header[0] != "tick" or (len(header) - 1) % 2:
            raise ValueError(f"not a price series header: {header!r}")
        j = (len(header) - 1) // 2
        expected = ["tick"] + [f"P_{a}" for a in range(1, j + 1)] + [f"V_{a}" for a in range(1, j + 1)]
        if header != expected:
            raise ValueError(f"unexpected columns {header!r}")
        rows = [row for row in reader if row]
        closes = np.array([[float(x) for x in row[1 : j + 1]] for row in rows], dtype=np.float64)
        volumes = np.array([[int(x) for x in row[j + 1 :]] for row in rows], dtype=np.int64)
        return cls(closes.reshape(len(rows), j), volumes.reshape(len(rows), j))

    def write_trades_csv(self, out: str | os.PathLike | TextIO) -> None:
        if self.trades is None:
            raise ValueError("series was produced without a trade log")
        if isinstance(out, (str, os.PathLike)):
            with open(out, "w", newline="") as fh:
                self.write_trades_csv(fh)
            return
        out.write("tick,asset,k,buyer,seller,price,qty\n")
        for tr in self.trades:
            out.write(
                f"{tr.tick},{tr.asset},{tr.intra_tick_index},{tr.buyer},{tr.seller},"
                f"{tr.price:.6f},{tr.quantity}\n"
            )


def read_trades_csv(src: str | os.PathLike | TextIO) -> list[Trade]:
    if isinstance(src, (str, os.PathLike)):
        with open(src, newline="") as fh:
            return read_trades_csv(fh)
    reader = csv.DictReader(src)
    return [
        Trade(
            asset=int(r["asset"]),
            buyer=int(r["buyer"]),
            seller=int(r["seller"]),
            price=float(r["price"]),
            quantity=int(r["qty"]),
            tick=int(r["tick"]),
            intra_tick_index=int(r["k"]),
        )
        for r in reader
    ]


@dataclass(frozen=True)
class SimConfig:
    """One market run.  Defaults are the reference five-asset setup."""

    n_traders: int = 10_000
    n_assets: int = 5
    horizon: int = 5_000
    initial_cash: float = 200.0
    initial_shares: int = 10
    initial_price: float = 10.0
    sigma: float = 0.15
    mode: Mode = Mode.SEQUENTIAL
    seed: int = 0
    proceeds: Proceeds = Proceeds.DEFERRED
    order_size: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "proceeds", Proceeds(self.proceeds))
        problems = list(self.validation_errors())
        if problems:
            raise ValueError("invalid SimConfig: " + "; ".join(problems))

    def validation_errors(self) -> Iterable[str]:
        def is_int(v: object) -> bool:
            return isinstance(v, (int, np.integer)) and not isinstance(v, bool)

        for name in ("n_traders", "n_assets"):
            v = getattr(self, name)
            if not is_int(v) or v < 1:
                yield f"{name} must be a positive integer, got {v!r}"
        if not is_int(self.horizon) or self.horizon < 0:
            yield f"horizon must be a non-negative integer, got {self.horizon!r}"
        if not isinstance(self.initial_cash, (int, float)) or not (
            math.isfinite(self.initial_cash) and self.initial_cash >= 0
        ):
            yield f"initial_cash must be a finite non-negative number, got {self.initial_cash!r}"
        if not is_int(self.initial_shares) or self.initial_shares < 0:
            yield f"initial_shares must be a non-negative integer, got {self.initial_shares!r}"
        if not isinstance(self.initial_price, (int, float)) or not (
            math.isfinite(self.initial_price) and self.initial_price > 0
        ):
            yield f"initial_price must be positive, got {self.initial_price!r}"
        if not isinstance(self.sigma, (int, float)) or not (0.0 < self.sigma < 1.0):
            yield f"sigma must lie in (0, 1), got {self.sigma!r}"
        if not is_int(self.seed) or not (0 <= self.seed < 2**64):
            yield f"seed must be an unsigned 64-bit integer, got {self.seed!r}"
        if self.order_size != 1:
            yield f"order_size must be 1 (multi-unit orders are unsupported), got {self.order_size!r}"

    def replace(self, **changes) -> "SimConfig":
        values = {f: getattr(self, f) for f in FIELDS}
        values.update(changes)
        return SimConfig(**values)

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in FIELDS}
        out["mode"] = self.mode.value
        out["proceeds"] = self.proceeds.value
        return out


FIELDS = (
    "n_traders",
    "n_assets",
    "horizon",
    "initial_cash",
    "initial_shares",
    "initial_price",
    "sigma",
    "mode",
    "seed",
    "proceeds",
    "order_size",
)
