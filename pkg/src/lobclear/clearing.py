"""Sequential, parallel and round-robin clearing over one tick's submitted books.

Two implementations of the same semantics live here:

* object level (``clear_sequential`` & co.) over :class:`OrderBook` heaps and
  :class:`Trade` records; readable and used for small cases and cross-checks;
* compiled level (:mod:`lobclear._kernels`) over priority-sorted arrays; used
  by :func:`run_simulation` for realistic population sizes.

Both consume identical order flow and must produce identical results for the
deterministic regimes.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .agents import order_flow_digest, order_phase, submit_flow
from .market import (
    MatchingError,
    Mode,
    OrderBook,
    PriceSeries,
    Proceeds,
    SimConfig,
    Trade,
    Traders,
    apply_trade,
    check_conservation,
    mid_price,
)

__all__ = [
    "ClearingOutcome",
    "ClearingError",
    "exist_possible_trade",
    "match_one_unit",
    "validate_trade",
    "finalize_trade",
    "clear_sequential",
    "clear_parallel",
    "clear_parallel_deterministic",
    "run_simulation",
    "CLEARERS",
    "FlowClearer",
]

log = logging.getLogger(__name__)


class ClearingError(RuntimeError):
    """A clearing worker failed; the tick was aborted."""


@dataclass
class ClearingOutcome:
    closes: np.ndarray
    volumes: np.ndarray
    trades: list[Trade] = field(default_factory=list)
    rejected: int = 0

    @classmethod
    def start(cls, prev_closes: np.ndarray) -> "ClearingOutcome":
        closes = np.array(prev_closes, dtype=np.float64, copy=True)
        return cls(closes, np.zeros(closes.size, dtype=np.int64))


def exist_possible_trade(book: OrderBook) -> bool:
    bid, ask = book.top_bid(), book.top_ask()
    return bid is not None and ask is not None and bid.limit_price >= ask.limit_price


def match_one_unit(book: OrderBook, tick: int = 0, k: int = 0) -> Trade:
    """Pair best bid with best ask at the mid-price; both stay in the book."""
    if not exist_possible_trade(book):
        raise MatchingError(f"book {book.asset} has no crossing pair")
    bid, ask = book.top_bid(), book.top_ask()
    return Trade(
        asset=book.asset,
        buyer=bid.owner,
        seller=ask.owner,
        price=mid_price(bid.limit_price, ask.limit_price),
        quantity=1,
        tick=tick,
        intra_tick_index=k,
        bid_limit=bid.limit_price,
        ask_limit=ask.limit_price,
    )


def _feasibility(traders: Traders, trade: Trade) -> tuple[bool, bool]:
    buyer_ok = bool(traders.cash[trade.buyer] >= trade.price * trade.quantity)
    seller_ok = bool(traders.shares[trade.seller, trade.asset] >= trade.quantity)
    return buyer_ok, seller_ok


def validate_trade(traders: Traders, trade: Trade) -> bool:
    """Buyer can pay and seller holds the shares, given holdings right now."""
    buyer_ok, seller_ok = _feasibility(traders, trade)
    return buyer_ok and seller_ok


def finalize_trade(
    book: OrderBook,
    traders: Traders,
    trade: Trade,
    valid: bool,
    outcome: ClearingOutcome,
    *,
    defer_proceeds: bool = False,
) -> ClearingOutcome:
    """Settle a validated match, or drop only the infeasible side(s).

    A feasible counterparty is never touched, so it keeps its place at the
    top of its side of the book.
    """
    if valid:
        book.pop_bid()
        book.pop_ask()
        apply_trade(traders, trade, defer_proceeds=defer_proceeds)
        outcome.trades.append(trade)
        outcome.volumes[trade.asset] += 1
        outcome.closes[trade.asset] = trade.price
        return outcome
    buyer_ok, seller_ok = _feasibility(traders, trade)
    if buyer_ok and seller_ok:
        raise MatchingError("finalize_trade called invalid on a feasible trade")
    if not buyer_ok:
        book.pop_bid()
    if not seller_ok:
        book.pop_ask()
    outcome.rejected += 1
    return outcome


def _clear_one(book, traders, outcome, tick, defer):
    trade = match_one_unit(book, tick, int(outcome.volumes[book.asset]) + 1)
    finalize_trade(book, traders, trade, validate_trade(traders, trade), outcome, defer_proceeds=defer)


def clear_sequential(
    books: list[OrderBook],
    traders: Traders,
    prev_closes: np.ndarray,
    *,
    tick: int = 0,
    defer_proceeds: bool = False,
) -> ClearingOutcome:
    """Exhaust each book completely, in ascending asset order."""
    outcome = ClearingOutcome.start(prev_closes)
    for book in books:
        while exist_possible_trade(book):
            _clear_one(book, traders, outcome, tick, defer_proceeds)
    return outcome


def clear_parallel_deterministic(
    books: list[OrderBook],
    traders: Traders,
    prev_closes: np.ndarray,
    *,
    tick: int = 0,
    defer_proceeds: bool = False,
) -> ClearingOutcome:
    """Round-robin: at most one attempt per crossed book per pass."""
    outcome = ClearingOutcome.start(prev_closes)
    active = True
    while active:
        active = False
        for book in books:
            if exist_possible_trade(book):
                active = True
                _clear_one(book, traders, outcome, tick, defer_proceeds)
    return outcome


def clear_parallel(
    books: list[OrderBook],
    traders: Traders,
    prev_closes: np.ndarray,
    *,
    tick: int = 0,
    defer_proceeds: bool = False,
    pool: ThreadPoolExecutor | None = None,
    lock: threading.Lock | None = None,
) -> ClearingOutcome:
    """One worker per book; every attempt holds a single market-wide lock.

    Trades on different assets interleave at single-unit granularity in
    whatever order the scheduler produces.
    """
    outcome = ClearingOutcome.start(prev_closes)
    lock = lock or threading.Lock()

    def process_book(book: OrderBook) -> None:
        while exist_possible_trade(book):
            with lock:
                _clear_one(book, traders, outcome, tick, defer_proceeds)
            time.sleep(0)  # hand the interpreter to another worker between units

    own_pool = pool is None
    pool = pool or ThreadPoolExecutor(max_workers=max(len(books), 1))
    try:
        futures = [pool.submit(process_book, book) for book in books]
        for j, fut in enumerate(futures):
            exc = fut.exception()
            if exc is not None:
                raise ClearingError(f"worker for asset {j} failed at tick {tick}: {exc}") from exc
    finally:
        if own_pool:
            pool.shutdown(wait=True)
    return outcome


CLEARERS: dict[Mode, Callable[..., ClearingOutcome]] = {
    Mode.SEQUENTIAL: clear_sequential,
    Mode.PARALLEL: clear_parallel,
    Mode.PARALLEL_DETERMINISTIC: clear_parallel_deterministic,
}


def _books_digest(books: list[OrderBook], n_traders: int) -> str:
    sides = np.zeros((n_traders, len(books)), dtype=np.int8)
    limits = np.zeros((n_traders, len(books)))
    for book in books:
        for order in book.bids() + book.asks():
            sides[order.owner, book.asset] = order.side
            limits[order.owner, book.asset] = order.limit_price
    return order_flow_digest(sides, limits)


class _Run:
    def __init__(self, config: SimConfig, record_trades: bool, check_invariants: bool, record_digests: bool):
        self.config = config
        self.record_trades = record_trades
        self.check_invariants = check_invariants
        self.record_digests = record_digests
        self.defer = config.proceeds is Proceeds.DEFERRED
        n, j = config.n_traders, config.n_assets
        self.traders = Traders.uniform(n, j, config.initial_cash, config.initial_shares)
        self.total_cash = float(self.traders.cash.sum())
        self.total_shares = self.traders.shares.sum(axis=0)
        self.closes = np.full((config.horizon, j), np.nan)
        self.volumes = np.zeros((config.horizon, j), dtype=np.int64)
        self.rejected = np.zeros(config.horizon, dtype=np.int64)
        self.trades: list[Trade] | None = [] if record_trades else None
        self.digests: list[str] | None = [] if record_digests else None

    def end_tick(self, t: int, closes: np.ndarray, volumes: np.ndarray, rejected: int) -> None:
        self.traders.settle_pending()
        self.closes[t] = closes
        self.volumes[t] = volumes
        self.rejected[t] = rejected
        if self.check_invariants:
            check_conservation(
                self.traders.cash, self.traders.shares, self.total_cash, self.total_shares,
                where=f"tick {t + 1}: ",
            )

    def series(self) -> PriceSeries:
        return PriceSeries(self.closes, self.volumes, self.trades, self.rejected, self.digests)


def _run_reference(run: _Run) -> None:
    cfg = run.config
    clear = CLEARERS[cfg.mode]
    extra = {}
    if cfg.mode is Mode.PARALLEL:
        extra = {"pool": ThreadPoolExecutor(max_workers=cfg.n_assets), "lock": threading.Lock()}
    prev = np.full(cfg.n_assets, float(cfg.initial_price))
    try:
        for t in range(cfg.horizon):
            tick = t + 1
            books = [OrderBook(j) for j in range(cfg.n_assets)]
            order_phase(cfg.n_traders, books, prev, cfg.seed, tick, cfg.sigma)
            if run.digests is not None:
                run.digests.append(_books_digest(books, cfg.n_traders))
            out = clear(books, run.traders, prev, tick=tick, defer_proceeds=run.defer, **extra)
            if run.trades is not None:
                run.trades.extend(out.trades)
            run.end_tick(t, out.closes, out.volumes, out.rejected)
            prev = out.closes
    finally:
        if "pool" in extra:
            extra["pool"].shutdown(wait=True)


class FlowClearer:
    """Clears array-form order flow (``SubmittedFlow``) with compiled kernels.

    Holds the per-run resources: trade-log buffers and, for ``Mode.PARALLEL``,
    a pool of one worker per book plus the market-wide mutex.  Use as a
    context manager so the pool is shut down.

    ``interleave`` makes parallel workers yield every ``interleave`` attempts
    while other books are still open, so trades across books alternate at
    fine granularity regardless of core count and OS time-slice length.
    ``0`` leaves scheduling entirely to the OS.
    """

    def __init__(self, mode: Mode, n_traders: int, n_assets: int, *, record_trades: bool = False,
                 interleave: int = 8) -> None:
        self.mode = Mode(mode)
        self.n_assets = n_assets
        self.record_trades = record_trades
        self.interleave = interleave
        capacity = (n_traders * n_assets) // 2 + n_assets if record_trades else 1
        self._log_int, self._log_px, self._logpos = _kernels.empty_log(capacity)
        self._pool = self._mutex = None
        if self.mode is Mode.PARALLEL:
            self._pool = ThreadPoolExecutor(max_workers=n_assets, thread_name_prefix="book")
            self._mutex = _kernels.MarketMutex()

    def __enter__(self) -> "FlowClearer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def clear(self, flow, traders: Traders, prev_closes: np.ndarray, *, tick: int = 0,
              defer_proceeds: bool = False) -> ClearingOutcome:
        """Clear one tick.  Deferred proceeds are left in ``traders.pending``."""
        closes = np.array(prev_closes, dtype=np.float64, copy=True)
        volumes = np.zeros(self.n_assets, dtype=np.int64)
        log_int, log_px, logpos = self._log_int, self._log_px, self._logpos
        logpos[0] = 0
        holdings = (traders.cash, traders.pending if defer_proceeds else traders.cash, traders.shares)
        if self.mode is Mode.PARALLEL:
            shared = np.array([0, self.n_assets], dtype=np.int64)  # rejected, active workers
            futures = []
            for j in range(self.n_assets):
                b0, b1 = flow.bid_offsets[j], flow.bid_offsets[j + 1]
                a0, a1 = flow.ask_offsets[j], flow.ask_offsets[j + 1]
                futures.append(self._pool.submit(
                    _kernels.process_book, self._mutex.address, j,
                    flow.bid_trader[b0:b1], flow.bid_price[b0:b1],
                    flow.ask_trader[a0:a1], flow.ask_price[a0:a1],
                    *holdings, tick, log_int, log_px, logpos, self.record_trades,
                    closes, volumes, shared, self.interleave,
                ))
            # join every worker before reading any result
            errors = [(j, fut.exception()) for j, fut in enumerate(futures)]
            for j, exc in errors:
                if exc is not None:
                    raise ClearingError(f"worker for asset {j} failed at tick {tick}: {exc}") from exc
            rejected = int(shared[0])
        else:
            kernel = _kernels.clear_sequential if self.mode is Mode.SEQUENTIAL else _kernels.clear_round_robin
            rejected = kernel(
                flow.bid_trader, flow.bid_price, flow.bid_offsets,
                flow.ask_trader, flow.ask_price, flow.ask_offsets,
                *holdings, closes, volumes, tick, log_int, log_px, logpos, self.record_trades,
            )
        trades: list[Trade] = []
        if self.record_trades:
            n = int(logpos[0])
            trades = [
                Trade(asset=a, buyer=b, seller=s, price=p, tick=tt, intra_tick_index=k,
                      bid_limit=bl, ask_limit=al)
                for (tt, a, k, b, s), (p, bl, al) in zip(log_int[:n].tolist(), log_px[:n].tolist())
            ]
        return ClearingOutcome(closes, volumes, trades, int(rejected))


def _run_fast(run: _Run) -> None:
    cfg = run.config
    prev = np.full(cfg.n_assets, float(cfg.initial_price))
    with FlowClearer(cfg.mode, cfg.n_traders, cfg.n_assets, record_trades=run.record_trades) as clearer:
        for t in range(cfg.horizon):
            tick = t + 1
            flow = submit_flow(cfg.seed, tick, cfg.n_traders, prev, cfg.sigma)
            if run.digests is not None:
                run.digests.append(flow.digest())
            out = clearer.clear(flow, run.traders, prev, tick=tick, defer_proceeds=run.defer)
            if run.trades is not None:
                run.trades.extend(out.trades)
            run.end_tick(t, out.closes, out.volumes, out.rejected)
            prev = out.closes


def run_simulation(
    config: SimConfig,
    *,
    record_trades: bool = False,
    check_invariants: bool = False,
    record_digests: bool = False,
    engine: str = "fast",
) -> PriceSeries:
    """Run ``config.horizon`` ticks of order submission and clearing.

    Args:
        config: market setup; ``config.mode`` picks the clearing regime.
        record_trades: keep every executed trade in ``series.trades``.
        check_invariants: assert money/share conservation and non-negative
            holdings after every tick (raises ``InvariantViolation``).
        record_digests: store a SHA-256 of each tick's submitted order flow.
        engine: ``"fast"`` (compiled kernels) or ``"reference"`` (order book
            objects); both implement the same rules.
    """
    if not isinstance(config, SimConfig):
        raise TypeError("run_simulation expects a SimConfig")
    if engine not in ("fast", "reference"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "fast" and config.mode is Mode.PARALLEL and not _kernels.HAVE_PTHREAD:  # pragma: no cover
        log.warning("pthread unavailable; threaded clearing falls back to the reference engine")
        engine = "reference"
    run = _Run(config, record_trades, check_invariants, record_digests)
    (_run_fast if engine == "fast" else _run_reference)(run)
    return run.series()

