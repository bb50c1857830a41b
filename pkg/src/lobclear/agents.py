"""Zero-intelligence traders: price expectations, order decisions, submission.

Every expectation shock is keyed by ``(seed, tick, asset)`` with the trader
index as the position in that stream, so the order flow of a tick depends only
on the seed, the tick and the previous closing prices.  It never depends on
how earlier ticks were cleared, on thread scheduling, or on the number of
traders or assets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numba as nb
import numpy as np

from .market import Order, OrderBook, Side

__all__ = [
    "ExpectationDraw",
    "ShockStream",
    "shock_matrix",
    "draw_expectation",
    "decide_order",
    "order_phase",
    "SubmittedFlow",
    "build_flow",
    "submit_flow",
    "order_flow_digest",
]

_BUF = 1024


def _bit_generator(seed: int, tick: int, asset: int) -> np.random.Philox:
    # 128-bit key = (seed, asset); the tick sits in the third counter word so
    # the low words are free to run through one tick's draws.
    return np.random.Philox(key=(int(seed) & (2**64 - 1)) | (int(asset) << 64), counter=int(tick) << 128)


class ShockStream:
    """Uniform [0, 1) draws for one (seed, tick, asset); position = trader."""

    def __init__(self, seed: int, tick: int, asset: int) -> None:
        self.seed, self.tick, self.asset = seed, tick, asset
        self._gen = np.random.Generator(_bit_generator(seed, tick, asset))
        self._buf = np.empty(0)
        self._pos = 0
        self.consumed = 0

    def next_unit(self) -> float:
        if self._pos == self._buf.size:
            self._buf = self._gen.random(_BUF)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.consumed += 1
        return float(u)


def _to_delta(u, sigma: float):
    return sigma * (2.0 * u - 1.0)


def shock_matrix(seed: int, tick: int, n_traders: int, n_assets: int, sigma: float) -> np.ndarray:
    """``(n_traders, n_assets)`` expectation shocks, uniform on [-sigma, sigma)."""
    out = np.empty((n_traders, n_assets))
    for j in range(n_assets):
        gen = np.random.Generator(_bit_generator(seed, tick, j))
        out[:, j] = _to_delta(gen.random(n_traders), sigma)
    return out


@dataclass(frozen=True, slots=True)
class ExpectationDraw:
    trader: int
    asset: int
    delta: float
    expected_price: float


def draw_expectation(
    stream: ShockStream, last_close: float, sigma: float, trader: int = -1
) -> ExpectationDraw:
    delta = _to_delta(stream.next_unit(), sigma)
    return ExpectationDraw(trader, stream.asset, delta, last_close * (1.0 + delta))


def decide_order(draw: ExpectationDraw, last_close: float, seq: int = 0) -> Order | None:
    """Bid above the last close, ask below it, nothing on a tie."""
    if draw.expected_price > last_close:
        return Order(draw.asset, Side.BID, draw.expected_price, draw.trader, seq)
    if draw.expected_price < last_close:
        return Order(draw.asset, Side.ASK, draw.expected_price, draw.trader, seq)
    return None


def order_phase(
    n_traders: int,
    books: list[OrderBook],
    closes: np.ndarray,
    seed: int,
    tick: int,
    sigma: float,
) -> list[OrderBook]:
    """Fill empty books with tick ``tick``'s orders, trader-major then asset.

    Traders submit without any budget or inventory check; feasibility is left
    to settlement.
    """
    n_assets = len(books)
    streams = [ShockStream(seed, tick, j) for j in range(n_assets)]
    seq = [0] * n_assets
    for i in range(n_traders):
        for j in range(n_assets):
            draw = draw_expectation(streams[j], float(closes[j]), sigma, trader=i)
            order = decide_order(draw, float(closes[j]), seq[j])
            if order is not None:
                books[j].insert(order)
                seq[j] += 1
    return books


@dataclass
class SubmittedFlow:
    """One tick's orders in array form, each book already in priority order.

    Book ``j``'s bids are ``bid_trader[bid_offsets[j]:bid_offsets[j+1]]`` (with
    matching ``bid_price``), best first; asks likewise.  ``sides`` and
    ``limits`` hold the raw (trader, asset) decisions in submission order.
    """

    sides: np.ndarray
    limits: np.ndarray
    bid_trader: np.ndarray
    bid_price: np.ndarray
    bid_offsets: np.ndarray
    ask_trader: np.ndarray
    ask_price: np.ndarray
    ask_offsets: np.ndarray

    def digest(self) -> str:
        return order_flow_digest(self.sides, self.limits)

    @property
    def n_orders(self) -> int:
        return int(self.bid_offsets[-1] + self.ask_offsets[-1])


@nb.njit(cache=True)
def _classify(expected, closes):
    """Sides, limits and per-book sort keys (bids: -price, asks: price).

    Row ``j`` of ``keys`` is asset ``j``'s bid book and row ``J + j`` its ask
    book; traders without an order on that side get ``+inf`` so they sort last.
    """
    n, n_assets = expected.shape
    sides = np.zeros((n, n_assets), dtype=np.int8)
    limits = np.zeros((n, n_assets))
    keys = np.full((2 * n_assets, n), np.inf)
    counts = np.zeros(2 * n_assets, dtype=np.int64)
    for i in range(n):
        for j in range(n_assets):
            e = expected[i, j]
            if e > closes[j]:
                sides[i, j] = 1
                limits[i, j] = e
                keys[j, i] = -e
                counts[j] += 1
            elif e < closes[j]:
                sides[i, j] = -1
                limits[i, j] = e
                keys[n_assets + j, i] = e
                counts[n_assets + j] += 1
    return sides, limits, keys, counts


@nb.njit(cache=True)
def _gather(order, keys, expected, counts):
    """Pack the sorted rows into offset arrays, restoring submission order on ties.

    ``order`` comes from an unstable sort, so within a run of equal keys the
    trader indices are re-sorted ascending; trader order is submission order.
    """
    n_assets = expected.shape[1]
    bid_off = np.zeros(n_assets + 1, dtype=np.int64)
    ask_off = np.zeros(n_assets + 1, dtype=np.int64)
    bid_off[1:] = np.cumsum(counts[:n_assets])
    ask_off[1:] = np.cumsum(counts[n_assets:])
    bid_tr = np.empty(bid_off[-1], dtype=np.int64)
    bid_px = np.empty(bid_off[-1])
    ask_tr = np.empty(ask_off[-1], dtype=np.int64)
    ask_px = np.empty(ask_off[-1])
    for r in range(2 * n_assets):
        j = r % n_assets
        if r < n_assets:
            tr, px, lo = bid_tr, bid_px, bid_off[j]
        else:
            tr, px, lo = ask_tr, ask_px, ask_off[j]
        m = counts[r]
        for c in range(m):
            tr[lo + c] = order[r, c]
        start = 0
        while start < m:
            end = start + 1
            while end < m and keys[r, order[r, end]] == keys[r, order[r, start]]:
                end += 1
            for a in range(start + 1, end):  # insertion sort; ties are rare and short
                v = tr[lo + a]
                b = a - 1
                while b >= start and tr[lo + b] > v:
                    tr[lo + b + 1] = tr[lo + b]
                    b -= 1
                tr[lo + b + 1] = v
            start = end
        for c in range(m):
            px[lo + c] = expected[tr[lo + c], j]
    return bid_tr, bid_px, bid_off, ask_tr, ask_px, ask_off


def build_flow(expected: np.ndarray, closes: np.ndarray) -> SubmittedFlow:
    """Turn an ``(N, J)`` matrix of expected prices into priority-sorted books."""
    expected = np.ascontiguousarray(expected, dtype=np.float64)
    closes = np.ascontiguousarray(closes, dtype=np.float64)
    sides, limits, keys, counts = _classify(expected, closes)
    order = np.argsort(keys, axis=1)
    return SubmittedFlow(sides, limits, *_gather(order, keys, expected, counts))


def submit_flow(seed: int, tick: int, n_traders: int, closes: np.ndarray, sigma: float) -> SubmittedFlow:
    """Vectorised order phase; same orders and priorities as :func:`order_phase`."""
    closes = np.asarray(closes, dtype=np.float64)
    return build_flow(closes * (1.0 + shock_matrix(seed, tick, n_traders, closes.size, sigma)), closes)


def order_flow_digest(sides: np.ndarray, limits: np.ndarray) -> str:
    """SHA-256 over the submitted (side, limit) matrix of one tick."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(sides, dtype=np.int8).tobytes())
    h.update(np.ascontiguousarray(limits, dtype="<f8").tobytes())
    return h.hexdigest()
