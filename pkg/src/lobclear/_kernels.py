"""Compiled clearing loops used by :func:`lobclear.clearing.run_simulation`.

Books arrive as priority-sorted arrays (see ``agents.SubmittedFlow``), so a
book is two cursors, one per side.  Popping the best order means advancing a
cursor; an order left in place keeps its priority.

``_settle`` is the unit of work shared by all regimes: validate the best
bid/ask pair against current holdings and finalize it.  Sale proceeds go to
``credit``: the cash array itself for immediate settlement, or a separate
pending array that is folded into cash at the end of the tick.  In the
threaded regime each attempt runs between ``pthread_mutex_lock``/``unlock`` on
one market-wide mutex.

The settle step is kept free of array-heavy argument lists on purpose: an
inlined helper taking a dozen arrays was an order of magnitude slower.
"""

from __future__ import annotations

import ctypes

import numba as nb
import numpy as np

BID_DONE = 1
ASK_DONE = 2
EXECUTED = 4

LOG_FIELDS = 5  # tick, asset, k, buyer, seller


@nb.njit(cache=True, nogil=True, inline="always")
def _settle(cash, credit, shares, buyer, seller, j, price):
    """Validate one unit against current holdings and execute it if feasible.

    Returns ``EXECUTED | BID_DONE | ASK_DONE`` on success, otherwise the flags
    of the side(s) that cannot be filled.
    """
    buyer_ok = cash[buyer] >= price
    seller_ok = shares[seller, j] >= 1
    if buyer_ok and seller_ok:
        cash[buyer] -= price
        credit[seller] += price
        shares[buyer, j] += 1
        shares[seller, j] -= 1
        return BID_DONE | ASK_DONE | EXECUTED
    code = 0
    if not buyer_ok:
        code |= BID_DONE
    if not seller_ok:
        code |= ASK_DONE
    return code


@nb.njit(cache=True, nogil=True)
def _log(log_int, log_px, logpos, tick, j, k, buyer, seller, price, bid_limit, ask_limit):
    p = logpos[0]
    log_int[p, 0] = tick
    log_int[p, 1] = j
    log_int[p, 2] = k
    log_int[p, 3] = buyer
    log_int[p, 4] = seller
    log_px[p, 0] = price
    log_px[p, 1] = bid_limit
    log_px[p, 2] = ask_limit
    logpos[0] = p + 1


@nb.njit(cache=True, nogil=True)
def clear_sequential(
    bid_tr, bid_px, bid_off, ask_tr, ask_px, ask_off, cash, credit, shares,
    closes, volumes, tick, log_int, log_px, logpos, record,
):
    rejected = 0
    for j in range(closes.shape[0]):
        bi, be = bid_off[j], bid_off[j + 1]
        ai, ae = ask_off[j], ask_off[j + 1]
        k = 0
        while bi < be and ai < ae and bid_px[bi] >= ask_px[ai]:
            price = 0.5 * (bid_px[bi] + ask_px[ai])
            code = _settle(cash, credit, shares, bid_tr[bi], ask_tr[ai], j, price)
            if code & EXECUTED:
                k += 1
                closes[j] = price
                if record:
                    _log(log_int, log_px, logpos, tick, j, k, bid_tr[bi], ask_tr[ai],
                         price, bid_px[bi], ask_px[ai])
            else:
                rejected += 1
            if code & BID_DONE:
                bi += 1
            if code & ASK_DONE:
                ai += 1
        volumes[j] = k
    return rejected


@nb.njit(cache=True, nogil=True)
def clear_round_robin(
    bid_tr, bid_px, bid_off, ask_tr, ask_px, ask_off, cash, credit, shares,
    closes, volumes, tick, log_int, log_px, logpos, record,
):
    n_assets = closes.shape[0]
    bi = bid_off[:-1].copy()
    ai = ask_off[:-1].copy()
    volumes[:] = 0
    rejected = 0
    active = True
    while active:
        active = False
        for j in range(n_assets):
            b, a = bi[j], ai[j]
            if b < bid_off[j + 1] and a < ask_off[j + 1] and bid_px[b] >= ask_px[a]:
                active = True
                price = 0.5 * (bid_px[b] + ask_px[a])
                code = _settle(cash, credit, shares, bid_tr[b], ask_tr[a], j, price)
                if code & EXECUTED:
                    volumes[j] += 1
                    closes[j] = price
                    if record:
                        _log(log_int, log_px, logpos, tick, j, volumes[j], bid_tr[b], ask_tr[a],
                             price, bid_px[b], ask_px[a])
                else:
                    rejected += 1
                if code & BID_DONE:
                    bi[j] = b + 1
                if code & ASK_DONE:
                    ai[j] = a + 1
    return rejected


def _bind_pthread():
    libc = ctypes.CDLL(None)
    lock = libc.pthread_mutex_lock
    unlock = libc.pthread_mutex_unlock
    init = libc.pthread_mutex_init
    for fn in (lock, unlock):
        fn.argtypes = [ctypes.c_void_p]
        fn.restype = ctypes.c_int
    init.argtypes = [ctypes.c_void_p, ctypes.c_void_p]
    init.restype = ctypes.c_int
    yield_ = libc.sched_yield
    yield_.argtypes = []
    yield_.restype = ctypes.c_int
    return lock, unlock, init, yield_


try:
    _mutex_lock, _mutex_unlock, _mutex_init, _sched_yield = _bind_pthread()
    HAVE_PTHREAD = True
except (OSError, AttributeError):  # pragma: no cover - non-POSIX host
    HAVE_PTHREAD = False


class MarketMutex:
    """One process-wide ``pthread_mutex_t`` usable from compiled code."""

    def __init__(self) -> None:
        if not HAVE_PTHREAD:  # pragma: no cover
            raise RuntimeError("pthread mutex unavailable on this platform")
        # generously sized; pthread_mutex_t is 40 bytes on glibc x86-64
        self._buf = ctypes.create_string_buffer(128)
        if _mutex_init(self._buf, None) != 0:  # pragma: no cover
            raise RuntimeError("pthread_mutex_init failed")
        self.address = ctypes.addressof(self._buf)


if HAVE_PTHREAD:

    @nb.njit(nogil=True)
    def process_book(
        mutex, j, bid_tr, bid_px, ask_tr, ask_px, cash, credit, shares,
        tick, log_int, log_px, logpos, record, out_close, out_volume, shared,
        interleave,
    ):
        """Clear one book on the calling thread; holdings are shared.

        ``shared`` is ``[rejected, active_workers]`` and is only touched under
        the mutex.  With ``interleave > 0`` the worker yields its time slice
        every ``interleave`` attempts while other workers are still running,
        so that books make progress in step even when the OS would let one
        thread drain its book in a single slice (e.g. on a single core).
        """
        bi, be = 0, bid_tr.shape[0]
        ai, ae = 0, ask_tr.shape[0]
        k = 0
        attempts = 0
        while bi < be and ai < ae and bid_px[bi] >= ask_px[ai]:
            price = 0.5 * (bid_px[bi] + ask_px[ai])
            _mutex_lock(mutex)
            code = _settle(cash, credit, shares, bid_tr[bi], ask_tr[ai], j, price)
            if code & EXECUTED:
                k += 1
                if record:
                    _log(log_int, log_px, logpos, tick, j, k, bid_tr[bi], ask_tr[ai],
                         price, bid_px[bi], ask_px[ai])
            else:
                shared[0] += 1
            others = shared[1] > 1
            _mutex_unlock(mutex)
            if code & EXECUTED:
                out_close[j] = price
            if code & BID_DONE:
                bi += 1
            if code & ASK_DONE:
                ai += 1
            attempts += 1
            if interleave > 0 and others and attempts % interleave == 0:
                _sched_yield()
        _mutex_lock(mutex)
        shared[1] -= 1
        _mutex_unlock(mutex)
        out_volume[j] = k


def empty_log(capacity: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.zeros((capacity, LOG_FIELDS), dtype=np.int64),
        np.zeros((capacity, 3), dtype=np.float64),
        np.zeros(1, dtype=np.int64),
    )
