import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobclear.market import (
    InvariantViolation,
    MatchingError,
    Mode,
    Order,
    OrderBook,
    PriceSeries,
    SettlementError,
    Side,
    SimConfig,
    Trade,
    Traders,
    apply_trade,
    best_ask,
    best_bid,
    check_conservation,
    insert_order,
    mid_price,
    read_trades_csv,
)


def bid(price, seq=0, owner=0, asset=0):
    return Order(asset, Side.BID, price, owner, seq)


def ask(price, seq=0, owner=0, asset=0):
    return Order(asset, Side.ASK, price, owner, seq)


class TestOrderBook:
    def test_single_bid_is_best(self):
        book = insert_order(OrderBook(0), bid(10.5))
        assert best_bid(book) == 10.5

    def test_time_priority_at_equal_price(self):
        book = OrderBook(0)
        insert_order(book, bid(10.5, seq=0, owner=3))
        insert_order(book, bid(10.5, seq=1, owner=4))
        assert book.top_bid().seq == 0
        assert book.top_bid().owner == 3

    def test_best_ask_is_minimum(self):
        book = OrderBook(0)
        for seq, p in enumerate([9.5, 9.8, 9.4]):
            insert_order(book, ask(p, seq))
        assert best_ask(book) == 9.4

    def test_one_sided_book(self):
        book = OrderBook(0)
        insert_order(book, bid(10.1, 0))
        insert_order(book, bid(10.4, 1))
        assert best_bid(book) == 10.4
        assert best_ask(book) is None

    def test_empty_book(self):
        book = OrderBook(0)
        assert best_bid(book) is None and best_ask(book) is None

    def test_crossing_at_equality(self):
        book = OrderBook(0)
        insert_order(book, bid(9.0))
        insert_order(book, ask(9.0))
        assert best_bid(book) == best_ask(book) == 9.0

    def test_wrong_asset_rejected(self):
        with pytest.raises(MatchingError):
            OrderBook(1).insert(bid(10.0, asset=0))

    @pytest.mark.parametrize("price", [0.0, -1.0, float("nan"), float("inf")])
    def test_malformed_price_rejected(self, price):
        with pytest.raises(MatchingError):
            bid(price)

    def test_malformed_quantity_rejected(self):
        with pytest.raises(MatchingError):
            Order(0, Side.BID, 10.0, 0, 0, quantity=0)

    def test_reset(self):
        book = OrderBook(0)
        insert_order(book, bid(10.0))
        insert_order(book, ask(9.0))
        book.clear()
        assert len(book) == 0

    @given(st.lists(st.tuples(st.sampled_from([9.0, 9.5, 10.0, 10.5]), st.booleans()), max_size=40))
    def test_priority_order_property(self, entries):
        book = OrderBook(0)
        for seq, (price, is_bid) in enumerate(entries):
            book.insert((bid if is_bid else ask)(price, seq))
        bids = [(-o.limit_price, o.seq) for o in book.bids()]
        asks = [(o.limit_price, o.seq) for o in book.asks()]
        assert bids == sorted(bids)
        assert asks == sorted(asks)
        popped = []
        while book.n_bids:
            popped.append(book.pop_bid())
        assert [(-o.limit_price, o.seq) for o in popped] == bids


class TestMidPrice:
    @pytest.mark.parametrize("b, a, expected", [(10.5, 9.5, 10.0), (10.0, 10.0, 10.0), (16.61, 16.61, 16.61)])
    def test_examples(self, b, a, expected):
        assert mid_price(b, a) == pytest.approx(expected, abs=1e-15)

    def test_uncrossed_rejected(self):
        with pytest.raises(MatchingError):
            mid_price(9.0, 9.5)

    @given(st.floats(0.01, 1e4), st.floats(0.0, 1e3))
    def test_bounded_by_limits(self, a, spread):
        b = a + spread
        assert a <= mid_price(b, a) <= b


class TestApplyTrade:
    def test_arithmetic(self):
        tr = Traders.uniform(2, 1, 200.0, 10)
        apply_trade(tr, Trade(0, buyer=0, seller=1, price=10.0))
        assert (tr.cash[0], tr.shares[0, 0]) == (190.0, 11)
        assert (tr.cash[1], tr.shares[1, 0]) == (210.0, 9)

    def test_self_trade_nets_out(self):
        tr = Traders.uniform(1, 1, 200.0, 10)
        apply_trade(tr, Trade(0, buyer=0, seller=0, price=10.0))
        assert tr.cash[0] == 200.0 and tr.shares[0, 0] == 10

    def test_fractional_price_transferred_exactly(self):
        tr = Traders.uniform(2, 1, 200.0, 10)
        apply_trade(tr, Trade(0, buyer=0, seller=1, price=10.25))
        assert 200.0 - tr.cash[0] == 10.25
        assert tr.cash[1] - 200.0 == 10.25

    def test_deferred_proceeds(self):
        tr = Traders.uniform(2, 1, 200.0, 10)
        apply_trade(tr, Trade(0, buyer=0, seller=1, price=10.0), defer_proceeds=True)
        assert tr.cash[1] == 200.0 and tr.pending[1] == 10.0
        tr.settle_pending()
        assert tr.cash[1] == 210.0 and tr.pending[1] == 0.0

    def test_infeasible_rejected_without_mutation(self):
        tr = Traders.uniform(2, 1, 5.0, 0)
        before = tr.copy()
        with pytest.raises(SettlementError):
            apply_trade(tr, Trade(0, buyer=0, seller=1, price=10.0))
        tr.cash[0] = 50.0
        with pytest.raises(SettlementError):
            apply_trade(tr, Trade(0, buyer=0, seller=1, price=10.0))
        assert np.array_equal(tr.shares, before.shares)

    def test_wealth(self):
        tr = Traders.uniform(1, 2, 100.0, 3)
        assert tr.state(0).wealth(np.array([10.0, 20.0])) == 190.0

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 1),
                              st.floats(0.5, 30.0)), max_size=60))
    def test_conservation_property(self, trades):
        tr = Traders.uniform(5, 2, 50.0, 3)
        for b, s, j, p in trades:
            try:
                apply_trade(tr, Trade(j, b, s, p))
            except SettlementError:
                pass
        check_conservation(tr.cash, tr.shares, 250.0, np.array([15, 15]))


class TestConservationCheck:
    def test_detects_money_drift(self):
        with pytest.raises(InvariantViolation):
            check_conservation(np.array([1.0, 2.0]), np.zeros((2, 1), int), 3.1, np.array([0]))

    def test_detects_share_drift(self):
        with pytest.raises(InvariantViolation):
            check_conservation(np.array([1.0]), np.array([[2]]), 1.0, np.array([3]))

    def test_detects_negative_holdings(self):
        with pytest.raises(InvariantViolation):
            check_conservation(np.array([-1.0, 2.0]), np.zeros((2, 1), int), 1.0, np.array([0]))
        with pytest.raises(InvariantViolation):
            check_conservation(np.array([1.0]), np.array([[-1], [1]]), 1.0, np.array([0]))

    def test_counts_pending(self):
        check_conservation(np.array([1.0]), np.zeros((1, 1), int), 3.0, np.array([0]), pending=np.array([2.0]))


class TestPriceSeriesCsv:
    def series(self):
        closes = np.array([[10.0, 9.5], [10.123456789, 9.5]])
        volumes = np.array([[3, 0], [1, 0]])
        return PriceSeries(closes, volumes)

    def test_header_and_precision(self):
        text = self.series().to_csv()
        lines = text.splitlines()
        assert lines[0] == "tick,P_1,P_2,V_1,V_2"
        assert lines[1] == "1,10.000000,9.500000,3,0"
        assert lines[2] == "2,10.123457,9.500000,1,0"

    def test_round_trip_at_emitted_precision(self):
        s = self.series()
        back = PriceSeries.read_csv(io.StringIO(s.to_csv()))
        assert np.array_equal(back.volumes, s.volumes)
        assert np.allclose(back.closes, s.closes, atol=5e-7)
        assert back.to_csv() == s.to_csv()

    def test_empty_series(self):
        s = PriceSeries(np.zeros((0, 3)), np.zeros((0, 3), int))
        assert s.to_csv().splitlines() == ["tick,P_1,P_2,P_3,V_1,V_2,V_3"]

    def test_trade_log_round_trip(self, tmp_path):
        trades = [Trade(1, 4, 7, 10.25, tick=3, intra_tick_index=1), Trade(0, 2, 2, 9.5, tick=3, intra_tick_index=2)]
        s = PriceSeries(np.ones((3, 2)), np.zeros((3, 2), int), trades=trades)
        path = tmp_path / "t.csv"
        s.write_trades_csv(path)
        assert path.read_text().splitlines()[0] == "tick,asset,k,buyer,seller,price,qty"
        back = read_trades_csv(path)
        assert [(t.tick, t.asset, t.intra_tick_index, t.buyer, t.seller, t.price) for t in back] == [
            (3, 1, 1, 4, 7, 10.25), (3, 0, 2, 2, 2, 9.5)
        ]


class TestSimConfig:
    def test_defaults(self):
        c = SimConfig()
        assert (c.n_traders, c.n_assets, c.horizon) == (10000, 5, 5000)
        assert (c.initial_cash, c.initial_shares, c.initial_price, c.sigma) == (200.0, 10, 10.0, 0.15)
        assert c.mode is Mode.SEQUENTIAL

    @pytest.mark.parametrize("field, value", [
        ("n_traders", 0), ("n_assets", 0), ("sigma", 0.0), ("sigma", 1.0), ("initial_price", 0.0),
        ("initial_cash", -1.0), ("initial_shares", -1), ("seed", -1), ("horizon", -1),
    ])
    def test_rejects_invalid(self, field, value):
        with pytest.raises(ValueError, match=field):
            SimConfig(**{field: value})

    def test_replace_and_dict(self):
        c = SimConfig().replace(mode="parallel", seed=42)
        assert c.mode is Mode.PARALLEL and c.seed == 42
        assert c.to_dict()["mode"] == "parallel"
