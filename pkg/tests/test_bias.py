import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobclear.bias import (
    BiasModel,
    affordable_units,
    buy_count_distributions,
    check_volume_ordering,
    close_price_ordering,
    mc_probs,
    parallel_probs,
    sequential_probs,
    strictness_condition,
)
from lobclear.market import Mode


def enumerate_sequential(budget, price, n_assets):
    """Exact buy probabilities by walking all 2^J equiprobable sign patterns."""
    counts = [Fraction(0)] * n_assets
    weight = Fraction(1, 2**n_assets)
    for signs in itertools.product((True, False), repeat=n_assets):
        left = Fraction(budget)
        for j, wants in enumerate(signs):
            if wants and left >= price:
                left -= Fraction(price)
                counts[j] += weight
    return counts


class TestParallel:
    def test_affordable(self):
        p = parallel_probs(BiasModel.identical(1, 15, 10, 3)).p
        assert p.tolist() == [[0.5, 0.5, 0.5]]

    def test_unaffordable(self):
        assert parallel_probs(BiasModel.identical(1, 5, 10, 3)).p.tolist() == [[0, 0, 0]]

    def test_constant_volume(self):
        t = parallel_probs(BiasModel(np.array([5, 15, 40, 10]), 10, 4))
        assert np.all(t.expected_volume == t.expected_volume[0])
        assert check_volume_ordering(t, Mode.PARALLEL).ordering == "equal"


class TestSequential:
    def test_one_unit_budget(self):
        assert sequential_probs(BiasModel.identical(1, 15, 10, 3)).p[0].tolist() == [0.5, 0.25, 0.125]

    def test_two_unit_budget(self):
        assert sequential_probs(BiasModel.identical(1, 25, 10, 3)).p[0].tolist() == [0.5, 0.5, 0.375]

    def test_broke(self):
        assert sequential_probs(BiasModel.identical(1, 5, 10, 3)).p[0].tolist() == [0, 0, 0]

    @pytest.mark.parametrize("budget", [0, 9.99, 10, 10.01, 15, 20, 25, 30, 45, 55, 100])
    @pytest.mark.parametrize("J", [1, 2, 3, 5, 8, 10])
    def test_matches_enumeration(self, budget, J):
        want = enumerate_sequential(Fraction(budget).limit_denominator(1000), 10, J)
        got = sequential_probs(BiasModel.identical(1, budget, 10, J)).p[0]
        # dyadic probabilities are exact in binary floating point
        assert [Fraction(x) for x in got.tolist()] == want

    def test_first_asset_sees_full_budget(self):
        m = BiasModel(np.array([0, 5, 10, 35, 1e6]), 10, 4)
        for table in (sequential_probs(m), parallel_probs(m)):
            assert table.p[:, 0].tolist() == [0, 0, 0.5, 0.5, 0.5]

    def test_column_sums(self):
        t = sequential_probs(BiasModel(np.array([12, 27, 33, 4]), 10, 5))
        assert np.array_equal(t.expected_volume, t.p.sum(axis=0))

    def test_distributions_normalised(self):
        d = buy_count_distributions(BiasModel(np.array([15, 45, 100]), 10, 6))
        assert np.allclose(d.sum(axis=2), 1.0, atol=0, rtol=0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 80), min_size=1, max_size=5), st.integers(1, 7))
    def test_nonincreasing_property(self, budgets, J):
        t = sequential_probs(BiasModel(np.array(budgets), 10, J))
        assert np.all(np.diff(t.p, axis=1) <= 0)


def test_affordable_units_boundaries():
    assert affordable_units(10, 10) == 1
    assert affordable_units(9.999999, 10) == 0
    assert affordable_units(0.3, 0.1) == 2  # 3 * 0.1 > 0.3 in binary floating point
    assert affordable_units(30, 10) == 3
    assert affordable_units(0, 10) == 0


class TestMonteCarlo:
    def test_sequential_one_unit(self):
        mc = mc_probs(BiasModel.identical(1, 15, 10, 3), Mode.SEQUENTIAL, 1_000_000, seed=1)
        want = np.array([0.5, 0.25, 0.125])
        assert np.all(np.abs(mc.p[0] - want) < 3 * mc.stderr[0])

    def test_parallel(self):
        m = BiasModel(np.array([5, 15, 40]), 10, 3)
        mc = mc_probs(m, Mode.PARALLEL, 100_000, seed=2)
        want = parallel_probs(m).p
        assert np.all(np.abs(mc.p - want) <= 3 * mc.stderr + 1e-15)

    def test_single_trial(self):
        mc = mc_probs(BiasModel.identical(3, 25, 10, 4), Mode.SEQUENTIAL, 1, seed=0)
        assert set(np.unique(mc.p)) <= {0.0, 1.0}

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            mc_probs(BiasModel.identical(1, 15, 10, 3), Mode.SEQUENTIAL, 0)

    @pytest.mark.parametrize("K", range(6))
    def test_grid_agreement(self, K):
        for J in range(1, 7):
            m = BiasModel.identical(1, 10 * K + 5, 10, J)
            for regime, exact in ((Mode.SEQUENTIAL, sequential_probs), (Mode.PARALLEL, parallel_probs)):
                mc = mc_probs(m, regime, 100_000, seed=100 * K + J)
                want = exact(m).p
                assert np.all(np.abs(mc.p - want) <= 4 * mc.stderr + 1e-15), (K, J, regime)


def strict_closed_form(K, J):
    # a step j-1 -> j (1-based j >= 2) is strict iff one more buy can exhaust
    # the budget before asset j, i.e. K - 1 buys are possible among j - 2
    # earlier assets: 1 <= K <= j - 1
    return [1 <= K <= j - 1 for j in range(2, J + 1)]


class TestVolumeOrdering:
    @pytest.mark.parametrize("K", range(6))
    @pytest.mark.parametrize("J", range(1, 7))
    def test_grid(self, K, J):
        m = BiasModel.identical(3, 10 * K + 5, 10, J)
        seq = check_volume_ordering(sequential_probs(m), Mode.SEQUENTIAL, m)
        assert seq.ok and seq.ordering in ("equal", "non-increasing")
        assert seq.strict_expected == strict_closed_form(K, J)
        assert [s == "strict" for s in seq.segments] == strict_closed_form(K, J)
        assert check_volume_ordering(parallel_probs(m), Mode.PARALLEL).ordering == "equal"

    def test_strictness_condition_matches_distribution(self):
        m = BiasModel(np.array([15, 35]), 10, 5)
        d = buy_count_distributions(m)
        for step, flag in enumerate(strictness_condition(m), start=1):
            # Pr(P <= residual < 2P) before asset step-1, for some trader
            p = [d[i, step - 1, k - 1] for i, k in enumerate([1, 3])]
            assert flag == any(x > 0 for x in p)

    def test_abundant_budget_is_weak(self):
        m = BiasModel.identical(1, 1000, 10, 5)
        v = check_volume_ordering(sequential_probs(m), Mode.SEQUENTIAL, m)
        assert v.ordering == "equal" and v.segments == ["weak"] * 4 and v.ok

    def test_one_unit_strictly_decreasing(self):
        m = BiasModel.identical(1, 15, 10, 3)
        v = check_volume_ordering(sequential_probs(m), Mode.SEQUENTIAL, m)
        assert v.segments == ["strict", "strict"] and v.ordering == "non-increasing"

    def test_mixed_budgets_strictness(self):
        m = BiasModel(np.array([1000, 25]), 10, 4)
        v = check_volume_ordering(sequential_probs(m), Mode.SEQUENTIAL, m)
        assert v.segments == ["weak", "strict", "strict"] and v.consistent

    def test_detects_violation(self):
        from lobclear.bias import ProbTable
        bad = ProbTable.from_p(np.array([[0.25, 0.5]]))
        assert check_volume_ordering(bad, Mode.SEQUENTIAL).ordering == "violated"
        assert not check_volume_ordering(bad, Mode.PARALLEL).ok


class TestClosePrice:
    def test_ordering_follows_volume(self):
        closes, steps = close_price_ordering([0.5, 0.25, 0.125], lambda v: v, 10.0)
        assert closes.tolist() == [10.5, 10.25, 10.125] and steps == ["down", "down"]

    def test_equal_volumes(self):
        closes, steps = close_price_ordering([0.5, 0.5], lambda v: 3 * v, 10.0)
        assert steps == ["equal"] and closes[0] == closes[1]

    def test_single_asset(self):
        closes, steps = close_price_ordering([0.5], lambda v: v, 10.0)
        assert closes.tolist() == [10.5] and steps == []

    def test_rejects_non_monotone(self):
        with pytest.raises(ValueError):
            close_price_ordering([0.5, 0.25, 0.125], lambda v: (v - 0.3) ** 2, 10.0)
