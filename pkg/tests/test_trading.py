"""Battery arbitrage strategy, settlement mechanics, foresight ceiling.

Plans and settlements are checked against hand-computed cash flows on
constructed price days; the triple-order hour search is checked against
a literal lexicographic enumeration; the foresight DP is checked on
instances small enough to price by hand and must dominate every actual
strategy run.
"""

from datetime import date, timedelta

import csv
import numpy as np
import pytest
from scipy.special import ndtri

from probcast.distribution import PointForecast, QuantileForecast, gaussian_percentiles
from probcast.errors import ConfigError, DataError
from probcast.trading import (
    BUY,
    SELL,
    DayPlan,
    Order,
    backtest,
    fixed_hours_backtest,
    perfect_foresight,
    plan_day,
    plan_final_day,
    save_ledger,
    settle_day,
    unlimited_bids_backtest,
)

XI = 0.9


def _degenerate_row(point):
    return np.repeat(np.asarray(point, dtype=float)[:, None], 99, axis=1)


def _best_sell_triple_loop(point, xi):
    best, best_val = None, -np.inf
    h = len(point)
    for s1 in range(h):
        for s2 in range(h):
            for b in range(h):
                if s1 < b and s1 != s2 and s2 != b:
                    val = xi * (point[s1] + point[s2]) - point[b] / xi
                    if val > best_val:
                        best, best_val = (s1, s2, b), val
    return best, best_val


class TestPlanDay:
    def _flat(self, value=50.0):
        return np.full(24, value)

    def test_charge_one_profitable_pair(self):
        point = self._flat()
        point[18] = 90.0
        point[5] = 10.0
        plan = plan_day(_degenerate_row(point), point, 90, 1, XI)
        assert plan.case == "pair" and plan.limit_orders_placed
        sell, buy = plan.orders
        assert (sell.hour, sell.side, sell.limit) == (18, SELL, 90.0)
        assert (buy.hour, buy.side, buy.limit) == (5, BUY, 10.0)
        np.testing.assert_allclose(plan.condition_value, XI * 90.0 - 10.0 / XI)

    def test_charge_one_limits_come_from_the_interval(self):
        point = self._flat()
        point[18] = 90.0
        point[5] = 10.0
        sigma = np.full(24, 2.0)
        row = gaussian_percentiles(point, sigma)
        plan = plan_day(row, point, 90, 1, XI)
        lower = point + 2.0 * ndtri(0.05)
        upper = point + 2.0 * ndtri(0.95)
        sell, buy = plan.orders
        np.testing.assert_allclose(sell.limit, lower[18])
        np.testing.assert_allclose(buy.limit, upper[5])
        np.testing.assert_allclose(plan.condition_value, XI * lower[18] - upper[5] / XI)

    def test_charge_one_flat_prices_hold(self):
        point = self._flat()
        plan = plan_day(_degenerate_row(point), point, 90, 1, XI)
        assert plan.case == "hold" and not plan.orders and not plan.limit_orders_placed
        assert plan.condition_value < 0

    def test_argmax_breaks_ties_at_the_earliest_hour(self):
        point = self._flat()
        point[4] = point[10] = 90.0
        point[7] = point[13] = 10.0
        plan = plan_day(_degenerate_row(point), point, 90, 1, XI)
        sell, buy = plan.orders
        assert sell.hour == 4 and buy.hour == 7

    def test_charge_two_sell_triple(self):
        point = self._flat()
        point[0] = 100.0
        point[1] = 5.0
        point[2] = 95.0
        plan = plan_day(_degenerate_row(point), point, 90, 2, XI)
        assert plan.case == "sell_triple" and plan.limit_orders_placed
        unlim, lim_sell, lim_buy = plan.orders
        assert (unlim.hour, unlim.side, unlim.limit) == (0, SELL, None)
        assert (lim_sell.hour, lim_sell.side, lim_sell.limit) == (2, SELL, 95.0)
        assert (lim_buy.hour, lim_buy.side, lim_buy.limit) == (1, BUY, 5.0)
        expected = XI * 100.0 + XI * 95.0 - 5.0 / XI - XI * 100.0
        np.testing.assert_allclose(plan.condition_value, expected)

    def test_charge_two_flat_forces_the_peak_sale(self):
        point = self._flat()
        point[9] = 51.0
        plan = plan_day(_degenerate_row(point), point, 90, 2, XI)
        assert plan.case == "forced_sell" and not plan.limit_orders_placed
        (order,) = plan.orders
        assert (order.hour, order.side, order.limit) == (9, SELL, None)

    def test_charge_zero_buy_triple(self):
        point = self._flat()
        point[0] = 5.0
        point[1] = 100.0
        point[2] = 8.0
        plan = plan_day(_degenerate_row(point), point, 90, 0, XI)
        assert plan.case == "buy_triple" and plan.limit_orders_placed
        unlim, lim_buy, lim_sell = plan.orders
        assert (unlim.hour, unlim.side, unlim.limit) == (0, BUY, None)
        assert (lim_buy.hour, lim_buy.side, lim_buy.limit) == (2, BUY, 8.0)
        assert (lim_sell.hour, lim_sell.side, lim_sell.limit) == (1, SELL, 100.0)

    def test_charge_zero_flat_forces_the_valley_buy(self):
        point = self._flat()
        point[14] = 49.0
        plan = plan_day(_degenerate_row(point), point, 90, 0, XI)
        assert plan.case == "forced_buy"
        (order,) = plan.orders
        assert (order.hour, order.side, order.limit) == (14, BUY, None)

    def test_validation(self):
        point = self._flat()
        row = _degenerate_row(point)
        with pytest.raises(ConfigError):
            plan_day(row, point, 90, 3, XI)
        with pytest.raises(ConfigError):
            plan_day(row, point, 90, 1, 0.0)
        with pytest.raises(ConfigError):
            plan_day(row, point, 91, 1, XI)
        with pytest.raises(DataError):
            plan_day(row[:20], point, 90, 1, XI)
        with pytest.raises(DataError):
            plan_day(row, point[:20], 90, 1, XI)

    def test_triple_search_matches_enumeration(self, rng):
        for _ in range(5):
            point = rng.uniform(10, 100, size=24)
            plan = plan_day(_degenerate_row(point), point, 90, 2, XI)
            (s1, s2, b), best_val = _best_sell_triple_loop(point, XI)
            if plan.case == "sell_triple":
                assert [o.hour for o in plan.orders] == [s1, s2, b]

    def test_triple_tie_is_lexicographically_earliest(self):
        point = self._flat()
        plan_val = plan_day(_degenerate_row(point), point, 90, 2, XI)
        # flat prices: every valid triple ties, so the forced branch is
        # taken; check the underlying search directly instead
        from probcast.trading import _best_sell_triple

        triple = tuple(int(v) for v in _best_sell_triple(point, XI))
        loop, _ = _best_sell_triple_loop(point, XI)
        assert triple == loop == (0, 1, 2)
        assert plan_val.case == "forced_sell"


class TestPlanFinalDay:
    def test_rebalance_cases(self):
        point = np.full(24, 50.0)
        point[6] = 80.0
        point[21] = 20.0
        plan = plan_final_day(point, 2)
        assert plan.case == "final_sell"
        assert plan.orders[0].hour == 6 and plan.orders[0].side == SELL
        plan = plan_final_day(point, 0)
        assert plan.case == "final_buy"
        assert plan.orders[0].hour == 21 and plan.orders[0].side == BUY
        plan = plan_final_day(point, 1)
        assert plan.case == "final_hold" and not plan.orders


class TestSettleDay:
    def test_fills_at_market_price_not_the_limit(self):
        plan = DayPlan("pair", [Order(18, SELL, 60.0), Order(5, BUY, 30.0)])
        prices = np.full(24, 45.0)
        prices[18] = 72.0
        prices[5] = 25.0
        cash, charge, trades = settle_day(plan, prices, 1, XI, day="d0")
        assert charge == 1
        np.testing.assert_allclose(cash, XI * 72.0 - 25.0 / XI)
        assert [t.hour for t in trades] == [5, 18]
        assert trades[0].side == BUY and trades[0].charge_after == 2
        np.testing.assert_allclose(trades[0].cash, -25.0 / XI)
        np.testing.assert_allclose(trades[1].price, 72.0)

    def test_limit_crossing_rules(self):
        plan = DayPlan("pair", [Order(18, SELL, 60.0), Order(5, BUY, 30.0)])
        prices = np.full(24, 45.0)
        prices[18] = 59.9
        prices[5] = 30.0
        cash, charge, trades = settle_day(plan, prices, 1, XI)
        # sell missed (price below limit), buy filled exactly at limit
        assert charge == 2
        assert len(trades) == 1 and trades[0].side == BUY
        np.testing.assert_allclose(cash, -30.0 / XI)

    def test_unlimited_orders_always_fill(self):
        plan = DayPlan("forced_sell", [Order(3, SELL, None)])
        prices = np.full(24, 40.0)
        cash, charge, trades = settle_day(plan, prices, 2, XI)
        assert charge == 1
        np.testing.assert_allclose(cash, XI * 40.0)

    def test_capacity_violation_detected(self):
        plan = DayPlan("bad", [Order(2, SELL, None), Order(3, SELL, None)])
        with pytest.raises(DataError, match="capacity"):
            settle_day(plan, np.full(24, 40.0), 1, XI)

    def test_order_hour_bounds(self):
        plan = DayPlan("bad", [Order(24, SELL, None)])
        with pytest.raises(DataError, match="hour"):
            settle_day(plan, np.full(24, 40.0), 2, XI)


class TestBacktest:
    def _span(self, rows):
        dates = [date(2022, 7, 1) + timedelta(days=i) for i in range(len(rows))]
        point = np.array(rows, dtype=float)
        qf = QuantileForecast(dates, np.stack([_degenerate_row(r) for r in point]))
        return qf, PointForecast(dates, point), dates

    def test_perfect_forecast_hand_ledger(self):
        row = np.full(24, 50.0)
        row[5] = 10.0
        row[18] = 90.0
        qf, pf, dates = self._span([row, row, row])
        ledger = backtest(qf, pf, np.array([row, row, row]), level=90, efficiency=XI)
        day_profit = XI * 90.0 - 10.0 / XI
        np.testing.assert_allclose(ledger.total_profit, 2 * day_profit)
        np.testing.assert_allclose(ledger.daily_cash, [day_profit, day_profit, 0.0])
        assert ledger.end_of_day_charge == [1, 1, 1]
        assert ledger.profitable_limit_days == 2
        assert len(ledger.trades) == 4
        np.testing.assert_allclose(ledger.per_transaction_profit, 2 * day_profit / 4)

    def test_missed_buy_forces_a_purchase_next_day(self):
        row = np.full(24, 50.0)
        row[5] = 10.0
        row[18] = 90.0
        flat = np.full(24, 50.0)
        qf, pf, dates = self._span([row, flat, flat])
        actual = np.array([row, flat, flat])
        actual[0, 5] = 20.0
        ledger = backtest(qf, pf, actual, level=90, efficiency=XI)
        # day 0: buy misses (20 > limit 10), sell fills -> empty battery
        assert ledger.end_of_day_charge[0] == 0
        # day 1: flat forecast -> unconditional valley buy back to 1 MWh
        assert ledger.end_of_day_charge[1] == 1
        day1 = [t for t in ledger.trades if t.day == dates[1]]
        assert len(day1) == 1 and day1[0].side == BUY and day1[0].limit is None
        np.testing.assert_allclose(
            ledger.total_profit, XI * 90.0 - 50.0 / XI
        )

    def test_final_day_rebalances_a_full_battery(self):
        row = np.full(24, 50.0)
        row[5] = 10.0
        row[18] = 90.0
        qf, pf, dates = self._span([row, row])
        actual = np.array([row, row])
        actual[0, 18] = 5.0
        ledger = backtest(qf, pf, actual, level=90, efficiency=XI)
        # day 0: sell misses, buy fills -> 2 MWh; final day sells at the peak
        assert ledger.end_of_day_charge == [2, 1]
        final = [t for t in ledger.trades if t.day == dates[1]]
        assert len(final) == 1 and final[0].side == SELL and final[0].hour == 18

    def test_date_alignment_enforced(self, rng):
        row = np.full(24, 50.0)
        qf, pf, dates = self._span([row, row])
        other = PointForecast([dates[0], dates[0]], pf.values)
        with pytest.raises(DataError):
            backtest(qf, other, np.array([row, row]))
        with pytest.raises(DataError):
            backtest(qf, pf, np.zeros((3, 24)))
        with pytest.raises(DataError):
            backtest("not a forecast", pf, np.array([row, row]))


class TestPerfectForesight:
    def test_single_day_values(self):
        row = np.full(24, 50.0)
        row[2] = 10.0
        row[20] = 90.0
        actual = row[None, :]
        assert perfect_foresight(actual, XI, initial_charge=1) == 0.0
        np.testing.assert_allclose(perfect_foresight(actual, XI, initial_charge=2), XI * 90.0)
        np.testing.assert_allclose(perfect_foresight(actual, XI, initial_charge=0), -10.0 / XI)

    def test_two_day_cycle_hand_value(self):
        day0 = np.array([10.0, 50.0, 50.0, 90.0])
        day1 = np.array([20.0, 60.0, 60.0, 80.0])
        value = perfect_foresight(np.stack([day0, day1]), XI)
        np.testing.assert_allclose(value, XI * 90.0 - 10.0 / XI)

    def test_two_day_carry_hand_value(self):
        day0 = np.array([10.0, 11.0, 12.0, 13.0])
        day1 = np.array([100.0, 99.0, 98.0, 97.0])
        value = perfect_foresight(np.stack([day0, day1]), XI)
        np.testing.assert_allclose(value, XI * 100.0 - 10.0 / XI)

    def test_dominates_every_strategy_run(self, rng):
        for trial in range(4):
            prices = 50.0 + 20.0 * rng.standard_normal((12, 24))
            noise = prices + 5.0 * rng.standard_normal((12, 24))
            dates = [date(2022, 1, 1) + timedelta(days=i) for i in range(12)]
            qf = QuantileForecast(
                dates, gaussian_percentiles(noise, np.full_like(noise, 8.0))
            )
            pf = PointForecast(dates, noise)
            for level in (50, 90, 98):
                ledger = backtest(qf, pf, prices, level=level, efficiency=XI)
                assert ledger.total_profit <= perfect_foresight(prices, XI) + 1e-9

    def test_validation(self):
        with pytest.raises(DataError):
            perfect_foresight(np.zeros((1, 3)))
        with pytest.raises(ConfigError):
            perfect_foresight(np.zeros((1, 24)), efficiency=1.5)


class TestComparisonStrategies:
    def test_fixed_hours_arithmetic(self, rng):
        prices = rng.uniform(20, 80, size=(5, 24))
        dates = [date(2022, 2, 1) + timedelta(days=i) for i in range(5)]
        ledger = fixed_hours_backtest(prices, dates, buy_hour=3, sell_hour=19, efficiency=XI)
        expected = float(np.sum(XI * prices[:, 19] - prices[:, 3] / XI))
        np.testing.assert_allclose(ledger.total_profit, expected)
        assert len(ledger.trades) == 10
        assert all(c == 1 for c in ledger.end_of_day_charge)
        with pytest.raises(ConfigError):
            fixed_hours_backtest(prices, dates, buy_hour=3, sell_hour=3)

    def test_unlimited_bids_arithmetic(self, rng):
        point = rng.uniform(20, 80, size=(4, 24))
        actual = point + rng.normal(scale=5.0, size=(4, 24))
        dates = [date(2022, 3, 1) + timedelta(days=i) for i in range(4)]
        ledger = unlimited_bids_backtest(PointForecast(dates, point), actual)
        expected = 0.0
        for d in range(4):
            hs = int(np.argmax(point[d]))
            hb = int(np.argmin(point[d]))
            expected += XI * actual[d, hs] - actual[d, hb] / XI
        np.testing.assert_allclose(ledger.total_profit, expected)

    def test_unlimited_bids_skips_flat_days(self):
        point = np.full((2, 24), 40.0)
        actual = point.copy()
        dates = [date(2022, 3, 1), date(2022, 3, 2)]
        ledger = unlimited_bids_backtest(PointForecast(dates, point), actual)
        assert ledger.total_profit == 0.0 and not ledger.trades
        with pytest.raises(DataError):
            unlimited_bids_backtest(point, actual)


class TestLedgerCsv:
    def test_round_trip(self, rng, tmp_path):
        row = np.full(24, 50.0)
        row[5] = 10.0
        row[18] = 90.0
        dates = [date(2022, 7, 1) + timedelta(days=i) for i in range(3)]
        qf = QuantileForecast(dates, np.stack([_degenerate_row(row)] * 3))
        pf = PointForecast(dates, np.stack([row] * 3))
        ledger = backtest(qf, pf, np.stack([row] * 3))
        path = tmp_path / "trades.csv"
        save_ledger(ledger, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(ledger.trades)
        for rec, trade in zip(rows, ledger.trades):
            assert rec["date"] == trade.day.isoformat()
            assert int(rec["hour"]) == trade.hour
            assert float(rec["cash"]) == trade.cash
            if trade.limit is None:
                assert rec["limit"] == ""
            else:
                assert float(rec["limit"]) == trade.limit
