"""Quantile-driven battery arbitrage backtest with a foresight bound.

A 2 MWh battery starting at 1 MWh trades 1 MWh blocks in the day-ahead
auction with one-way efficiency xi.  Every day a plan is built from the
point forecast (hour selection) and an interval at a chosen coverage
level (limit prices): holding 1 MWh, a limit sell at the interval's
lower bound L of the predicted-max hour pairs with a limit buy at the
upper bound U of the predicted-min hour when xi*L - U/xi > 0.  Holding
2 MWh (a previous buy missed) the day must shed energy: either an
unlimited sell plus a limit sell/limit buy triple when that looks more
profitable than simply selling at the predicted peak, else the
unlimited peak sale alone; an empty battery mirrors this with buys.
The final test day rebalances unilaterally back to 1 MWh.

Fills follow day-ahead auction mechanics: limit orders execute at the
market clearing price whenever the limit is crossed (sell if actual >=
limit, buy if actual <= limit); unlimited orders always execute.  Cash
flow applies xi on sales and 1/xi on purchases.  Transaction costs are
ignored.

perfect_foresight computes the exact profit ceiling of this action
space by dynamic programming over the battery charge, evaluating every
reachable fill outcome at the true prices.

fixed_hours_backtest and unlimited_bids_backtest are simple comparison
strategies (fixed buy/sell hours, and unconditional orders at the
forecast extremes); both are plain reconstructions for context, not
calibrated benchmarks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from probcast.distribution import PointForecast, QuantileForecast
from probcast.errors import ConfigError, DataError
from probcast.metrics import intervals_from_quantiles

CAPACITY_MWH = 2
INITIAL_CHARGE_MWH = 1
DEFAULT_EFFICIENCY = 0.9
SELL = "sell"
BUY = "buy"


@dataclass(frozen=True)
class Order:
    hour: int
    side: str
    limit: float | None = None


@dataclass
class DayPlan:
    case: str
    orders: list
    condition_value: float | None = None
    limit_orders_placed: bool = False


@dataclass(frozen=True)
class Trade:
    day: object
    hour: int
    side: str
    limit: float | None
    price: float
    cash: float
    charge_after: int


@dataclass
class TradeLedger:
    days: list
    trades: list
    end_of_day_charge: list
    total_profit: float
    per_transaction_profit: float
    profitable_limit_days: int
    daily_cash: np.ndarray = field(default=None)


def _check_efficiency(efficiency: float) -> None:
    if not 0.0 < efficiency <= 1.0:
        raise ConfigError(f"efficiency must be in (0, 1], got {efficiency}")


def _check_charge(charge: int) -> None:
    if charge not in (0, 1, 2):
        raise ConfigError(f"battery charge must be 0, 1 or 2 MWh, got {charge}")


def _bounds_for_day(quantile_row: np.ndarray, level: int):
    row = np.asarray(quantile_row, dtype=float)
    if row.shape != (24, 99):
        raise DataError(f"quantile day row must be (24, 99), got {row.shape}")
    iv = intervals_from_quantiles(row[None, :, :], level)
    return iv.lower[0], iv.upper[0]


def _best_sell_triple(point: np.ndarray, efficiency: float):
    """Hours (s1, s2, b) maximizing xi*(p[s1]+p[s2]) - p[b]/xi, s1 < b.

    All hours distinct; ties resolve to the lexicographically earliest
    triple.
    """
    h = point.size
    idx = np.arange(h)
    s1, s2, b = np.meshgrid(idx, idx, idx, indexing="ij")
    obj = efficiency * (point[s1] + point[s2]) - point[b] / efficiency
    mask = (s1 < b) & (s1 != s2) & (s2 != b)
    obj = np.where(mask, obj, -np.inf)
    flat = int(np.argmax(obj))
    return np.unravel_index(flat, obj.shape)


def _best_buy_triple(point: np.ndarray, efficiency: float):
    """Hours (b1, b2, s) maximizing xi*p[s] - (p[b1]+p[b2])/xi, b1 < s."""
    h = point.size
    idx = np.arange(h)
    b1, b2, s = np.meshgrid(idx, idx, idx, indexing="ij")
    obj = efficiency * point[s] - (point[b1] + point[b2]) / efficiency
    mask = (b1 < s) & (b1 != b2) & (b2 != s)
    obj = np.where(mask, obj, -np.inf)
    flat = int(np.argmax(obj))
    return np.unravel_index(flat, obj.shape)


def plan_day(
    quantile_row,
    point_row,
    level: int,
    charge: int,
    efficiency: float = DEFAULT_EFFICIENCY,
) -> DayPlan:
    """Orders for one day given the battery charge at its start."""
    _check_charge(charge)
    _check_efficiency(efficiency)
    point = np.asarray(point_row, dtype=float)
    if point.shape != (24,):
        raise DataError(f"point day row must be (24,), got {point.shape}")
    lower, upper = _bounds_for_day(quantile_row, level)
    xi = efficiency

    if charge == 1:
        h_sell = int(np.argmax(point))
        h_buy = int(np.argmin(point))
        margin = xi * lower[h_sell] - upper[h_buy] / xi
        if margin > 0.0 and h_sell != h_buy:
            orders = [Order(h_sell, SELL, float(lower[h_sell])), Order(h_buy, BUY, float(upper[h_buy]))]
            return DayPlan("pair", orders, margin, True)
        return DayPlan("hold", [], margin, False)

    if charge == 2:
        s1, s2, b = (int(v) for v in _best_sell_triple(point, xi))
        s3 = int(np.argmax(point))
        lhs = xi * point[s1] + xi * lower[s2] - upper[b] / xi
        rhs = xi * point[s3]
        margin = lhs - rhs
        if margin > 0.0:
            orders = [
                Order(s1, SELL, None),
                Order(s2, SELL, float(lower[s2])),
                Order(b, BUY, float(upper[b])),
            ]
            return DayPlan("sell_triple", orders, margin, True)
        return DayPlan("forced_sell", [Order(s3, SELL, None)], margin, False)

    b1, b2, s = (int(v) for v in _best_buy_triple(point, xi))
    b3 = int(np.argmin(point))
    lhs = xi * lower[s] - point[b1] / xi - upper[b2] / xi
    rhs = -point[b3] / xi
    margin = lhs - rhs
    if margin > 0.0:
        orders = [
            Order(b1, BUY, None),
            Order(b2, BUY, float(upper[b2])),
            Order(s, SELL, float(lower[s])),
        ]
        return DayPlan("buy_triple", orders, margin, True)
    return DayPlan("forced_buy", [Order(b3, BUY, None)], margin, False)


def plan_final_day(point_row, charge: int) -> DayPlan:
    """Unilateral rebalance to 1 MWh on the last day."""
    _check_charge(charge)
    point = np.asarray(point_row, dtype=float)
    if charge == 2:
        return DayPlan("final_sell", [Order(int(np.argmax(point)), SELL, None)])
    if charge == 0:
        return DayPlan("final_buy", [Order(int(np.argmin(point)), BUY, None)])
    return DayPlan("final_hold", [])


def settle_day(plan: DayPlan, actual_prices, charge: int, efficiency: float = DEFAULT_EFFICIENCY, day=None):
    """Execute a plan against realized prices.

    Returns (cash delta, new charge, trades).  Orders settle in hour
    order; the plans constructed here keep the charge within [0, 2] for
    every fill combination.
    """
    _check_charge(charge)
    _check_efficiency(efficiency)
    prices = np.asarray(actual_prices, dtype=float)
    cash = 0.0
    trades = []
    for order in sorted(plan.orders, key=lambda o: o.hour):
        if not 0 <= order.hour < prices.size:
            raise DataError(f"order hour {order.hour} outside the price row")
        price = float(prices[order.hour])
        if order.side == SELL:
            filled = order.limit is None or price >= order.limit
            if filled:
                delta = efficiency * price
                charge -= 1
        elif order.side == BUY:
            filled = order.limit is None or price <= order.limit
            if filled:
                delta = -price / efficiency
                charge += 1
        else:
            raise ConfigError(f"unknown order side {order.side!r}")
        if filled:
            if not 0 <= charge <= CAPACITY_MWH:
                raise DataError("plan drove the battery outside its capacity")
            cash += delta
            trades.append(Trade(day, order.hour, order.side, order.limit, price, delta, charge))
    return cash, charge, trades


def backtest(
    qf: QuantileForecast,
    point,
    actual,
    level: int = 90,
    efficiency: float = DEFAULT_EFFICIENCY,
    initial_charge: int = INITIAL_CHARGE_MWH,
) -> TradeLedger:
    """Run the strategy over the whole span covered by the forecasts.

    Days before the last trade the full policy; the last day only
    rebalances, so the ledger always ends at 1 MWh.
    """
    if not isinstance(qf, QuantileForecast):
        raise DataError("qf must be a QuantileForecast")
    point_values = point.values if isinstance(point, PointForecast) else np.asarray(point, dtype=float)
    if isinstance(point, PointForecast) and list(point.dates) != list(qf.dates):
        raise DataError("point forecast dates do not cover the quantile forecast span")
    actual = np.asarray(actual, dtype=float)
    n = len(qf.dates)
    if point_values.shape != (n, 24) or actual.shape != (n, 24):
        raise DataError("point and actual arrays must be (days, 24) aligned with the forecasts")
    charge = initial_charge
    _check_charge(charge)
    trades = []
    charges = []
    daily_cash = np.zeros(n)
    profitable_days = 0
    for d in range(n):
        if d == n - 1:
            plan = plan_final_day(point_values[d], charge)
        else:
            plan = plan_day(qf.values[d], point_values[d], level, charge, efficiency)
            if plan.limit_orders_placed:
                profitable_days += 1
        cash, charge, day_trades = settle_day(plan, actual[d], charge, efficiency, day=qf.dates[d])
        daily_cash[d] = cash
        trades.extend(day_trades)
        charges.append(charge)
    total = float(daily_cash.sum())
    per_transaction = total / len(trades) if trades else 0.0
    return TradeLedger(
        list(qf.dates), trades, charges, total, per_transaction, profitable_days, daily_cash
    )


def _masked_max(values, mask) -> float:
    if not np.any(mask):
        return -np.inf
    return float(np.max(np.where(mask, values, -np.inf)))


def _day_gains(prices: np.ndarray, xi: float) -> dict:
    """Best achievable cash for every (charge, next charge) transition.

    The action space matches every fill outcome the daily plans can
    produce at true prices; unreachable transitions map to -inf.
    """
    p = prices
    h = p.size
    idx = np.arange(h)
    sell_best = xi * float(p.max())
    buy_best = -float(p.min()) / xi

    i, j = np.meshgrid(idx, idx, indexing="ij")
    pair = xi * p[i] - p[j] / xi
    pair_any = _masked_max(pair, i != j)
    pair_fwd = _masked_max(pair, i < j)
    pair_rev = _masked_max(-p[i] / xi + xi * p[j], i < j)

    # two same-side fills need a third distinct hour after the earlier
    # fill for the plan's mandatory counter-order to have lived on
    two_ok = (i != j) & (np.minimum(i, j) <= h - 3)
    two_sell = _masked_max(xi * (p[i] + p[j]), two_ok)
    two_buy = _masked_max(-(p[i] + p[j]) / xi, two_ok)

    s1, s2, b = np.meshgrid(idx, idx, idx, indexing="ij")
    distinct = (s1 != s2) & (s2 != b) & (s1 != b)
    triple_sell = _masked_max(
        xi * (p[s1] + p[s2]) - p[b] / xi, distinct & (s1 < b)
    )
    triple_buy = _masked_max(
        xi * p[b] - (p[s1] + p[s2]) / xi, distinct & (s1 < b)
    )

    return {
        (1, 1): max(0.0, pair_any),
        (1, 0): sell_best,
        (1, 2): buy_best,
        (2, 1): max(sell_best, triple_sell),
        (2, 0): two_sell,
        (2, 2): pair_fwd,
        (0, 1): max(buy_best, triple_buy),
        (0, 2): two_buy,
        (0, 0): pair_rev,
    }


def perfect_foresight(
    actual,
    efficiency: float = DEFAULT_EFFICIENCY,
    initial_charge: int = INITIAL_CHARGE_MWH,
) -> float:
    """Exact profit ceiling of the strategy's action space.

    Backward dynamic program over the battery charge with the same
    final-day unilateral rebalance the backtest applies.
    """
    _check_efficiency(efficiency)
    _check_charge(initial_charge)
    prices = np.asarray(actual, dtype=float)
    if prices.ndim != 2 or prices.shape[0] < 1:
        raise DataError("actual prices must be (days, hours)")
    if prices.shape[1] < 4:
        raise DataError("needs at least 4 hours per day")
    xi = efficiency
    last = prices[-1]
    value = {
        0: -float(last.min()) / xi,
        1: 0.0,
        2: xi * float(last.max()),
    }
    for d in range(prices.shape[0] - 2, -1, -1):
        gains = _day_gains(prices[d], xi)
        value = {
            c: max(gains[(c, nxt)] + value[nxt] for nxt in (0, 1, 2))
            for c in (0, 1, 2)
        }
    return float(value[initial_charge])


def fixed_hours_backtest(
    actual,
    dates,
    buy_hour: int = 3,
    sell_hour: int = 19,
    efficiency: float = DEFAULT_EFFICIENCY,
) -> TradeLedger:
    """Buy and sell 1 MWh at the same two clock hours every day."""
    _check_efficiency(efficiency)
    prices = np.asarray(actual, dtype=float)
    if buy_hour == sell_hour or not (0 <= buy_hour < 24 and 0 <= sell_hour < 24):
        raise ConfigError("buy and sell hours must be distinct hours of day")
    trades = []
    daily_cash = np.zeros(prices.shape[0])
    for d in range(prices.shape[0]):
        charge = INITIAL_CHARGE_MWH
        day = dates[d]
        for hour in sorted((buy_hour, sell_hour)):
            price = float(prices[d, hour])
            if hour == buy_hour:
                delta, charge = -price / efficiency, charge + 1
                trades.append(Trade(day, hour, BUY, None, price, delta, charge))
            else:
                delta, charge = efficiency * price, charge - 1
                trades.append(Trade(day, hour, SELL, None, price, delta, charge))
            daily_cash[d] += delta
    total = float(daily_cash.sum())
    return TradeLedger(
        list(dates),
        trades,
        [INITIAL_CHARGE_MWH] * prices.shape[0],
        total,
        total / len(trades) if trades else 0.0,
        0,
        daily_cash,
    )


def unlimited_bids_backtest(
    point,
    actual,
    dates=None,
    efficiency: float = DEFAULT_EFFICIENCY,
) -> TradeLedger:
    """Unconditional daily cycle at the forecast extremes.

    Sells at the predicted-max hour and buys at the predicted-min hour
    with unlimited orders; holds when the forecast is flat.
    """
    _check_efficiency(efficiency)
    point_values = point.values if isinstance(point, PointForecast) else np.asarray(point, dtype=float)
    if dates is None:
        if not isinstance(point, PointForecast):
            raise DataError("dates are required when point is a bare array")
        dates = point.dates
    prices = np.asarray(actual, dtype=float)
    if prices.shape != point_values.shape:
        raise DataError("point and actual shapes differ")
    trades = []
    daily_cash = np.zeros(prices.shape[0])
    for d in range(prices.shape[0]):
        h_sell = int(np.argmax(point_values[d]))
        h_buy = int(np.argmin(point_values[d]))
        if h_sell == h_buy:
            continue
        charge = INITIAL_CHARGE_MWH
        day = dates[d]
        for hour in sorted((h_buy, h_sell)):
            price = float(prices[d, hour])
            if hour == h_buy:
                delta, charge = -price / efficiency, charge + 1
                trades.append(Trade(day, hour, BUY, None, price, delta, charge))
            else:
                delta, charge = efficiency * price, charge - 1
                trades.append(Trade(day, hour, SELL, None, price, delta, charge))
            daily_cash[d] += delta
    total = float(daily_cash.sum())
    return TradeLedger(
        list(dates),
        trades,
        [INITIAL_CHARGE_MWH] * prices.shape[0],
        total,
        total / len(trades) if trades else 0.0,
        0,
        daily_cash,
    )


def save_ledger(ledger: TradeLedger, path) -> None:
    """Executed trades as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "hour", "side", "limit", "fill_price", "cash", "battery_after"])
        for t in ledger.trades:
            writer.writerow(
                [
                    t.day.isoformat() if hasattr(t.day, "isoformat") else t.day,
                    t.hour,
                    t.side,
                    "" if t.limit is None else repr(float(t.limit)),
                    repr(float(t.price)),
                    repr(float(t.cash)),
                    t.charge_after,
                ]
            )
