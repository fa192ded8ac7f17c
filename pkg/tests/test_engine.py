from datetime import date, timedelta

import pytest

from cryptolab.engine import (
    EngineConfig,
    Observation,
    PortfolioState,
    Strategy,
    TradeAction,
    execute_action,
    init_portfolio,
    net_worth,
    run_backtest,
    run_many,
)
from cryptolab.errors import BacktestError, StrategyError
from cryptolab.market_data import (
    DatasetSplit,
    MarketDaySnapshot,
    MarketSeries,
    NewsArticle,
    NewsFeed,
    SplitKind,
    get_split,
    split_trend,
)
from cryptolab.strategies import RuleStrategy


def _series(prices, first=date(2024, 1, 1)):
    return MarketSeries("BTC", tuple(
        MarketDaySnapshot(first + timedelta(days=i), p, p, 1.0, 1.0, 1, 1.0) for i, p in enumerate(prices)))


def _split(series, start, end):
    return DatasetSplit("BTC", SplitKind.VALIDATION, series.dates[start], series.dates[end],
                        series[start].open_price, series[end].open_price)


class Hold(Strategy):
    name = "hold"

    def decide(self, obs):
        return 0.0


class Scripted(Strategy):
    name = "scripted"

    def __init__(self, actions):
        self.actions = actions
        self.seen: list[Observation] = []
        self.feedbacks = []

    def reset(self):
        self.seen, self.feedbacks = [], []

    def decide(self, obs):
        self.seen.append(obs)
        return self.actions[obs.day_index]

    def feedback(self, record, realized_return):
        self.feedbacks.append((record.date, realized_return))


def test_init_portfolio():
    s = init_portfolio(1_000_000, 2000)
    assert (s.cash, s.units) == (500_000, 250)
    s = init_portfolio(2, 1)
    assert (s.cash, s.units) == (1, 1)
    with pytest.raises(BacktestError):
        init_portfolio(1_000_000, 0)


def test_execute_action_examples():
    s = execute_action(PortfolioState(100, 0), 0.7, 10)
    assert s.cash == pytest.approx(30) and s.units == pytest.approx(7)
    base = PortfolioState(100, 3, 0.01)
    assert execute_action(base, 0.0, 10) == base
    s = execute_action(PortfolioState(100, 0, 0.002), 1.0, 10)
    assert s.cash == 0 and s.units == pytest.approx(9.98)
    s = execute_action(PortfolioState(0, 10, 0.002), -0.5, 10)
    assert s.units == 5 and s.cash == pytest.approx(49.9)


def test_trade_action_range():
    with pytest.raises(StrategyError):
        TradeAction(1.2)
    with pytest.raises(StrategyError):
        execute_action(PortfolioState(1, 1), -1.5, 10)
    with pytest.raises(BacktestError):
        execute_action(PortfolioState(1, 1), 0.5, 0)


def test_net_worth_examples():
    assert net_worth(PortfolioState(500_000, 250), 2000) == 1_000_000
    assert net_worth(PortfolioState(42, 0), 9) == 42
    assert net_worth(PortfolioState(0, 1), 7) == 7


def test_fee_free_buy_then_sell_acquired_restores_state():
    start = PortfolioState(1000.0, 2.0)
    bought = execute_action(start, 0.4, 50.0)
    acquired = bought.units - start.units
    back = execute_action(bought, -acquired / bought.units, 50.0)
    assert back.cash == pytest.approx(start.cash, rel=1e-12)
    assert back.units == pytest.approx(start.units, rel=1e-12)


def test_always_hold_earns_half_the_trend(btc_series):
    split = get_split("BTC", "bull")
    result = run_backtest(Hold(), btc_series, None, split)
    assert result.total_return == pytest.approx(0.5 * split_trend(split), abs=1e-9)


def test_buy_and_hold_btc_bull(btc_series):
    result = run_backtest(RuleStrategy("buy_and_hold"), btc_series, None, get_split("BTC", "bull"))
    assert result.total_return == pytest.approx(79.63, abs=0.01)
    assert len(result.records) == 49
    assert result.records[0].action == 1.0 and result.records[0].cash == 0.0


def test_execution_at_open_and_records():
    series = _series([10, 20, 40, 80])
    strat = Scripted([1.0, -1.0, 0.5])
    result = run_backtest(strat, series, None, _split(series, 0, 3))
    r0, r1, r2 = result.records
    assert (r0.execution_price, r1.execution_price, r2.execution_price) == (10, 20, 40)
    assert r0.units == pytest.approx(100_000) and r0.net_worth == pytest.approx(1_000_000)
    assert r1.cash == pytest.approx(2_000_000) and r1.units == 0
    assert r2.cash == pytest.approx(1_000_000) and r2.units == pytest.approx(25_000)
    assert result.final_net_worth == pytest.approx(3_000_000)
    assert result.total_return == pytest.approx(200.0)
    assert r0.daily_return is None and r1.daily_return == pytest.approx(1.0)


def test_strategy_sees_only_the_past():
    series = _series([float(i + 1) for i in range(20)])
    strat = Scripted([0.0] * 10)
    run_backtest(strat, series, None, _split(series, 5, 15), EngineConfig(lookback=3))
    for obs in strat.seen:
        assert obs.history.dates[-1] == obs.date
        assert obs.window.dates == [obs.date - timedelta(days=k) for k in (2, 1, 0)]


def test_feedback_gets_realized_next_day_return():
    series = _series([10, 20, 40])
    strat = Scripted([0.0, 0.0])
    run_backtest(strat, series, None, _split(series, 0, 2))
    # 500k cash + 50k units: 1.0M -> 1.5M -> 2.5M as the price doubles twice
    assert [d for d, _ in strat.feedbacks] == series.dates[:2]
    assert [r for _, r in strat.feedbacks] == pytest.approx([0.5, 2 / 3])


def test_news_window():
    series = _series([10.0] * 6)
    arts = [NewsArticle(d, f"t{i}", "b", "Bloomberg") for i, d in enumerate(series.dates)]
    feed = NewsFeed.from_articles("BTC", arts)
    strat = Scripted([0.0] * 4)
    run_backtest(strat, series, feed, _split(series, 1, 5))
    assert [tuple(a.title for a in o.news) for o in strat.seen] == [("t1",), ("t2",), ("t3",), ("t4",)]
    run_backtest(strat, series, feed, _split(series, 1, 5), EngineConfig(news_days=2))
    assert [a.title for a in strat.seen[0].news] == ["t0", "t1"]


def test_deterministic(btc_series):
    split = get_split("BTC", "bear")
    a = run_backtest(RuleStrategy("macd"), btc_series, None, split, EngineConfig(fee_rate=0.001))
    b = run_backtest(RuleStrategy("macd"), btc_series, None, split, EngineConfig(fee_rate=0.001))
    assert a.to_json() == b.to_json()


def test_run_many_keeps_order(btc_series):
    split = get_split("BTC", "bull")
    jobs = [(RuleStrategy("sma", window=w), btc_series, None, split) for w in (5, 10, 20)]
    serial = run_many(jobs)
    parallel = run_many(jobs, max_workers=3)
    assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]


def test_data_gap_and_mismatch(btc_series):
    split = DatasetSplit("BTC", SplitKind.VALIDATION, date(2020, 1, 1), date(2020, 1, 5), 1.0, 1.0)
    with pytest.raises(BacktestError, match="data gap"):
        run_backtest(Hold(), btc_series, None, split)
    eth = get_split("ETH", "bull")
    with pytest.raises(BacktestError, match="series is BTC"):
        run_backtest(Hold(), btc_series, None, eth)


def test_strategy_failure_names_the_day():
    series = _series([10, 11, 12])

    class Boom(Strategy):
        name = "boom"

        def decide(self, obs):
            raise ValueError("nope")

    with pytest.raises(StrategyError, match="2024-01-01.*boom"):
        run_backtest(Boom(), series, None, _split(series, 0, 2))
    with pytest.raises(StrategyError, match="must lie in"):
        run_backtest(Scripted([3.0, 0.0]), series, None, _split(series, 0, 2))


def test_engine_config_validation():
    with pytest.raises(BacktestError):
        EngineConfig(lookback=0)
    with pytest.raises(BacktestError):
        PortfolioState(1.0, 1.0, fee_rate=1.0)
