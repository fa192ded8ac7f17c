"""Daily backtest loop over one asset with a cash/units portfolio.

Every trading day the strategy sees data up to and including that day, its
action is executed at the day's open price, and net worth is sampled at that
open right after execution. The run is valued at ``split.end_price``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Sequence

from .errors import BacktestError, LabError, StrategyError
from .market_data import DatasetSplit, MarketSeries, NewsArticle, NewsFeed, slice_window
from .metrics import MetricsReport, compute_report

log = logging.getLogger(__name__)

DEFAULT_CAPITAL = 1_000_000.0


@dataclass(frozen=True)
class TradeAction:
    """+a spends fraction a of cash, -a sells fraction a of held units, 0 holds."""

    value: float

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise StrategyError(f"trade action must lie in [-1, 1], got {self.value}")

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class PortfolioState:
    cash: float
    units: float
    fee_rate: float = 0.0

    def __post_init__(self):
        if self.cash < 0 or self.units < 0:
            raise BacktestError(f"negative balance: cash={self.cash}, units={self.units}")
        if not 0.0 <= self.fee_rate < 1.0:
            raise BacktestError(f"fee_rate must be in [0, 1), got {self.fee_rate}")


def init_portfolio(capital: float, start_price: float, fee_rate: float = 0.0) -> PortfolioState:
    """Half the capital in cash, half converted to the asset at ``start_price`` (no fee)."""
    if not capital > 0:
        raise BacktestError(f"capital must be positive, got {capital}")
    if not start_price > 0:
        raise BacktestError(f"start price must be positive, got {start_price}")
    half = capital / 2.0
    return PortfolioState(cash=half, units=half / start_price, fee_rate=fee_rate)


def execute_action(state: PortfolioState, action: float | TradeAction, price: float) -> PortfolioState:
    a = float(TradeAction(float(action)))
    if not price > 0:
        raise BacktestError(f"execution price must be positive, got {price}")
    keep = 1.0 - state.fee_rate
    if a > 0:
        spent = a * state.cash
        return PortfolioState(state.cash * (1.0 - a), state.units + spent * keep / price, state.fee_rate)
    if a < 0:
        sold = -a * state.units
        return PortfolioState(state.cash + sold * price * keep, state.units * (1.0 + a), state.fee_rate)
    return state


def net_worth(state: PortfolioState, price: float) -> float:
    if not price > 0:
        raise BacktestError(f"valuation price must be positive, got {price}")
    return state.cash + state.units * price


@dataclass(frozen=True)
class Observation:
    """What a strategy may look at on one trading day."""

    asset_id: str
    date: date
    day_index: int
    history: MarketSeries
    window: MarketSeries
    news: tuple[NewsArticle, ...]
    portfolio: PortfolioState

    @property
    def prices(self) -> list[float]:
        return self.history.open_prices


@dataclass(frozen=True)
class DailyRecord:
    date: date
    action: float
    execution_price: float
    cash: float
    units: float
    net_worth: float
    daily_return: float | None = None

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "action": self.action,
            "execution_price": self.execution_price,
            "cash": self.cash,
            "units": self.units,
            "net_worth": self.net_worth,
            "daily_return": self.daily_return,
        }


class Strategy:
    """Base class for anything the engine can drive.

    ``decide`` must only use the observation it is given. ``feedback`` is called
    once a day's outcome is known, before the next decision.
    """

    name = "strategy"

    def reset(self) -> None:
        pass

    def decide(self, obs: Observation) -> float:
        raise NotImplementedError

    def feedback(self, record: DailyRecord, realized_return: float) -> None:
        pass

    def describe(self) -> dict:
        return {"name": self.name}


@dataclass(frozen=True)
class EngineConfig:
    capital: float = DEFAULT_CAPITAL
    fee_rate: float = 0.0
    lookback: int = 7
    news_days: int = 1

    def __post_init__(self):
        if self.lookback < 1:
            raise BacktestError("lookback must be >= 1")
        if self.news_days < 1:
            raise BacktestError("news_days must be >= 1")


@dataclass
class BacktestResult:
    split: DatasetSplit
    strategy: dict
    records: list[DailyRecord]
    initial_capital: float
    final_net_worth: float
    metrics: MetricsReport
    fee_rate: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def total_return(self) -> float:
        return self.metrics.total_return

    @property
    def net_worths(self) -> list[float]:
        return [r.net_worth for r in self.records] + [self.final_net_worth]

    def to_dict(self) -> dict:
        out = {
            "asset_id": self.split.asset_id,
            "split": self.split.to_dict(),
            "strategy": self.strategy,
            "fee_rate": self.fee_rate,
            "initial_capital": self.initial_capital,
            "final_net_worth": self.final_net_worth,
            "metrics": self.metrics.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_coverage(series: MarketSeries, split: DatasetSplit) -> None:
    if series.asset_id and split.asset_id and series.asset_id != split.asset_id:
        raise BacktestError(f"series is {series.asset_id} but split is {split.asset_id}")
    missing = [d for d in split.trading_days if d not in series]
    if missing:
        raise BacktestError(
            f"data gap: {len(missing)} trading day(s) of the {split.kind.value} split missing "
            f"from the series, first {missing[0]}"
        )


def run_backtest(
    strategy: Strategy,
    series: MarketSeries,
    news: NewsFeed | None,
    split: DatasetSplit,
    config: EngineConfig | None = None,
) -> BacktestResult:
    config = config or EngineConfig()
    days = split.trading_days
    if not days:
        raise BacktestError("empty trading range")
    _check_coverage(series, split)
    news = news or NewsFeed.empty(split.asset_id)

    strategy.reset()
    state = init_portfolio(config.capital, split.start_price, config.fee_rate)
    records: list[DailyRecord] = []
    for i, day in enumerate(days):
        snapshot = series[series.index_of(day)]
        price = snapshot.open_price
        if records:
            prev = records[-1]
            realized = (prev.cash + prev.units * price) / prev.net_worth - 1.0
            strategy.feedback(prev, realized)
        obs = Observation(
            asset_id=split.asset_id,
            date=day,
            day_index=i,
            history=series.upto(day),
            window=slice_window(series, day, config.lookback),
            news=tuple(news.between(day - timedelta(days=config.news_days - 1), day)),
            portfolio=state,
        )
        try:
            action = float(strategy.decide(obs))
            state = execute_action(state, action, price)
        except LabError as exc:
            raise StrategyError(f"{day}: strategy {strategy.name!r} failed: {exc}") from exc
        except Exception as exc:
            raise StrategyError(f"{day}: strategy {strategy.name!r} failed: {exc!r}") from exc
        worth = net_worth(state, price)
        ret = worth / records[-1].net_worth - 1.0 if records else None
        records.append(DailyRecord(day, action, price, state.cash, state.units, worth, ret))

    final = net_worth(state, split.end_price)
    last = records[-1]
    strategy.feedback(last, final / last.net_worth - 1.0)
    worths = [r.net_worth for r in records] + [final]
    return BacktestResult(
        split=split,
        strategy=strategy.describe(),
        records=records,
        initial_capital=config.capital,
        final_net_worth=final,
        metrics=compute_report(worths, w_start=config.capital),
        fee_rate=config.fee_rate,
    )


def run_many(jobs: Sequence[tuple], max_workers: int | None = None) -> list[BacktestResult]:
    """Run ``run_backtest(*job)`` for each job; results keep job order."""
    if not max_workers or max_workers <= 1:
        return [run_backtest(*job) for job in jobs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda job: run_backtest(*job), jobs))
