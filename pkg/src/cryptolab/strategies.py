"""Rule-based baselines and their validation-split tuning.

Every signal is +1.0 (spend all cash), -1.0 (sell all units) or 0.0 (hold).
Crossovers compare yesterday's relation with today's; a tie counts as "below".
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .engine import BacktestResult, EngineConfig, Observation, Strategy, run_backtest, run_many
from .errors import StrategyError
from .indicators import bollinger, macd, sma
from .market_data import DatasetSplit, MarketSeries, NewsFeed

BUY, HOLD, SELL = 1.0, 0.0, -1.0

SMA_GRID = (5, 10, 15, 20, 25, 30)
BOLLINGER_WINDOW = 20
BOLLINGER_K = 2.0


class StrategyKind(str, Enum):
    BUY_AND_HOLD = "buy_and_hold"
    SMA = "sma"
    SLMA = "slma"
    MACD = "macd"
    BOLLINGER = "bollinger"
    AGENT = "agent"

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        key = text.strip().lower().replace("-", "_")
        key = {"bnh": "buy_and_hold", "buyandhold": "buy_and_hold", "bb": "bollinger"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise StrategyError(f"unknown strategy {text!r}; expected one of: {valid}") from None


def _check_day(prices: Sequence[float], day_index: int) -> None:
    if not 0 <= day_index < len(prices):
        raise StrategyError(f"day_index {day_index} outside series of length {len(prices)}")


def buy_and_hold_signal(day_index: int) -> float:
    if day_index < 0:
        raise StrategyError(f"day_index must be >= 0, got {day_index}")
    return BUY if day_index == 0 else HOLD


def sma_signal(prices: Sequence[float], window: int, day_index: int) -> float:
    _check_day(prices, day_index)
    avg = sma(prices[: day_index + 1], window)[day_index]
    if avg is None:
        return HOLD
    p = prices[day_index]
    return BUY if p > avg else SELL if p < avg else HOLD


def _crossover(fast: Sequence, slow: Sequence, i: int) -> float:
    if i < 1 or None in (fast[i - 1], slow[i - 1], fast[i], slow[i]):
        return HOLD
    was_above = fast[i - 1] > slow[i - 1]
    is_above = fast[i] > slow[i]
    if is_above and not was_above:
        return BUY
    if was_above and not is_above:
        return SELL
    return HOLD


def slma_signal(prices: Sequence[float], short: int, long: int, day_index: int) -> float:
    if short >= long:
        raise StrategyError(f"slma needs short < long, got {short} >= {long}")
    _check_day(prices, day_index)
    head = prices[: day_index + 1]
    return _crossover(sma(head, short), sma(head, long), day_index)


def macd_signal(prices: Sequence[float], day_index: int) -> float:
    _check_day(prices, day_index)
    line, signal = macd(prices[: day_index + 1])
    return _crossover(line, signal, day_index)


def bollinger_signal(prices: Sequence[float], day_index: int) -> float:
    _check_day(prices, day_index)
    _, upper, lower = bollinger(prices[: day_index + 1], BOLLINGER_WINDOW, BOLLINGER_K)
    if lower[day_index] is None:
        return HOLD
    p = prices[day_index]
    if p < lower[day_index]:
        return BUY
    if p > upper[day_index]:
        return SELL
    return HOLD


class RuleStrategy(Strategy):
    """Engine adapter for the baseline signals.

    Indicators run over the open prices of the full history the engine exposes,
    so data before the split start serves as warm-up.
    """

    def __init__(self, kind: StrategyKind | str, **params):
        self.kind = StrategyKind.parse(kind) if isinstance(kind, str) else kind
        if self.kind is StrategyKind.AGENT:
            raise StrategyError("agent strategies are built by cryptolab.agents")
        if self.kind is StrategyKind.SMA:
            self.params = {"window": int(params.get("window", 20))}
            if self.params["window"] < 1:
                raise StrategyError("sma window must be >= 1")
        elif self.kind is StrategyKind.SLMA:
            self.params = {"short_window": int(params.get("short_window", 5)),
                           "long_window": int(params.get("long_window", 20))}
            if self.params["short_window"] >= self.params["long_window"]:
                raise StrategyError("slma requires short_window < long_window")
        else:
            self.params = {}
        self.name = self.kind.value

    def decide(self, obs: Observation) -> float:
        prices = obs.prices
        today = len(prices) - 1
        k = self.kind
        if k is StrategyKind.BUY_AND_HOLD:
            return buy_and_hold_signal(obs.day_index)
        if k is StrategyKind.SMA:
            return sma_signal(prices, self.params["window"], today)
        if k is StrategyKind.SLMA:
            return slma_signal(prices, self.params["short_window"], self.params["long_window"], today)
        if k is StrategyKind.MACD:
            return macd_signal(prices, today)
        return bollinger_signal(prices, today)

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "params": dict(self.params)}


def default_grid(kind: StrategyKind) -> list[dict]:
    if kind is StrategyKind.SMA:
        return [{"window": w} for w in SMA_GRID]
    if kind is StrategyKind.SLMA:
        return [{"short_window": s, "long_window": l} for s, l in itertools.combinations(SMA_GRID, 2)]
    raise StrategyError(f"no tuning grid for {kind.value}; only sma and slma are tuned")


def _param_key(params: dict) -> tuple:
    if "window" in params:
        return (params["window"],)
    return (params["short_window"], params["long_window"])


@dataclass
class TuningResult:
    kind: StrategyKind
    candidates: list[tuple[dict, float]]
    chosen: dict
    chosen_return: float
    split: DatasetSplit | None = None
    results: list[BacktestResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "strategy": self.kind.value,
            "split": self.split.to_dict() if self.split else None,
            "candidates": [{"params": p, "total_return": r} for p, r in self.candidates],
            "chosen": self.chosen,
            "chosen_return": self.chosen_return,
        }


def select_best(candidates: Sequence[tuple[dict, float]]) -> tuple[dict, float]:
    """Argmax by return; ties go to the smallest parameters."""
    if not candidates:
        raise StrategyError("empty tuning grid")
    best = None
    for params, ret in sorted(candidates, key=lambda c: _param_key(c[0])):
        if best is None or (ret > best[1] and not math.isclose(ret, best[1], rel_tol=1e-12, abs_tol=1e-12)):
            best = (params, ret)
    return best


def tune(
    kind: StrategyKind | str,
    grid: Sequence[dict] | None,
    series: MarketSeries,
    split: DatasetSplit,
    config: EngineConfig | None = None,
    news: NewsFeed | None = None,
    max_workers: int | None = None,
) -> TuningResult:
    """Backtest every grid candidate fee-free on ``split`` and keep the best."""
    kind = StrategyKind.parse(kind) if isinstance(kind, str) else kind
    grid = list(default_grid(kind) if grid is None else grid)
    if not grid:
        raise StrategyError("empty tuning grid")
    base = config or EngineConfig()
    cfg = EngineConfig(capital=base.capital, fee_rate=0.0, lookback=base.lookback, news_days=base.news_days)
    jobs = [(RuleStrategy(kind, **params), series, news, split, cfg) for params in grid]
    results = run_many(jobs, max_workers=max_workers)
    candidates = [(dict(params), res.total_return) for params, res in zip(grid, results)]
    chosen, ret = select_best(candidates)
    return TuningResult(kind, candidates, chosen, ret, split, results)
