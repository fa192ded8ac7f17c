"""Moving averages, MACD and Bollinger Bands over daily price lists.

Windowed outputs hold ``None`` until the window fills, so index ``i`` always
lines up with ``prices[i]``.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

from .errors import IndicatorError

IndicatorSeries = list[Optional[float]]

MACD_FAST = 12
MACD_SLOW = 26
MACD_SIGNAL = 9


def _check_prices(prices: Sequence[float]) -> None:
    for i, p in enumerate(prices):
        if not p > 0:
            raise IndicatorError(f"price at index {i} must be positive, got {p}")


def sma(prices: Sequence[float], window: int) -> IndicatorSeries:
    if window < 1:
        raise IndicatorError(f"window must be >= 1, got {window}")
    _check_prices(prices)
    out: IndicatorSeries = [None] * len(prices)
    for i in range(window - 1, len(prices)):
        out[i] = math.fsum(prices[i - window + 1:i + 1]) / window
    return out


def _ema_values(values: Sequence[float], period: int) -> list[float]:
    alpha = 2.0 / (period + 1)
    out = [float(values[0])]
    for v in values[1:]:
        out.append(alpha * v + (1 - alpha) * out[-1])
    return out


def ema(prices: Sequence[float], period: int) -> IndicatorSeries:
    """Exponential moving average seeded with the first price, alpha = 2/(period+1)."""
    if period < 1:
        raise IndicatorError(f"period must be >= 1, got {period}")
    if not prices:
        raise IndicatorError("ema needs a non-empty series")
    _check_prices(prices)
    return _ema_values(prices, period)


def macd(prices: Sequence[float]) -> tuple[IndicatorSeries, IndicatorSeries]:
    """12/26 EMA difference and its 9-day EMA signal line, both defined from index 0."""
    if not prices:
        raise IndicatorError("macd needs a non-empty series")
    _check_prices(prices)
    fast = _ema_values(prices, MACD_FAST)
    slow = _ema_values(prices, MACD_SLOW)
    line = [f - s for f, s in zip(fast, slow)]
    return line, _ema_values(line, MACD_SIGNAL)


def bollinger(
    prices: Sequence[float], window: int = 20, k: float = 2.0
) -> tuple[IndicatorSeries, IndicatorSeries, IndicatorSeries]:
    """Middle band (SMA) with bands at ``k`` population standard deviations."""
    if window < 2:
        raise IndicatorError(f"bollinger window must be >= 2, got {window}")
    mid = sma(prices, window)
    upper: IndicatorSeries = [None] * len(prices)
    lower: IndicatorSeries = [None] * len(prices)
    for i in range(window - 1, len(prices)):
        m = mid[i]
        var = math.fsum((p - m) ** 2 for p in prices[i - window + 1:i + 1]) / window
        sd = math.sqrt(var)
        upper[i] = m + k * sd
        lower[i] = m - k * sd
    return mid, upper, lower
