"""Return, daily return mean/std and Sharpe ratio of a net-worth path."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import MetricsError


@dataclass(frozen=True)
class MetricsReport:
    """All percentages are in percent units; ``sharpe_ratio`` is None when daily std is zero."""

    total_return: float
    daily_return_mean: float
    daily_return_std: float
    sharpe_ratio: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        try:
            return cls(
                total_return=float(data["total_return"]),
                daily_return_mean=float(data["daily_return_mean"]),
                daily_return_std=float(data["daily_return_std"]),
                sharpe_ratio=None if data["sharpe_ratio"] is None else float(data["sharpe_ratio"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MetricsError(f"malformed metrics: {exc}") from None


def total_return(w_start: float, w_end: float) -> float:
    if not w_start > 0:
        raise MetricsError(f"starting net worth must be positive, got {w_start}")
    return (w_end - w_start) / w_start * 100.0


def daily_returns(net_worths: Sequence[float]) -> list[float]:
    if len(net_worths) < 2:
        raise MetricsError("need at least 2 net-worth points for daily returns")
    for w in net_worths:
        if not w > 0:
            raise MetricsError(f"net worth must be positive, got {w}")
    return [(b - a) / a for a, b in zip(net_worths, net_worths[1:])]


def sharpe(returns: Sequence[float], risk_free: float = 0.0) -> float:
    """(mean - risk_free) / sample std. Raises when the std is zero."""
    if len(returns) < 2:
        raise MetricsError("need at least 2 returns for a Sharpe ratio")
    sd = statistics.stdev(returns)
    if sd == 0 or not math.isfinite(sd):
        raise MetricsError("Sharpe ratio undefined: zero standard deviation of returns")
    return (statistics.fmean(returns) - risk_free) / sd


def compute_report(net_worths: Sequence[float], w_start: float | None = None) -> MetricsReport:
    """Metrics for a net-worth path; ``w_start`` defaults to its first point."""
    w_start = net_worths[0] if w_start is None else w_start
    rets = daily_returns(net_worths)
    if len(rets) >= 2:
        mean = statistics.fmean(rets)
        sd = statistics.stdev(rets)
        try:
            ratio = sharpe(rets)
        except MetricsError:
            ratio = None
    else:
        mean, sd, ratio = rets[0], 0.0, None
    return MetricsReport(
        total_return=total_return(w_start, net_worths[-1]),
        daily_return_mean=mean * 100.0,
        daily_return_std=sd * 100.0,
        sharpe_ratio=ratio,
    )
