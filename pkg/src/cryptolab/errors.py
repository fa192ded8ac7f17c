"""Exception hierarchy shared by every cryptolab module."""


class LabError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class MarketDataError(LabError):
    pass


class NewsFetchError(LabError):
    """Remote news request failed; ``retriable`` tells callers whether to try again."""

    def __init__(self, message: str, retriable: bool = True):
        super().__init__(message)
        self.retriable = retriable


class RateLimitError(NewsFetchError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message, retriable=True)
        self.retry_after = retry_after


class IndicatorError(LabError):
    pass


class StrategyError(LabError):
    pass


class BacktestError(LabError):
    pass


class MetricsError(LabError):
    pass


class AgentError(LabError):
    pass


class PromptError(AgentError):
    pass


class BackendError(AgentError):
    """LLM backend failure. Transient failures are retried by the agents."""

    def __init__(self, message: str, transient: bool = True):
        super().__init__(message)
        self.transient = transient


class TradeParseError(AgentError):
    pass


class ConfigError(LabError):
    pass
