"""Market statistics and news ingestion, windowing, and dataset splits.

Market CSV layout (UTF-8, header row, ISO dates)::

    date,open_price,close_price,volume,avg_gas_fee,unique_addresses,total_value_transferred

News JSON layout: an array of ``{"date", "title", "body", "source", "url"}`` objects.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import httpx

from .errors import MarketDataError, NewsFetchError, RateLimitError

log = logging.getLogger(__name__)

ASSETS = ("BTC", "ETH", "SOL")
ASSET_NAMES = {"BTC": "Bitcoin", "ETH": "Ethereum", "SOL": "Solana"}

CSV_FIELDS = (
    "date",
    "open_price",
    "close_price",
    "volume",
    "avg_gas_fee",
    "unique_addresses",
    "total_value_transferred",
)
NEWS_REQUIRED = ("date", "title", "body", "source")

DEFAULT_NEWS_SOURCES = ("Bloomberg", "Yahoo Finance", "crypto.news")


def _parse_day(text: str) -> date:
    return date.fromisoformat(text.strip())


@dataclass(frozen=True)
class MarketDaySnapshot:
    date: date
    open_price: float
    close_price: float
    volume: float
    avg_gas_fee: float
    unique_addresses: int
    total_value_transferred: float

    def __post_init__(self):
        for name in ("open_price", "close_price"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise MarketDataError(f"non-positive price: {name}={value} on {self.date}")
        for name in ("volume", "avg_gas_fee", "unique_addresses", "total_value_transferred"):
            value = getattr(self, name)
            if not value >= 0:
                raise MarketDataError(f"negative {name}={value} on {self.date}")


@dataclass(frozen=True)
class MarketSeries:
    """Gap-free daily series for one asset, oldest first."""

    asset_id: str
    days: tuple[MarketDaySnapshot, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(self.days))
        for prev, cur in zip(self.days, self.days[1:]):
            if cur.date == prev.date:
                raise MarketDataError(f"duplicate date {cur.date}")
            if cur.date < prev.date:
                raise MarketDataError(f"dates out of order at {cur.date}")
            if cur.date - prev.date != timedelta(days=1):
                raise MarketDataError(f"missing date(s) between {prev.date} and {cur.date}")
        object.__setattr__(self, "_index", {d.date: i for i, d in enumerate(self.days)})

    def __len__(self) -> int:
        return len(self.days)

    def __iter__(self):
        return iter(self.days)

    def __getitem__(self, i):
        return self.days[i]

    @property
    def dates(self) -> list[date]:
        return [d.date for d in self.days]

    @property
    def open_prices(self) -> list[float]:
        return [d.open_price for d in self.days]

    def index_of(self, day: date) -> int:
        try:
            return self._index[day]
        except KeyError:
            raise MarketDataError(f"{day} not in {self.asset_id} series") from None

    def __contains__(self, day: date) -> bool:
        return day in self._index

    def upto(self, day: date) -> "MarketSeries":
        """All snapshots up to and including ``day``."""
        return MarketSeries(self.asset_id, self.days[: self.index_of(day) + 1])


@dataclass(frozen=True)
class NewsArticle:
    date: date
    title: str
    body: str
    source: str
    url: str | None = None

    def __post_init__(self):
        if not self.title or not self.title.strip():
            raise MarketDataError("missing field: title")

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "title": self.title,
            "body": self.body,
            "source": self.source,
            "url": self.url,
        }


@dataclass(frozen=True)
class NewsFeed:
    """Articles for one asset grouped by publication day.

    ``start``/``end`` is the declared (inclusive) range; ``None`` for an empty feed.
    """

    asset_id: str
    articles: dict[date, tuple[NewsArticle, ...]]
    start: date | None = None
    end: date | None = None

    def __post_init__(self):
        ordered = {d: tuple(self.articles[d]) for d in sorted(self.articles)}
        object.__setattr__(self, "articles", ordered)
        if ordered:
            if self.start is None:
                object.__setattr__(self, "start", next(iter(ordered)))
            if self.end is None:
                object.__setattr__(self, "end", next(reversed(ordered)))
        for day in ordered:
            if (self.start and day < self.start) or (self.end and day > self.end):
                raise MarketDataError(f"article dated {day} outside feed range {self.start}..{self.end}")

    @classmethod
    def from_articles(cls, asset_id: str, articles: Iterable[NewsArticle], start=None, end=None) -> "NewsFeed":
        grouped: dict[date, list[NewsArticle]] = defaultdict(list)
        for art in articles:
            grouped[art.date].append(art)
        return cls(asset_id, {d: tuple(v) for d, v in grouped.items()}, start, end)

    @classmethod
    def empty(cls, asset_id: str = "") -> "NewsFeed":
        return cls(asset_id, {})

    def __len__(self) -> int:
        return sum(len(v) for v in self.articles.values())

    def on(self, day: date) -> tuple[NewsArticle, ...]:
        return self.articles.get(day, ())

    def between(self, first: date, last: date) -> list[NewsArticle]:
        """Articles dated in ``[first, last]``, oldest first."""
        return [a for d, arts in self.articles.items() if first <= d <= last for a in arts]

    def all(self) -> list[NewsArticle]:
        return [a for arts in self.articles.values() for a in arts]


class SplitKind(str, Enum):
    VALIDATION = "validation"
    TEST_BULL = "test_bull"
    TEST_BEAR = "test_bear"

    @classmethod
    def parse(cls, text: str) -> "SplitKind":
        aliases = {"val": "validation", "bull": "test_bull", "bear": "test_bear"}
        key = text.strip().lower().replace("-", "_")
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise MarketDataError(f"unknown split {text!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class DatasetSplit:
    """Trading range ``[start_date, end_date)``; the portfolio is valued at ``end_price``."""

    asset_id: str
    kind: SplitKind
    start_date: date
    end_date: date
    start_price: float
    end_price: float
    expected_trend: float | None = None

    def __post_init__(self):
        if not self.start_date < self.end_date:
            raise MarketDataError(f"split start {self.start_date} is not before end {self.end_date}")
        if not (self.start_price > 0 and self.end_price > 0):
            raise MarketDataError("split prices must be positive")

    @property
    def trading_days(self) -> list[date]:
        n = (self.end_date - self.start_date).days
        return [self.start_date + timedelta(days=i) for i in range(n)]

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "kind": self.kind.value,
            "start_date": self.start_date.isoformat(),
            "end_date": self.end_date.isoformat(),
            "start_price": self.start_price,
            "end_price": self.end_price,
            "expected_trend": self.expected_trend,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSplit":
        try:
            return cls(
                asset_id=data["asset_id"],
                kind=SplitKind.parse(data.get("kind", "validation")),
                start_date=_parse_day(data["start_date"]),
                end_date=_parse_day(data["end_date"]),
                start_price=float(data["start_price"]),
                end_price=float(data["end_price"]),
                expected_trend=data.get("expected_trend"),
            )
        except KeyError as exc:
            raise MarketDataError(f"split missing field: {exc.args[0]}") from None


def _split(asset, kind, start, end, open_, close, trend):
    return DatasetSplit(asset, SplitKind(kind), _parse_day(start), _parse_day(end), open_, close, trend)


# Published split table, stored verbatim (the Trend column included).
PUBLISHED_SPLITS: tuple[DatasetSplit, ...] = (
    _split("BTC", "validation", "2023-11-16", "2024-01-15", 37879.97, 42511.96, 12.23),
    _split("BTC", "test_bull", "2024-01-24", "2024-03-13", 39877.59, 71631.35, 79.63),
    _split("BTC", "test_bear", "2024-05-21", "2024-07-13", 71443.06, 59231.95, -17.09),
    _split("ETH", "validation", "2023-11-10", "2024-01-08", 2121.06, 2333.03, 9.99),
    _split("ETH", "test_bull", "2024-01-24", "2024-03-13", 2241.74, 4006.45, 78.72),
    _split("ETH", "test_bear", "2024-05-27", "2024-07-08", 3826.13, 2929.86, -23.42),
    _split("SOL", "validation", "2023-11-16", "2024-01-08", 65.53, 97.79, 49.18),
    _split("SOL", "test_bull", "2024-01-24", "2024-03-13", 84.28, 151.02, 77.35),
    _split("SOL", "test_bear", "2024-05-21", "2024-07-11", 186.51, 127.61, -15.53),
)


def get_split(asset_id: str, kind: SplitKind | str) -> DatasetSplit:
    if isinstance(kind, str):
        kind = SplitKind.parse(kind)
    asset_id = asset_id.upper()
    for split in PUBLISHED_SPLITS:
        if split.asset_id == asset_id and split.kind is kind:
            return split
    raise MarketDataError(f"no split for asset {asset_id!r}; expected one of: {', '.join(ASSETS)}")


def split_trend(split: DatasetSplit) -> float:
    """Price change across the split, in percent."""
    return (split.end_price - split.start_price) / split.start_price * 100.0


def _number(text: str, name: str, lineno: int, integer: bool = False):
    try:
        value = float(text)
    except (TypeError, ValueError):
        value = math.nan
    if math.isnan(value) or (integer and not value.is_integer()):
        raise MarketDataError(f"line {lineno}: unparseable number for {name}: {text!r}")
    return int(value) if integer else value


def load_market_csv(path: str | Path, asset_id: str | None = None) -> MarketSeries:
    """Load and validate a market-statistics CSV.

    ``asset_id`` defaults to the first ``_``-separated token of the file name
    (``btc_market.csv`` -> ``BTC``).
    """
    path = Path(path)
    if asset_id is None:
        asset_id = path.stem.split("_")[0].upper()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_FIELDS:
            raise MarketDataError(f"line 1: header must be {','.join(CSV_FIELDS)}; got {header}")
        days = []
        seen: dict[date, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CSV_FIELDS):
                raise MarketDataError(f"line {lineno}: malformed row, expected {len(CSV_FIELDS)} fields, got {len(row)}")
            try:
                day = _parse_day(row[0])
            except ValueError:
                raise MarketDataError(f"line {lineno}: unparseable date {row[0]!r}") from None
            if day in seen:
                raise MarketDataError(f"line {lineno}: duplicate date {day} (first seen on line {seen[day]})")
            seen[day] = lineno
            values = [_number(row[i], CSV_FIELDS[i], lineno, integer=(i == 5)) for i in range(1, 7)]
            try:
                days.append(MarketDaySnapshot(day, *values))
            except MarketDataError as exc:
                raise MarketDataError(f"line {lineno}: {exc}") from None
    days.sort(key=lambda d: d.date)
    return MarketSeries(asset_id, tuple(days))


def write_market_csv(series: MarketSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for d in series:
            writer.writerow([
                d.date.isoformat(),
                repr(d.open_price),
                repr(d.close_price),
                repr(d.volume),
                repr(d.avg_gas_fee),
                d.unique_addresses,
                repr(d.total_value_transferred),
            ])


def _article_from_record(record, index: int) -> NewsArticle:
    if not isinstance(record, dict):
        raise MarketDataError(f"article {index}: expected an object, got {type(record).__name__}")
    for key in NEWS_REQUIRED:
        if key not in record or record[key] is None:
            raise MarketDataError(f"article {index}: missing field: {key}")
    try:
        day = _parse_day(str(record["date"])[:10])
    except ValueError:
        raise MarketDataError(f"article {index}: unparseable date {record['date']!r}") from None
    try:
        return NewsArticle(day, str(record["title"]), str(record["body"]), str(record["source"]), record.get("url"))
    except MarketDataError as exc:
        raise MarketDataError(f"article {index}: {exc}") from None


def load_news_json(path: str | Path, asset_id: str | None = None) -> NewsFeed:
    path = Path(path)
    if asset_id is None:
        asset_id = path.stem.split("_")[0].upper()
    with path.open(encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MarketDataError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(records, list):
        raise MarketDataError(f"{path}: expected a JSON array of articles")
    return NewsFeed.from_articles(asset_id, (_article_from_record(r, i) for i, r in enumerate(records)))


def write_news_json(feed: NewsFeed, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump([a.to_dict() for a in feed.all()], fh, indent=1, ensure_ascii=False)
        fh.write("\n")


def slice_window(series: MarketSeries, as_of: date, lookback: int) -> MarketSeries:
    """The ``lookback`` most recent snapshots ending at ``as_of`` (fewer at the series head)."""
    if lookback < 1:
        raise MarketDataError(f"lookback must be >= 1, got {lookback}")
    end = series.index_of(as_of) + 1
    return MarketSeries(series.asset_id, series.days[max(0, end - lookback):end])


def fetch_news_remote(
    asset_id: str,
    start: date,
    end: date,
    endpoint: str,
    *,
    sources: Sequence[str] | None = DEFAULT_NEWS_SOURCES,
    client: httpx.Client | None = None,
    timeout: float = 30.0,
) -> NewsFeed:
    """Query a news search endpoint for one asset over ``[start, end]``.

    Sends ``GET endpoint?keyword=<asset name>&from=..&to=..&lang=en`` and expects a
    JSON array in the news-file schema. Records with a non-English ``lang`` field
    or a publisher outside ``sources`` are dropped (``sources=None`` keeps all).
    """
    if end < start:
        raise NewsFetchError(f"empty date range {start}..{end}", retriable=False)
    params = {
        "keyword": ASSET_NAMES.get(asset_id.upper(), asset_id),
        "from": start.isoformat(),
        "to": end.isoformat(),
        "lang": "en",
    }
    owns_client = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        resp = client.get(endpoint, params=params)
    except httpx.HTTPError as exc:
        raise NewsFetchError(f"news request failed: {exc}") from exc
    finally:
        if owns_client:
            client.close()

    if resp.status_code == 429:
        retry_after = resp.headers.get("Retry-After")
        try:
            retry_after = float(retry_after) if retry_after is not None else None
        except ValueError:
            retry_after = None
        raise RateLimitError("news endpoint rate limit exceeded", retry_after=retry_after)
    if resp.status_code >= 500:
        raise NewsFetchError(f"news endpoint returned {resp.status_code}")
    if resp.status_code >= 400:
        raise NewsFetchError(f"news endpoint returned {resp.status_code}", retriable=False)

    if not resp.content.strip():
        return NewsFeed(asset_id.upper(), {}, start, end)
    try:
        records = resp.json()
    except ValueError as exc:
        raise NewsFetchError(f"news endpoint returned invalid JSON: {exc}", retriable=False) from exc
    if not isinstance(records, list):
        raise NewsFetchError("news endpoint did not return a JSON array", retriable=False)

    allowed = {s.casefold() for s in sources} if sources is not None else None
    kept = []
    for i, record in enumerate(records):
        lang = record.get("lang") or record.get("language") if isinstance(record, dict) else None
        if lang and str(lang).lower() not in ("en", "english"):
            continue
        article = _article_from_record(record, i)
        if allowed is not None and article.source.casefold() not in allowed:
            continue
        if not start <= article.date <= end:
            log.debug("dropping out-of-range article %r dated %s", article.title, article.date)
            continue
        kept.append(article)
    return NewsFeed.from_articles(asset_id.upper(), kept, start, end)
