import json
from datetime import date

import httpx
import pytest

from cryptolab.errors import MarketDataError, NewsFetchError, RateLimitError
from cryptolab.market_data import (
    CSV_FIELDS,
    DatasetSplit,
    MarketDaySnapshot,
    MarketSeries,
    SplitKind,
    fetch_news_remote,
    get_split,
    load_market_csv,
    load_news_json,
    slice_window,
    split_trend,
    write_market_csv,
    write_news_json,
)

HEADER = ",".join(CSV_FIELDS)


def _csv(tmp_path, rows, name="btc_market.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def _snap(day, price=100.0):
    return MarketDaySnapshot(day, price, price, 1.0, 0.1, 10, 5.0)


def test_load_three_rows(tmp_path):
    path = _csv(tmp_path, [
        "2024-01-01,100,101,5,0.1,10,7",
        "2024-01-02,101,99.5,6,0.2,11,8",
        "2024-01-03,99.5,102,7,0.3,12,9",
    ])
    series = load_market_csv(path)
    assert series.asset_id == "BTC"
    assert len(series) == 3
    assert series.open_prices == [100.0, 101.0, 99.5]
    assert series[1].unique_addresses == 11


def test_rows_are_sorted_by_date(tmp_path):
    path = _csv(tmp_path, ["2024-01-02,2,2,1,1,1,1", "2024-01-01,1,1,1,1,1,1"])
    assert load_market_csv(path).dates == [date(2024, 1, 1), date(2024, 1, 2)]


def test_duplicate_date_rejected(tmp_path):
    path = _csv(tmp_path, ["2024-01-01,1,1,1,1,1,1", "2024-01-01,2,2,1,1,1,1"])
    with pytest.raises(MarketDataError, match="line 3: duplicate date"):
        load_market_csv(path)


def test_negative_price_rejected(tmp_path):
    path = _csv(tmp_path, ["2024-01-01,-5,1,1,1,1,1"])
    with pytest.raises(MarketDataError, match="non-positive price"):
        load_market_csv(path)


def test_gap_rejected(tmp_path):
    path = _csv(tmp_path, ["2024-01-01,1,1,1,1,1,1", "2024-01-03,1,1,1,1,1,1"])
    with pytest.raises(MarketDataError, match="missing date"):
        load_market_csv(path)


@pytest.mark.parametrize("row,msg", [
    ("2024-01-01,1,1,1,1,1", "malformed row"),
    ("2024-13-01,1,1,1,1,1,1", "unparseable date"),
    ("2024-01-01,abc,1,1,1,1,1", "open_price"),
    ("2024-01-01,1,1,1,1,1.5,1", "unique_addresses"),
])
def test_malformed_rows(tmp_path, row, msg):
    with pytest.raises(MarketDataError, match=msg):
        load_market_csv(_csv(tmp_path, [row]))


def test_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("date,open\n2024-01-01,1\n")
    with pytest.raises(MarketDataError, match="header"):
        load_market_csv(path)


def test_csv_round_trip(tmp_path, btc_series):
    out = tmp_path / "btc_copy.csv"
    write_market_csv(btc_series, out)
    assert load_market_csv(out) == btc_series


def test_news_round_trip(tmp_path, btc_news):
    out = tmp_path / "btc_news.json"
    write_news_json(btc_news, out)
    again = load_news_json(out)
    assert again.all() == btc_news.all()


def test_news_missing_title(tmp_path):
    path = tmp_path / "btc_news.json"
    path.write_text(json.dumps([{"date": "2024-01-01", "body": "b", "source": "Bloomberg"}]))
    with pytest.raises(MarketDataError, match="missing field: title"):
        load_news_json(path)


def test_news_empty_array(tmp_path):
    path = tmp_path / "btc_news.json"
    path.write_text("[]")
    feed = load_news_json(path)
    assert len(feed) == 0
    assert feed.on(date(2024, 1, 1)) == ()


def test_news_groups_by_day(btc_news):
    day = btc_news.all()[0].date
    assert all(a.date == day for a in btc_news.on(day))
    assert btc_news.between(day, day) == list(btc_news.on(day))


def test_slice_window():
    days = [_snap(date(2024, 1, d), float(d)) for d in range(1, 11)]
    series = MarketSeries("BTC", days)
    win = slice_window(series, date(2024, 1, 8), 7)
    assert win.dates[0] == date(2024, 1, 2) and win.dates[-1] == date(2024, 1, 8)
    assert len(slice_window(series, date(2024, 1, 3), 7)) == 3
    with pytest.raises(MarketDataError):
        slice_window(series, date(2024, 2, 1), 7)
    with pytest.raises(MarketDataError):
        slice_window(series, date(2024, 1, 3), 0)


def test_split_trend_examples():
    assert split_trend(get_split("BTC", "bull")) == pytest.approx(79.63, abs=0.01)
    assert split_trend(get_split("ETH", "val")) == pytest.approx(9.99, abs=0.01)
    flat = DatasetSplit("BTC", SplitKind.VALIDATION, date(2024, 1, 1), date(2024, 1, 5), 10.0, 10.0)
    assert split_trend(flat) == 0.0


def test_split_validation():
    with pytest.raises(MarketDataError):
        DatasetSplit("BTC", SplitKind.VALIDATION, date(2024, 1, 5), date(2024, 1, 1), 1.0, 1.0)
    with pytest.raises(MarketDataError, match="unknown split"):
        get_split("BTC", "sideways")
    with pytest.raises(MarketDataError, match="no split"):
        get_split("DOGE", "bull")


def test_split_trading_days_exclude_end():
    s = DatasetSplit("BTC", SplitKind.VALIDATION, date(2024, 1, 1), date(2024, 1, 4), 1.0, 2.0)
    assert s.trading_days == [date(2024, 1, 1), date(2024, 1, 2), date(2024, 1, 3)]
    assert DatasetSplit.from_dict(s.to_dict()) == s


# ---------------------------------------------------------------- remote news

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_fetch_news_two_articles():
    seen = {}

    def handler(request):
        seen.update(request.url.params)
        return httpx.Response(200, json=[
            {"date": "2024-01-24", "title": "A", "body": "a", "source": "Bloomberg"},
            {"date": "2024-01-24", "title": "B", "body": "b", "source": "crypto.news"},
            {"date": "2024-01-24", "title": "C", "body": "c", "source": "Some Blog"},
            {"date": "2024-01-24", "title": "D", "body": "d", "source": "Bloomberg", "lang": "de"},
        ])

    feed = fetch_news_remote("BTC", date(2024, 1, 24), date(2024, 1, 24), "https://news.test/search",
                             client=_client(handler))
    assert [a.title for a in feed.all()] == ["A", "B"]
    assert seen == {"keyword": "Bitcoin", "from": "2024-01-24", "to": "2024-01-24", "lang": "en"}


def test_fetch_news_rate_limited():
    handler = lambda request: httpx.Response(429, headers={"Retry-After": "30"})  # noqa: E731
    with pytest.raises(RateLimitError) as info:
        fetch_news_remote("ETH", date(2024, 1, 1), date(2024, 1, 2), "https://news.test", client=_client(handler))
    assert info.value.retry_after == 30.0
    assert info.value.retriable


def test_fetch_news_empty_body():
    feed = fetch_news_remote("SOL", date(2024, 1, 1), date(2024, 1, 2), "https://news.test",
                             client=_client(lambda r: httpx.Response(200, content=b"")))
    assert len(feed) == 0
    assert (feed.start, feed.end) == (date(2024, 1, 1), date(2024, 1, 2))


def test_fetch_news_server_error_is_retriable():
    with pytest.raises(NewsFetchError) as info:
        fetch_news_remote("BTC", date(2024, 1, 1), date(2024, 1, 2), "https://news.test",
                          client=_client(lambda r: httpx.Response(503)))
    assert info.value.retriable
    with pytest.raises(NewsFetchError) as info:
        fetch_news_remote("BTC", date(2024, 1, 1), date(2024, 1, 2), "https://news.test",
                          client=_client(lambda r: httpx.Response(404)))
    assert not info.value.retriable
