import sys
from pathlib import Path

import pytest

from cryptolab.market_data import load_market_csv, load_news_json

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "split-trend reproduction",
    2: "buy-and-hold engine reproduction",
    3: "Sharpe formula cross-check",
    4: "indicator oracle equivalence",
    5: "engine property suite",
    6: "agent pipeline determinism",
    7: "parser robustness",
    8: "tuning correctness",
}
_outcomes: dict[int, list[tuple[str, bool]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(marker.args[0], []).append((item.name, rep.passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        runs = _outcomes[n]
        ok = sum(passed for _, passed in runs)
        status = "PASS" if ok == len(runs) else "FAIL"
        terminalreporter.write_line(f"criterion {n} ({CRITERIA.get(n, '?')}): {status} [{ok}/{len(runs)} cases]")
        for name, passed in runs:
            if not passed:
                terminalreporter.write_line(f"    failed: {name}")


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def btc_series():
    return load_market_csv(FIXTURES / "btc_market.csv")


@pytest.fixture(scope="session")
def btc_news():
    return load_news_json(FIXTURES / "btc_news.json")


@pytest.fixture(scope="session")
def series_for():
    cache = {}

    def load(asset):
        if asset not in cache:
            cache[asset] = load_market_csv(FIXTURES / f"{asset.lower()}_market.csv")
        return cache[asset]

    return load
