"""cryptolab command line: backtest, tune, ablate, report.

Settings come from an optional JSON file (``--config``) with flags taking
precedence. Exit codes: 0 success, 1 domain error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .engine import BacktestResult, EngineConfig, run_backtest
from .errors import ConfigError, LabError, MarketDataError
from .market_data import ASSETS, DatasetSplit, MarketSeries, NewsFeed, SplitKind, get_split, load_market_csv, load_news_json
from .metrics import MetricsReport
from .strategies import RuleStrategy, StrategyKind, default_grid, tune

log = logging.getLogger("cryptolab")

LABELS = {
    "buy_and_hold": "Buy and Hold",
    "sma": "SMA",
    "slma": "SLMA",
    "macd": "MACD",
    "bollinger": "Bollinger Bands",
    "agent": "FS-ReasoningAgent",
}
SINGLE_ABLATIONS = ("reflection", "fact_reasoning", "subjectivity_reasoning", "statistics")
PATH_KEYS = ("market_csv", "news_json", "fixture", "out", "transcript")


@dataclass
class ExperimentConfig:
    asset: str = "BTC"
    split: object = None  # kind name or a full split mapping
    strategy: str = "buy_and_hold"
    params: dict = field(default_factory=dict)
    fee_rate: float = 0.0
    capital: float = 1_000_000.0
    lookback: int = 7
    news_days: int = 1
    market_csv: str | None = None
    news_json: str | None = None
    backend: str = "scripted"
    fixture: str | None = None
    endpoint: str | None = None
    model: str = "gpt-4o"
    api_key_env: str = "CRYPTOLAB_API_KEY"
    ablate: list = field(default_factory=list)
    deterministic: bool = False
    memory_capacity: int = 3
    retries: int = 2
    grid: list | None = None
    label: str | None = None
    out: str | None = None
    transcript: str | None = None

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict) -> "ExperimentConfig":
        data: dict = {}
        if path:
            path = Path(path)
            with path.open(encoding="utf-8") as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}: invalid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            base = path.parent
            for key in PATH_KEYS:
                if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                    data[key] = str(base / data[key])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.asset = self.asset.upper()
        if isinstance(self.ablate, str):
            self.ablate = [a for a in self.ablate.replace(" ", ",").split(",") if a]
        if self.backend not in ("scripted", "live"):
            raise ConfigError(f"backend must be 'scripted' or 'live', got {self.backend!r}")
        if self.deterministic and self.backend != "scripted":
            raise ConfigError("--deterministic requires the scripted backend")

    def engine(self) -> EngineConfig:
        return EngineConfig(self.capital, self.fee_rate, self.lookback, self.news_days)

    def resolve_split(self, kind: str | None = None, default: str = "test_bull") -> DatasetSplit:
        chosen = kind or self.split or default
        if isinstance(chosen, dict):
            data = {"asset_id": self.asset, **chosen}
            return DatasetSplit.from_dict(data)
        return get_split(self.asset, chosen)


def _load_data(cfg: ExperimentConfig) -> tuple[MarketSeries, NewsFeed | None]:
    if not cfg.market_csv:
        raise ConfigError("no market data: set market_csv in the config or pass --market-csv")
    named = Path(cfg.market_csv).stem.split("_")[0].upper()
    if named in ASSETS and named != cfg.asset:
        raise MarketDataError(f"{cfg.market_csv} holds {named} data but the asset is {cfg.asset}")
    series = load_market_csv(cfg.market_csv, asset_id=cfg.asset)
    news = load_news_json(cfg.news_json, asset_id=cfg.asset) if cfg.news_json else None
    return series, news


def _make_backend(cfg: ExperimentConfig):
    from .agents import HttpBackend, ScriptedBackend

    if cfg.backend == "scripted":
        if not cfg.fixture:
            raise ConfigError("scripted backend needs --fixture")
        return ScriptedBackend.from_file(cfg.fixture)
    if not cfg.endpoint:
        raise ConfigError("live backend needs an endpoint in the config")
    return HttpBackend(cfg.endpoint, cfg.model, api_key_env=cfg.api_key_env)


def _make_strategy(cfg: ExperimentConfig, ablate: Sequence[str] | None = None):
    kind = StrategyKind.parse(cfg.strategy)
    if kind is not StrategyKind.AGENT:
        return RuleStrategy(kind, **cfg.params)
    from .agents import AblationConfig, AgentStrategy

    ablation = AblationConfig.parse(cfg.ablate if ablate is None else ablate)
    return AgentStrategy(_make_backend(cfg), ablation, cfg.memory_capacity, cfg.retries, label=cfg.label)


def _label(cfg: ExperimentConfig, strategy) -> str:
    if cfg.label:
        base = cfg.label
    else:
        base = LABELS[StrategyKind.parse(cfg.strategy).value]
        params = getattr(strategy, "params", None)
        if params:
            base += "(" + ",".join(str(v) for v in params.values()) + ")"
    variant = strategy.describe().get("variant")
    if variant and variant != "Full":
        base += f" [{variant}]"
    return base


def _metadata(command: str) -> dict:
    return {
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "version": __version__,
    }


def report_dict(result: BacktestResult, label: str, command: str = "backtest", strategy=None) -> dict:
    data = result.to_dict()
    data["label"] = label
    if strategy is not None and hasattr(strategy, "decisions"):
        data["decisions"] = strategy.decisions
    data["metadata"] = _metadata(command)
    return data


def _write_json(path: str | Path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def fmt2(x: float | None) -> str:
    if x is None:
        return "n/a"
    text = f"{x:.2f}"
    return "0.00" if text == "-0.00" else text


def summary_line(result: BacktestResult, label: str) -> str:
    m = result.metrics
    return (f"{result.split.asset_id} {result.split.kind.value} {label}: "
            f"total return {fmt2(m.total_return)}%, Sharpe {fmt2(m.sharpe_ratio)}")


# --------------------------------------------------------------------------- commands

def cmd_backtest(cfg: ExperimentConfig) -> int:
    series, news = _load_data(cfg)
    split = cfg.resolve_split()
    strategy = _make_strategy(cfg)
    result = run_backtest(strategy, series, news, split, cfg.engine())
    label = _label(cfg, strategy)
    if cfg.out:
        _write_json(cfg.out, report_dict(result, label, "backtest", strategy))
        if hasattr(strategy, "transcript_jsonl"):
            tpath = Path(cfg.transcript) if cfg.transcript else Path(cfg.out).with_suffix(".transcript.jsonl")
            tpath.write_text(strategy.transcript_jsonl(), encoding="utf-8")
    print(summary_line(result, label))
    return 0


def _parse_grid(kind: StrategyKind, grid) -> list[dict] | None:
    if grid is None:
        return None
    if isinstance(grid, str):
        grid = [g for g in grid.replace(" ", "").split(",") if g]
    out = []
    for item in grid:
        if isinstance(item, dict):
            out.append(item)
        elif kind is StrategyKind.SLMA:
            try:
                short, long = (int(x) for x in str(item).split(":"))
            except ValueError:
                raise ConfigError(f"slma grid entries look like SHORT:LONG, got {item!r}") from None
            out.append({"short_window": short, "long_window": long})
        else:
            try:
                out.append({"window": int(item)})
            except ValueError:
                raise ConfigError(f"sma grid entries must be integers, got {item!r}") from None
    if not out:
        raise ConfigError("empty tuning grid")
    return out


def cmd_tune(cfg: ExperimentConfig) -> int:
    kind = StrategyKind.parse(cfg.strategy)
    grid = _parse_grid(kind, cfg.grid) if cfg.grid is not None else default_grid(kind)
    series, news = _load_data(cfg)
    split = cfg.resolve_split(default="validation")
    result = tune(kind, grid, series, split, cfg.engine(), news)
    data = result.to_dict()
    data["metadata"] = _metadata("tune")
    if cfg.out:
        _write_json(cfg.out, data)
    for params, ret in result.candidates:
        print(f"  {json.dumps(params, sort_keys=True)}: {fmt2(ret)}%")
    print(f"chosen {json.dumps(result.chosen, sort_keys=True)} ({fmt2(result.chosen_return)}% on {split.kind.value})")
    return 0


def ablation_table(rows: Sequence[tuple[str, dict]]) -> str:
    lines = [
        "| Components | Return (%) Bull | Return (%) Bear | Sharpe Ratio Bull | Sharpe Ratio Bear |",
        "|---|---|---|---|---|",
    ]
    for label, by_kind in rows:
        bull, bear = by_kind.get("test_bull"), by_kind.get("test_bear")
        cell = lambda m, attr: fmt2(getattr(m, attr)) if m else "-"  # noqa: E731
        lines.append(f"| {label} | {cell(bull, 'total_return')} | {cell(bear, 'total_return')} | "
                     f"{cell(bull, 'sharpe_ratio')} | {cell(bear, 'sharpe_ratio')} |")
    return "\n".join(lines)


def cmd_ablate(cfg: ExperimentConfig, full_only: bool = False, variants: Sequence[str] | None = None) -> int:
    from .agents import AblationConfig, ablation_label

    if StrategyKind.parse(cfg.strategy) is not StrategyKind.AGENT:
        raise ConfigError("ablate needs --strategy agent")
    chosen = [] if full_only else list(variants or SINGLE_ABLATIONS)
    settings = [AblationConfig()] + [AblationConfig.parse([name]) for name in chosen]
    series, news = _load_data(cfg)
    out_dir = Path(cfg.out) if cfg.out else None
    rows = []
    for ablation in settings:
        by_kind = {}
        label = ablation_label(ablation)
        for kind in ("test_bull", "test_bear"):
            split = cfg.resolve_split(kind)
            strategy = _make_strategy(cfg, ablate=[k.value for k in ablation.disabled])
            result = run_backtest(strategy, series, news, split, cfg.engine())
            by_kind[kind] = result.metrics
            if out_dir:
                stem = f"{cfg.asset.lower()}_{kind}_{'full' if not ablation.disabled else '_'.join(sorted(k.value for k in ablation.disabled))}"
                _write_json(out_dir / f"{stem}.json", report_dict(result, label, "ablate", strategy))
                (out_dir / f"{stem}.transcript.jsonl").write_text(strategy.transcript_jsonl(), encoding="utf-8")
        rows.append((label, by_kind))
    table = ablation_table(rows)
    if out_dir:
        (out_dir / "ablation.md").write_text(table + "\n", encoding="utf-8")
        _write_json(out_dir / "ablation.json", {
            "asset": cfg.asset,
            "rows": [{"components": label, **{k: m.to_dict() for k, m in by_kind.items()}} for label, by_kind in rows],
            "metadata": _metadata("ablate"),
        })
    print(table)
    return 0


def _load_report(path: str | Path) -> dict:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LabError(f"{path}: malformed report: {exc}") from None
    if not isinstance(data, dict) or "metrics" not in data:
        raise LabError(f"{path}: malformed report: missing metrics")
    try:
        data["metrics"] = MetricsReport.from_dict(data["metrics"])
        data["kind"] = SplitKind.parse(data["split"]["kind"]).value
        data["asset"] = data.get("asset_id") or data["split"]["asset_id"]
    except (KeyError, TypeError, LabError) as exc:
        raise LabError(f"{path}: malformed report: {exc}") from None
    data.setdefault("label", (data.get("strategy") or {}).get("name", path.stem))
    return data


def render_table(reports: Sequence[dict], fmt: str = "markdown") -> str:
    assets: dict[str, dict[str, dict[str, MetricsReport]]] = {}
    for rep in reports:
        if rep["kind"] not in ("test_bull", "test_bear"):
            log.warning("skipping %s report for %s (only bull/bear columns are tabulated)", rep["kind"], rep["label"])
            continue
        assets.setdefault(rep["asset"], {}).setdefault(rep["label"], {})[rep["kind"]] = rep["metrics"]
    header = ["Strategy", "Total Return (%) Bull", "Total Return (%) Bear",
              "Daily Return (%) Bull", "Daily Return (%) Bear", "Sharpe Ratio Bull", "Sharpe Ratio Bear"]
    blocks = []
    for asset, rows in assets.items():
        body = []
        for label, by_kind in rows.items():
            bull, bear = by_kind.get("test_bull"), by_kind.get("test_bear")
            daily = lambda m: f"{fmt2(m.daily_return_mean)} ± {fmt2(m.daily_return_std)}" if m else "-"  # noqa: E731
            body.append([
                label,
                fmt2(bull.total_return) if bull else "-",
                fmt2(bear.total_return) if bear else "-",
                daily(bull), daily(bear),
                fmt2(bull.sharpe_ratio) if bull else "-",
                fmt2(bear.sharpe_ratio) if bear else "-",
            ])
        if fmt == "markdown":
            lines = [f"### {asset}", "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
            lines += ["| " + " | ".join(r) + " |" for r in body]
        else:
            widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
            lines = [asset] + ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + body]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def cmd_report(paths: Sequence[str], fmt: str = "markdown", out: str | None = None) -> int:
    if not paths:
        raise ConfigError("report needs at least one report file")
    table = render_table([_load_report(p) for p in paths], fmt)
    if out:
        Path(out).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


# --------------------------------------------------------------------------- argparse

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--asset", help="BTC, ETH or SOL")
    p.add_argument("--split", help="validation, test_bull or test_bear")
    p.add_argument("--strategy", help="buy_and_hold, sma, slma, macd, bollinger or agent")
    p.add_argument("--window", type=int, help="sma window")
    p.add_argument("--short", type=int, help="slma short window")
    p.add_argument("--long", type=int, help="slma long window")
    p.add_argument("--fee-rate", type=float, dest="fee_rate")
    p.add_argument("--lookback", type=int)
    p.add_argument("--market-csv", dest="market_csv")
    p.add_argument("--news-json", dest="news_json")
    p.add_argument("--backend", choices=("scripted", "live"))
    p.add_argument("--fixture", help="scripted backend fixture (JSON)")
    p.add_argument("--ablate", help="comma-separated agents to disable")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="require the scripted backend; never touch the network")
    p.add_argument("--label", help="row label used in report tables")
    p.add_argument("--out", help="output file (directory for ablate)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cryptolab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cryptolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backtest", help="run one strategy over one split")
    _common(p)
    p.add_argument("--transcript", help="agent call transcript (JSON lines)")

    p = sub.add_parser("tune", help="grid-search sma/slma windows on the validation split")
    _common(p)
    p.add_argument("--grid", help="e.g. 5,10,15 (sma) or 5:10,5:20 (slma)")

    p = sub.add_parser("ablate", help="full agent pipeline plus single-agent removals, bull and bear")
    _common(p)
    p.add_argument("--full-only", action="store_true")

    p = sub.add_parser("report", help="render stored reports as a results table")
    p.add_argument("reports", nargs="*")
    p.add_argument("--format", choices=("markdown", "text"), default="markdown")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("asset", "split", "strategy", "fee_rate", "lookback", "market_csv", "news_json",
            "backend", "fixture", "deterministic", "label", "out", "transcript", "grid")
    over = {k: getattr(args, k, None) for k in keys}
    if args.command != "ablate" and args.ablate is not None:
        over["ablate"] = args.ablate
    params = {}
    if args.window is not None:
        params["window"] = args.window
    if args.short is not None:
        params["short_window"] = args.short
    if args.long is not None:
        params["long_window"] = args.long
    if params:
        over["params"] = params
    return over


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.reports, args.format, args.out)
        cfg = ExperimentConfig.load(args.config, _overrides(args))
        if args.command == "backtest":
            return cmd_backtest(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
        variants = None
        if args.ablate is not None:
            from .agents import AblationConfig

            variants = [k.value for k in AblationConfig.parse(args.ablate).disabled]
            variants = [v for v in SINGLE_ABLATIONS if v in variants]
        return cmd_ablate(cfg, full_only=args.full_only, variants=variants)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
