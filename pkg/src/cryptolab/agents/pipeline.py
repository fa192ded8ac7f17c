"""Seven-agent fact/subjectivity trading pipeline.

Per trading day::

    statistics, fact, subjectivity          (raw data -> analyses)
    fact_reasoning, subjectivity_reasoning  (analyses -> trading rationale)
    reflection                              (recent memory -> guidance)
    trade                                   (everything above -> action in [-1, 1])
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
from dataclasses import dataclass, field
from datetime import date
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

from ..engine import DailyRecord, Observation, Strategy
from ..errors import AgentError, BackendError, PromptError, TradeParseError
from ..market_data import MarketSeries, NewsArticle
from .backends import DEFAULT_RETRIES, LlmBackend, Message, complete_with_retry, prompt_digest

log = logging.getLogger(__name__)


class AgentKind(str, Enum):
    STATISTICS = "statistics"
    FACT = "fact"
    SUBJECTIVITY = "subjectivity"
    FACT_REASONING = "fact_reasoning"
    SUBJECTIVITY_REASONING = "subjectivity_reasoning"
    TRADE = "trade"
    REFLECTION = "reflection"


# Report sections shown to the trade agent, in prompt order.
TRADE_SECTIONS = (
    (AgentKind.STATISTICS, "STATISTICS AGENT REPORT"),
    (AgentKind.FACT, "FACT AGENT REPORT"),
    (AgentKind.FACT_REASONING, "FACT REASONING AGENT REPORT"),
    (AgentKind.SUBJECTIVITY_REASONING, "SUBJECTIVITY REASONING AGENT REPORT"),
    (AgentKind.REFLECTION, "REFLECTION AGENT REPORT"),
)

ABLATABLE = (
    AgentKind.REFLECTION,
    AgentKind.FACT_REASONING,
    AgentKind.SUBJECTIVITY_REASONING,
    AgentKind.STATISTICS,
)

NEUTRAL_REFLECTION = (
    "No trading history is available yet. Keep a balanced approach with 50% weighting "
    "on factual information and 50% on subjectivity until returns can be evaluated."
)
NO_NEWS = "No news articles are available for this day."
TRADE_ATTEMPTS = 3


# --------------------------------------------------------------------------- prompts

@dataclass(frozen=True)
class PromptTemplate:
    kind: AgentKind
    text: str

    @property
    def placeholders(self) -> list[str]:
        return [name for _, name, _, _ in string.Formatter().parse(self.text) if name]


@lru_cache(maxsize=None)
def load_template(kind: AgentKind | str) -> PromptTemplate:
    kind = AgentKind(kind)
    text = resources.files(__package__).joinpath("prompts", f"{kind.value}.txt").read_text(encoding="utf-8")
    return PromptTemplate(kind, text.rstrip("\n"))


def render_prompt(template: PromptTemplate | str, context: Mapping[str, object]) -> str:
    text = template.text if isinstance(template, PromptTemplate) else template
    try:
        fields = [name for _, name, _, _ in string.Formatter().parse(text) if name is not None]
    except ValueError as exc:
        raise PromptError(f"malformed template: {exc}") from None
    for name in fields:
        if name == "" or name not in context:
            raise PromptError(f"unbound placeholder: {name or '<positional>'}")
    return text.format_map({k: str(v) for k, v in context.items()})


# --------------------------------------------------------------------------- data types

@dataclass(frozen=True)
class AgentReport:
    kind: AgentKind
    date: date | None
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise AgentError(f"{self.kind.value}: empty report")


@dataclass(frozen=True)
class TradeDecision:
    action: float
    fact_weight: float = 0.5
    subjective_weight: float = 0.5
    rationale: str = ""
    fallback: bool = False

    def __post_init__(self):
        if not -1.0 <= self.action <= 1.0:
            raise AgentError(f"action {self.action} outside [-1, 1]")
        if abs(self.action * 10 - round(self.action * 10)) > 1e-9:
            raise AgentError(f"action {self.action} has more than one decimal")
        if not (0.0 <= self.fact_weight <= 1.0 and 0.0 <= self.subjective_weight <= 1.0):
            raise AgentError("weights must lie in [0, 1]")
        if abs(self.fact_weight + self.subjective_weight - 1.0) > 1e-6:
            raise AgentError("factual and subjective weights must sum to 1")


@dataclass(frozen=True)
class MemoryEntry:
    date: date
    prompt_digest: str
    action: float
    realized_return: float
    fact_weight: float = 0.5
    rationale: str = ""


@dataclass(frozen=True)
class ReflectionMemory:
    capacity: int = 3
    entries: tuple[MemoryEntry, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise AgentError("memory capacity must be >= 1")
        if len(self.entries) > self.capacity:
            raise AgentError("memory holds more entries than its capacity")

    def __len__(self) -> int:
        return len(self.entries)


def update_memory(memory: ReflectionMemory, entry: MemoryEntry) -> ReflectionMemory:
    """Append ``entry``, evicting the oldest entries beyond capacity."""
    if memory.entries and entry.date <= memory.entries[-1].date:
        raise AgentError(f"memory entry for {entry.date} does not follow {memory.entries[-1].date}")
    kept = (memory.entries + (entry,))[-memory.capacity:]
    return ReflectionMemory(memory.capacity, kept)


@dataclass(frozen=True)
class AblationConfig:
    disabled: frozenset = frozenset()

    def __post_init__(self):
        disabled = frozenset(AgentKind(k) for k in self.disabled)
        bad = disabled - set(ABLATABLE)
        if bad:
            raise AgentError(
                f"cannot disable {', '.join(sorted(k.value for k in bad))}; "
                f"valid names: {', '.join(k.value for k in ABLATABLE)}"
            )
        if {AgentKind.FACT_REASONING, AgentKind.SUBJECTIVITY_REASONING} <= disabled:
            raise AgentError("at least one reasoning agent must stay enabled")
        object.__setattr__(self, "disabled", disabled)

    @classmethod
    def parse(cls, names: str | Iterable[str] | None) -> "AblationConfig":
        if names is None:
            return cls()
        if isinstance(names, str):
            names = [n for n in re.split(r"[,\s]+", names) if n]
        aliases = {"sub_reasoning": "subjectivity_reasoning", "subj_reasoning": "subjectivity_reasoning",
                   "stats": "statistics"}
        kinds = []
        valid = ", ".join(k.value for k in ABLATABLE)
        for name in names:
            key = name.strip().lower().replace("-", "_")
            key = aliases.get(key, key)
            try:
                kind = AgentKind(key)
            except ValueError:
                raise AgentError(f"unknown agent {name!r}; valid names: {valid}") from None
            kinds.append(kind)
        return cls(frozenset(kinds))

    def enabled(self, kind: AgentKind) -> bool:
        return kind not in self.disabled

    @property
    def label(self) -> str:
        return ablation_label(self)


_LABELS = {
    AgentKind.REFLECTION: "w/o Reflection Agent",
    AgentKind.FACT_REASONING: "w/o Fact Reasoning Agent",
    AgentKind.SUBJECTIVITY_REASONING: "w/o Sub. Reasoning Agent",
    AgentKind.STATISTICS: "w/o Statistics Agent",
}


def ablation_label(ablation: AblationConfig) -> str:
    if not ablation.disabled:
        return "Full"
    return "; ".join(_LABELS[k] for k in ABLATABLE if k in ablation.disabled)


# --------------------------------------------------------------------------- calls

@dataclass
class CallSettings:
    """Per-run knobs shared by every agent call."""

    asset: str = "btc"
    day: date | None = None
    retries: int = DEFAULT_RETRIES
    temperature: float = 0.0
    transcript: list | None = None


class _Recorder:
    """Backend proxy that appends one transcript record per backend call."""

    def __init__(self, backend: LlmBackend, settings: CallSettings, kind: AgentKind, prompt: str):
        self.backend = backend
        self.settings = settings
        self.kind = kind
        self.prompt = prompt

    @property
    def calls(self) -> int:
        return self.backend.calls

    def complete(self, messages, temperature=0.0):
        entry = {
            "date": self.settings.day.isoformat() if self.settings.day else None,
            "agent": self.kind.value,
            "prompt": self.prompt,
        }
        try:
            reply = self.backend.complete(messages, temperature=temperature)
        except BackendError as exc:
            entry["reply"] = None
            entry["error"] = str(exc)
            self._record(entry)
            raise
        entry["reply"] = reply
        self._record(entry)
        return reply

    def _record(self, entry):
        if self.settings.transcript is not None:
            self.settings.transcript.append(entry)


def _messages(prompt: str) -> list[Message]:
    return [{"role": "user", "content": prompt}]


def _call(backend: LlmBackend, kind: AgentKind, prompt: str, settings: CallSettings) -> str:
    proxy = _Recorder(backend, settings, kind, prompt)
    return complete_with_retry(
        proxy,
        _messages(prompt),
        retries=settings.retries,
        temperature=settings.temperature,
        label=kind.value,
    )


def _settings(settings: CallSettings | None, **overrides) -> CallSettings:
    settings = settings or CallSettings()
    for key, value in overrides.items():
        if value is not None:
            setattr(settings, key, value)
    return settings


def _num(x: float) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def format_statistics(window: MarketSeries) -> str:
    rows = [
        f"Date: {d.date.isoformat()}, Open price: {_num(d.open_price)}, Volume: {_num(d.volume)}, "
        f"Average gas fee: {_num(d.avg_gas_fee)}, Unique addresses: {d.unique_addresses}, "
        f"Total value transferred: {_num(d.total_value_transferred)}"
        for d in window
    ]
    return "{" + "; ".join(rows) + "}"


def format_news(articles: Sequence[NewsArticle]) -> str:
    if not articles:
        return NO_NEWS
    return "\n".join(repr({"title": a.title, "body": a.body}) for a in articles)


def _report(kind, settings, backend, context) -> AgentReport:
    prompt = render_prompt(load_template(kind), context)
    reply = _call(backend, kind, prompt, settings)
    return AgentReport(kind, settings.day, reply.strip())


def run_statistics_agent(backend: LlmBackend, window: MarketSeries, settings: CallSettings | None = None) -> AgentReport:
    if not len(window):
        raise AgentError("statistics agent needs a non-empty window")
    settings = _settings(settings)
    return _report(AgentKind.STATISTICS, settings, backend,
                   {"asset": settings.asset, "data": format_statistics(window)})


def run_fact_agent(backend: LlmBackend, news: Sequence[NewsArticle], settings: CallSettings | None = None) -> AgentReport:
    settings = _settings(settings)
    return _report(AgentKind.FACT, settings, backend, {"asset": settings.asset, "news": format_news(news)})


def run_subjectivity_agent(backend: LlmBackend, news: Sequence[NewsArticle], settings: CallSettings | None = None) -> AgentReport:
    settings = _settings(settings)
    return _report(AgentKind.SUBJECTIVITY, settings, backend, {"asset": settings.asset, "news": format_news(news)})


def run_fact_reasoning_agent(
    backend: LlmBackend,
    fact_report: AgentReport | None,
    stats_report: AgentReport | None,
    settings: CallSettings | None = None,
) -> AgentReport:
    """``stats_report`` is None when the statistics agent is ablated."""
    if fact_report is None:
        raise AgentError("fact reasoning agent needs the fact agent report")
    settings = _settings(settings)
    sections = [f"Factual News Analysis: {fact_report.text}"]
    if stats_report is not None:
        sections.append(f"Statistics Analysis: {stats_report.text}")
    return _report(AgentKind.FACT_REASONING, settings, backend,
                   {"asset": settings.asset, "sections": "\n".join(sections)})


def run_subjectivity_reasoning_agent(
    backend: LlmBackend, subj_report: AgentReport | None, settings: CallSettings | None = None
) -> AgentReport:
    if subj_report is None:
        raise AgentError("subjectivity reasoning agent needs the subjectivity agent report")
    settings = _settings(settings)
    return _report(AgentKind.SUBJECTIVITY_REASONING, settings, backend,
                   {"asset": settings.asset, "sections": f"Subjective News Analysis: {subj_report.text}"})


def format_memory(memory: ReflectionMemory) -> str:
    lines = []
    for e in memory.entries:
        lines.append(
            f"Date: {e.date.isoformat()}; Action: {e.action:.1f}; "
            f"Weighting: {e.fact_weight:.2f} factual, {1 - e.fact_weight:.2f} subjective; "
            f"Next-day return: {e.realized_return * 100:+.2f}%; Prompt digest: {e.prompt_digest[:12]}; "
            f"Reasoning: {e.rationale.strip()}"
        )
    return "\n".join(lines)


def run_reflection_agent(
    backend: LlmBackend, memory: ReflectionMemory, settings: CallSettings | None = None
) -> AgentReport:
    """Guidance from recent trades; a built-in neutral report when memory is empty."""
    settings = _settings(settings)
    if not memory.entries:
        return AgentReport(AgentKind.REFLECTION, settings.day, NEUTRAL_REFLECTION)
    return _report(AgentKind.REFLECTION, settings, backend,
                   {"asset": settings.asset, "history": format_memory(memory)})


def build_trade_prompt(reports: Mapping[AgentKind, AgentReport], asset: str) -> str:
    sections = [f'{label}: "{reports[kind].text}"' for kind, label in TRADE_SECTIONS if kind in reports]
    return render_prompt(load_template(AgentKind.TRADE), {"asset": asset, "sections": "\n".join(sections)})


def run_trade_agent(
    backend: LlmBackend,
    reports: Mapping[AgentKind, AgentReport] | Sequence[AgentReport],
    reflection: AgentReport | None = None,
    settings: CallSettings | None = None,
    attempts: int = TRADE_ATTEMPTS,
) -> TradeDecision:
    """Ask for a decision; after ``attempts`` unparseable replies fall back to hold."""
    settings = _settings(settings)
    if not isinstance(reports, Mapping):
        reports = {r.kind: r for r in reports}
    reports = dict(reports)
    if reflection is not None:
        reports[AgentKind.REFLECTION] = reflection
    if AgentKind.FACT_REASONING not in reports and AgentKind.SUBJECTIVITY_REASONING not in reports:
        raise AgentError("trade agent needs at least one reasoning report")
    prompt = build_trade_prompt(reports, settings.asset)
    reply = ""
    for attempt in range(1, attempts + 1):
        reply = _call(backend, AgentKind.TRADE, prompt, settings)
        try:
            return parse_trade_decision(reply)
        except TradeParseError as exc:
            log.warning("trade agent %s: unparseable reply (attempt %d/%d): %s",
                        settings.day, attempt, attempts, exc)
    log.warning("trade agent %s: no parseable action after %d attempts; holding", settings.day, attempts)
    return TradeDecision(0.0, 0.5, 0.5, reply, fallback=True)


# --------------------------------------------------------------------------- parsing

_NUM = r"[-+−]?(?:\d+(?:\.\d*)?|\.\d+)"
_ACTION = re.compile(rf"\baction\b[ \t]*\**[ \t]*[:=]?[ \t]*\**[ \t]*({_NUM})", re.IGNORECASE)
_W = r"(\d+(?:\.\d+)?|\.\d+)[ \t]*(%)?"
_WORDS = r"(?:[a-z]+[ \t]+){0,3}?"
_FACT = r"(?:factual|facts?)\b"
_SUBJ = r"subjectiv(?:e|ity)\b"
_GAP = r"[^0-9\n]{0,60}?"
_PAIR_FS = re.compile(rf"{_W}[ \t]*{_WORDS}{_FACT}{_GAP}{_W}[ \t]*{_WORDS}{_SUBJ}", re.IGNORECASE)
_PAIR_SF = re.compile(rf"{_W}[ \t]*{_WORDS}{_SUBJ}{_GAP}{_W}[ \t]*{_WORDS}{_FACT}", re.IGNORECASE)
_LABELLED = re.compile(
    rf"{_FACT}(?:[ \t]+weight)?[ \t]*[:=][ \t]*{_W}{_GAP}{_SUBJ}(?:[ \t]+weight)?[ \t]*[:=][ \t]*{_W}",
    re.IGNORECASE,
)
_SINGLE_F = re.compile(rf"{_W}[ \t]*{_WORDS}{_FACT}", re.IGNORECASE)


def _weight(num: str, pct: str | None) -> float:
    value = float(num)
    return value / 100.0 if pct else value


def _parse_weights(text: str) -> tuple[float, float]:
    found = []  # (start, factual, subjective)
    for m in _PAIR_FS.finditer(text):
        found.append((m.start(), _weight(m.group(1), m.group(2)), _weight(m.group(3), m.group(4))))
    for m in _PAIR_SF.finditer(text):
        found.append((m.start(), _weight(m.group(3), m.group(4)), _weight(m.group(1), m.group(2))))
    for m in _LABELLED.finditer(text):
        found.append((m.start(), _weight(m.group(1), m.group(2)), _weight(m.group(3), m.group(4))))
    if found:
        _, f, s = max(found, key=lambda t: t[0])
        total = f + s
        if total > 0 and math.isfinite(total):
            return f / total, s / total
        return 0.5, 0.5
    singles = [_weight(m.group(1), m.group(2)) for m in _SINGLE_F.finditer(text)]
    singles = [w for w in singles if 0.0 <= w <= 1.0]
    if singles:
        return singles[-1], 1.0 - singles[-1]
    return 0.5, 0.5


def parse_trade_decision(text: str) -> TradeDecision:
    """Read the action (last number after an "Action" label) and fact/subjective weights."""
    matches = _ACTION.findall(text or "")
    if not matches:
        raise TradeParseError("no action number found")
    raw = Decimal(matches[-1].replace("−", "-"))
    value = float(raw.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))
    if value > 1.0 or value < -1.0:
        log.warning("clamping trade action %s into [-1, 1]", raw)
        value = max(-1.0, min(1.0, value))
    value = value + 0.0  # normalise -0.0
    fact, subj = _parse_weights(text)
    return TradeDecision(value, fact, subj, text)


# --------------------------------------------------------------------------- orchestration

@dataclass(frozen=True)
class DayContext:
    asset_id: str
    date: date
    window: MarketSeries
    news: tuple[NewsArticle, ...] = ()
    memory: ReflectionMemory = field(default_factory=ReflectionMemory)


@dataclass
class StepResult:
    decision: TradeDecision
    reports: dict
    trade_prompt: str
    calls: int
    transcript: list


def agent_pipeline_step(
    backend: LlmBackend,
    ctx: DayContext,
    ablation: AblationConfig | None = None,
    *,
    retries: int = DEFAULT_RETRIES,
    temperature: float = 0.0,
) -> StepResult:
    """Run the enabled agents for one day in dependency order."""
    ablation = ablation or AblationConfig()
    transcript: list = []
    settings = CallSettings(ctx.asset_id.lower(), ctx.date, retries, temperature, transcript)
    on = ablation.enabled
    reports: dict[AgentKind, AgentReport] = {}

    if on(AgentKind.STATISTICS):
        reports[AgentKind.STATISTICS] = run_statistics_agent(backend, ctx.window, settings)
    reports[AgentKind.FACT] = run_fact_agent(backend, ctx.news, settings)
    reports[AgentKind.SUBJECTIVITY] = run_subjectivity_agent(backend, ctx.news, settings)
    if on(AgentKind.FACT_REASONING):
        reports[AgentKind.FACT_REASONING] = run_fact_reasoning_agent(
            backend, reports[AgentKind.FACT], reports.get(AgentKind.STATISTICS), settings)
    if on(AgentKind.SUBJECTIVITY_REASONING):
        reports[AgentKind.SUBJECTIVITY_REASONING] = run_subjectivity_reasoning_agent(
            backend, reports[AgentKind.SUBJECTIVITY], settings)
    if on(AgentKind.REFLECTION):
        reports[AgentKind.REFLECTION] = run_reflection_agent(backend, ctx.memory, settings)

    decision = run_trade_agent(backend, reports, settings=settings)
    return StepResult(
        decision=decision,
        reports=reports,
        trade_prompt=build_trade_prompt(reports, settings.asset),
        calls=len(transcript),
        transcript=transcript,
    )


class AgentStrategy(Strategy):
    """Engine adapter that runs the pipeline once per trading day."""

    name = "agent"

    def __init__(
        self,
        backend: LlmBackend,
        ablation: AblationConfig | None = None,
        memory_capacity: int = 3,
        retries: int = DEFAULT_RETRIES,
        temperature: float = 0.0,
        label: str | None = None,
    ):
        self.backend = backend
        self.ablation = ablation or AblationConfig()
        self.memory_capacity = memory_capacity
        self.retries = retries
        self.temperature = temperature
        self.label = label
        self.reset()

    def reset(self) -> None:
        if hasattr(self.backend, "reset"):
            self.backend.reset()
        self.memory = ReflectionMemory(self.memory_capacity)
        self.transcript: list[dict] = []
        self.decisions: list[dict] = []
        self._pending: dict[date, StepResult] = {}

    def decide(self, obs: Observation) -> float:
        ctx = DayContext(obs.asset_id, obs.date, obs.window, obs.news, self.memory)
        step = agent_pipeline_step(self.backend, ctx, self.ablation,
                                   retries=self.retries, temperature=self.temperature)
        self._pending[obs.date] = step
        self.transcript.extend(step.transcript)
        d = step.decision
        self.decisions.append({
            "date": obs.date.isoformat(),
            "action": d.action,
            "fact_weight": d.fact_weight,
            "subjective_weight": d.subjective_weight,
            "fallback": d.fallback,
            "calls": step.calls,
        })
        return d.action

    def feedback(self, record: DailyRecord, realized_return: float) -> None:
        step = self._pending.pop(record.date, None)
        if step is None:
            return
        entry = MemoryEntry(
            date=record.date,
            prompt_digest=prompt_digest(step.trade_prompt),
            action=step.decision.action,
            realized_return=realized_return,
            fact_weight=step.decision.fact_weight,
            rationale=step.decision.rationale,
        )
        self.memory = update_memory(self.memory, entry)

    def describe(self) -> dict:
        return {
            "name": self.label or "agent",
            "kind": "agent",
            "ablation": sorted(k.value for k in self.ablation.disabled),
            "variant": ablation_label(self.ablation),
        }

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in self.transcript)

    def decisions_jsonl(self) -> str:
        return "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.decisions)
