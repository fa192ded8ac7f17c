"""Fact/subjectivity multi-agent trading pipeline and its LLM backends."""

from .backends import HttpBackend, LlmBackend, ScriptedBackend, complete_with_retry, prompt_digest
from .pipeline import (
    ABLATABLE,
    AblationConfig,
    AgentKind,
    AgentReport,
    AgentStrategy,
    CallSettings,
    DayContext,
    MemoryEntry,
    PromptTemplate,
    ReflectionMemory,
    StepResult,
    TradeDecision,
    ablation_label,
    agent_pipeline_step,
    build_trade_prompt,
    load_template,
    parse_trade_decision,
    render_prompt,
    run_fact_agent,
    run_fact_reasoning_agent,
    run_reflection_agent,
    run_statistics_agent,
    run_subjectivity_agent,
    run_subjectivity_reasoning_agent,
    run_trade_agent,
    update_memory,
)
