"""Desk-scale crypto trading lab: data, indicators, baselines, backtests and an LLM agent trader."""

__version__ = "0.1.0"
