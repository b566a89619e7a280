"""Liquidity-flaw audit pipeline: slicing, co-attention scoring, confidence
filtering and staged LLM review."""

__version__ = "0.1.0"
