"""Claim verification over LLM-extracted relation graphs."""

__version__ = "0.1.0"
