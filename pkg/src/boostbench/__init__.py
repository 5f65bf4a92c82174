"""Generalised strategies and iterative error correction for LLM reasoning experiments."""

__version__ = "0.1.0"
