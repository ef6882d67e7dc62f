"""Evaluation and reward toolkit for structured embodied task plans."""

__version__ = "0.1.0"
