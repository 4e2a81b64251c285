"""Structured-dialogue training-data synthesis, export, and evaluation."""

__version__ = "0.1.0"
