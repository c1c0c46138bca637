"""Personalized conversational-search ranking: parse, retrieve, re-rank, learn from feedback."""

__version__ = "0.1.0"
