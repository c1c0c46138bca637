"""Text normalization shared by the query parser, attribute extractor and index."""

from __future__ import annotations

import re

# A token is a run of letters or a number (integer or decimal). Everything
# else, punctuation included, acts as whitespace. Digit/letter boundaries
# split, so "12oz" yields ("12", "oz").
_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?|[^\W\d_]+")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def normalize_phrase(text: str) -> str:
    return " ".join(tokenize(text))


def is_number(token: str) -> bool:
    return _NUMBER_RE.fullmatch(token) is not None
