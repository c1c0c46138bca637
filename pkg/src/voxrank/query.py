"""Lexicon-driven real-time query parser.

A query is normalized to tokens and then peeled in a fixed order: the first
``number unit`` pair becomes the size constraint, facet phrases are consumed
longest-first, at most one brand phrase is consumed, stopwords are dropped,
and whatever is left (in original order) is the head-term remainder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import EmptyQuery, FileUnreadable, MalformedLexicon
from .text import is_number, normalize_phrase, tokenize

CANONICAL_UNITS = frozenset(
    {"ounce", "pound", "gram", "kilogram", "milliliter", "liter", "gallon", "count"}
)
DEFAULT_UNIT_ALIASES = {
    "oz": "ounce",
    "lb": "pound",
    "g": "gram",
    "kg": "kilogram",
    "ml": "milliliter",
    "l": "liter",
    "gal": "gallon",
    "ct": "count",
    **{u: u for u in CANONICAL_UNITS},
}
DEFAULT_STOPWORDS = frozenset({"a", "the", "of", "for", "and"})

# token roles recorded on ParsedQuery.token_roles
HEAD, SIZE, FACET, BRAND, STOP = "head", "size", "facet", "brand", "stop"


@dataclass(frozen=True)
class Size:
    magnitude: float
    unit: str

    def __post_init__(self):
        if not self.magnitude > 0:
            raise ValueError(f"size magnitude must be positive, got {self.magnitude}")


@dataclass(frozen=True)
class Lexicon:
    brand_phrases: frozenset = frozenset()
    facet_phrases: frozenset = frozenset()
    unit_aliases: Mapping[str, str] = field(default_factory=dict)
    stopwords: frozenset = frozenset()
    _brand_tuples: frozenset = field(init=False, repr=False, compare=False)
    _facet_tuples: frozenset = field(init=False, repr=False, compare=False)
    _max_brand_len: int = field(init=False, repr=False, compare=False)
    _max_facet_len: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for unit in self.unit_aliases.values():
            if unit not in CANONICAL_UNITS:
                raise MalformedLexicon(f"unknown canonical unit {unit!r}")
        brands = frozenset(tuple(p.split(" ")) for p in self.brand_phrases)
        facets = frozenset(tuple(p.split(" ")) for p in self.facet_phrases)
        object.__setattr__(self, "_brand_tuples", brands)
        object.__setattr__(self, "_facet_tuples", facets)
        object.__setattr__(self, "_max_brand_len", max(map(len, brands), default=0))
        object.__setattr__(self, "_max_facet_len", max(map(len, facets), default=0))

    @classmethod
    def build(
        cls,
        brands: Iterable[str] = (),
        facets: Iterable[str] = (),
        units: Optional[Mapping[str, str]] = None,
        stopwords: Optional[Iterable[str]] = None,
    ) -> "Lexicon":
        """Normalize raw phrases into a Lexicon.

        ``units`` and ``stopwords`` fall back to the default unit table and
        stopword list when omitted (pass empty containers for none).
        """
        units = DEFAULT_UNIT_ALIASES if units is None else units
        stopwords = DEFAULT_STOPWORDS if stopwords is None else stopwords

        aliases = {}
        for alias, canonical in units.items():
            a, c = _single_token(alias, "unit alias"), _single_token(canonical, "unit")
            aliases[a] = c
        return cls(
            brand_phrases=frozenset(_phrase(b, "brand") for b in brands),
            facet_phrases=frozenset(_phrase(f, "facet") for f in facets),
            unit_aliases=aliases,
            stopwords=frozenset(_single_token(s, "stopword") for s in stopwords),
        )

    def to_json(self) -> dict:
        return {
            "brands": sorted(self.brand_phrases),
            "facets": sorted(self.facet_phrases),
            "units": dict(sorted(self.unit_aliases.items())),
            "stopwords": sorted(self.stopwords),
        }


def _phrase(raw, what: str) -> str:
    if not isinstance(raw, str):
        raise MalformedLexicon(f"{what} entries must be strings, got {raw!r}")
    phrase = normalize_phrase(raw)
    if not phrase:
        raise MalformedLexicon(f"{what} {raw!r} is empty after normalization")
    return phrase


def _single_token(raw, what: str) -> str:
    phrase = _phrase(raw, what)
    if " " in phrase:
        raise MalformedLexicon(f"{what} {raw!r} must be a single token")
    return phrase


def load_lexicon(path) -> Lexicon:
    """Read a lexicon JSON file. Missing keys mean empty, not default."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FileUnreadable(path, str(exc)) from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedLexicon(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedLexicon("lexicon must be a JSON object")

    def _list(key):
        value = obj.get(key, [])
        if not isinstance(value, list):
            raise MalformedLexicon(f"{key!r} must be an array")
        return value

    units = obj.get("units", {})
    if not isinstance(units, dict):
        raise MalformedLexicon("'units' must be an object")
    return Lexicon.build(_list("brands"), _list("facets"), units, _list("stopwords"))


def save_lexicon(lexicon: Lexicon, path) -> None:
    Path(path).write_text(json.dumps(lexicon.to_json(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ParsedQuery:
    raw: str
    tokens: tuple
    head_terms: tuple
    brand: Optional[str]
    facets: frozenset
    size: Optional[Size]
    token_roles: tuple = field(default=(), compare=False, repr=False)

    def to_json(self) -> dict:
        return {
            "raw": self.raw,
            "tokens": list(self.tokens),
            "head_terms": list(self.head_terms),
            "brand": self.brand,
            "facets": sorted(self.facets),
            "size": None if self.size is None else {"magnitude": self.size.magnitude, "unit": self.size.unit},
        }


def _match_spans(tokens, free, phrases, max_len):
    """All (start, length) phrase matches over unconsumed tokens, longest first.

    Ties between equal lengths go to the leftmost start.
    """
    spans = []
    n = len(tokens)
    for start in range(n):
        for length in range(1, min(max_len, n - start) + 1):
            if not free[start + length - 1]:
                break
            if tuple(tokens[start : start + length]) in phrases:
                spans.append((start, length))
    spans.sort(key=lambda s: (-s[1], s[0]))
    return spans


def analyze_tokens(tokens: list, lexicon: Lexicon):
    """Run the size/facet/brand/stopword passes over normalized tokens.

    Returns ``(roles, size, facets, brand)`` where ``roles[i]`` names the pass
    that consumed token ``i``.
    """
    n = len(tokens)
    roles = [HEAD] * n
    free = [True] * n
    size = None

    for i in range(n - 1):
        if is_number(tokens[i]) and tokens[i + 1] in lexicon.unit_aliases:
            magnitude = float(tokens[i])
            if magnitude > 0:
                size = Size(magnitude, lexicon.unit_aliases[tokens[i + 1]])
                roles[i] = roles[i + 1] = SIZE
                free[i] = free[i + 1] = False
                break

    facets = set()
    for start, length in _match_spans(tokens, free, lexicon._facet_tuples, lexicon._max_facet_len):
        span = range(start, start + length)
        if all(free[j] for j in span):
            for j in span:
                free[j] = False
                roles[j] = FACET
            facets.add(" ".join(tokens[start : start + length]))

    brand = None
    spans = _match_spans(tokens, free, lexicon._brand_tuples, lexicon._max_brand_len)
    if spans:
        start, length = spans[0]
        for j in range(start, start + length):
            free[j] = False
            roles[j] = BRAND
        brand = " ".join(tokens[start : start + length])

    for j in range(n):
        if free[j] and tokens[j] in lexicon.stopwords:
            free[j] = False
            roles[j] = STOP

    return roles, size, frozenset(facets), brand


def parse_query(text: str, lexicon: Lexicon) -> ParsedQuery:
    tokens = tokenize(text)
    if not tokens:
        raise EmptyQuery(text)
    roles, size, facets, brand = analyze_tokens(tokens, lexicon)
    head = tuple(t for t, r in zip(tokens, roles) if r == HEAD)
    return ParsedQuery(
        raw=text,
        tokens=tuple(tokens),
        head_terms=head,
        brand=brand,
        facets=facets,
        size=size,
        token_roles=tuple(roles),
    )
