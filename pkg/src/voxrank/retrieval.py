"""Inverted-index candidate retrieval with idf-weighted token overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .catalog import Catalog
from .query import ParsedQuery
from .text import tokenize

BRAND_BONUS = 2.0
DEFAULT_K = 100


@dataclass(frozen=True)
class Candidate:
    product_id: str
    lexical_score: float


@dataclass(frozen=True)
class InvertedIndex:
    postings: dict  # token -> tuple of product_ids, ascending
    doc_count: int
    doc_freq: dict  # token -> int
    brand_products: dict  # lowercase brand -> tuple of product_ids, ascending

    def idf(self, token: str) -> float:
        df = self.doc_freq.get(token, 0)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))


def build_index(catalog: Catalog) -> InvertedIndex:
    postings: dict = {}
    brands: dict = {}
    # catalog iterates product_id-ascending, so appends keep lists sorted
    for product in catalog:
        for token in dict.fromkeys(tokenize(product.title)):
            postings.setdefault(token, []).append(product.product_id)
        if product.brand:
            brands.setdefault(product.brand.lower(), []).append(product.product_id)
    postings = {t: tuple(ids) for t, ids in sorted(postings.items())}
    return InvertedIndex(
        postings=postings,
        doc_count=len(catalog),
        doc_freq={t: len(ids) for t, ids in postings.items()},
        brand_products={b: tuple(ids) for b, ids in sorted(brands.items())},
    )


def match_tokens(pq: ParsedQuery) -> list[str]:
    """Distinct query tokens eligible for lexical matching, sorted.

    The sorted order fixes the floating-point summation order of scores.
    """
    tokens = set(pq.head_terms)
    for facet in pq.facets:
        tokens.update(facet.split(" "))
    return sorted(tokens)


def lexical_scores(pq: ParsedQuery, index: InvertedIndex) -> dict:
    """Nonzero lexical score for every matching product."""
    scores: dict = {}
    for token in match_tokens(pq):
        ids = index.postings.get(token)
        if not ids:
            continue
        weight = index.idf(token)
        for pid in ids:
            scores[pid] = scores.get(pid, 0.0) + weight
    if pq.brand:
        for pid in index.brand_products.get(pq.brand.lower(), ()):
            scores[pid] = scores.get(pid, 0.0) + BRAND_BONUS
    return scores


def top_candidates(scores: dict, k: Optional[int]) -> list[Candidate]:
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    if k is not None:
        ranked = ranked[:k]
    return [Candidate(pid, s) for pid, s in ranked if s > 0]


def retrieve(pq: ParsedQuery, index: InvertedIndex, catalog: Catalog, k: Optional[int] = DEFAULT_K) -> list[Candidate]:
    """Top-``k`` candidates by lexical score, ties to the lower product_id.

    ``k=None`` returns every matching product.
    """
    if k is not None and k < 1:
        raise ValueError("k must be a positive integer")
    return top_candidates(lexical_scores(pq, index), k)
