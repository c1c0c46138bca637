"""The parse -> retrieve -> feature fetch -> rank path, shared by serving,
offline evaluation and training-pair construction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional

from .catalog import Catalog
from .errors import EmptyQuery
from .feedback import Session, UserProfile
from .query import Lexicon, ParsedQuery, parse_query
from .ranker import RankingModel, extract_features, rank
from .retrieval import DEFAULT_K, Candidate, InvertedIndex, build_index, lexical_scores, top_candidates
from .store import QUERY_TTL_S, FeatureKey, FeatureStore


@dataclass(frozen=True)
class QueryAnalysis:
    pq: ParsedQuery
    scores: dict  # product_id -> lexical score, every matching product
    candidates: tuple  # top-K Candidates
    max_lexical: float


class SearchPipeline:
    def __init__(
        self,
        catalog: Catalog,
        lexicon: Lexicon,
        store: FeatureStore,
        retrieve_k: int = DEFAULT_K,
        index: Optional[InvertedIndex] = None,
        cache_size: int = 4096,
    ):
        self.catalog = catalog
        self.lexicon = lexicon
        self.store = store
        self.retrieve_k = retrieve_k
        self.index = index if index is not None else build_index(catalog)
        self.analyze = lru_cache(maxsize=cache_size)(self._analyze)

    def _analyze(self, text: str) -> QueryAnalysis:
        pq = parse_query(text, self.lexicon)
        scores = lexical_scores(pq, self.index)
        candidates = tuple(top_candidates(scores, self.retrieve_k))
        max_lex = candidates[0].lexical_score if candidates else 0.0
        return QueryAnalysis(pq, scores, candidates, max_lex)

    def profile(self, customer_id: Optional[str], now: Optional[float] = None) -> Optional[UserProfile]:
        if not customer_id:
            return None
        rec = self.store.get_batch([FeatureKey.user(customer_id)], now=now)[FeatureKey.user(customer_id)]
        return None if rec is None else UserProfile.from_payload(rec.payload)

    def featurize(self, analysis: QueryAnalysis, candidates: Iterable[Candidate], profile: Optional[UserProfile]):
        max_pop = self.catalog.max_popularity
        out = []
        for cand in candidates:
            product = self.catalog.get(cand.product_id)
            if product is None:
                continue
            x = extract_features(analysis.pq, cand, product, profile, analysis.max_lexical, max_pop)
            out.append((cand, x))
        return out

    def search(
        self,
        query: str,
        model: RankingModel,
        customer_id: Optional[str] = None,
        k: int = 10,
        now: Optional[float] = None,
    ) -> list:
        """Ranked items for one request; raises EmptyQuery."""
        analysis = self.analyze(query)
        if not analysis.candidates:
            return []
        profile = self.profile(customer_id, now)
        items = self.featurize(analysis, analysis.candidates, profile)
        return rank(model, items)[:k]

    def session_items(self, session: Session, now: Optional[float] = None):
        """(Candidate, FeatureVector) for each impressed product, current features."""
        try:
            analysis = self.analyze(session.query_text)
        except EmptyQuery:
            return None
        cands = [Candidate(pid, analysis.scores.get(pid, 0.0)) for pid in session.impressions]
        return self.featurize(analysis, cands, self.profile(session.customer_id, now))

    def session_features(self, session: Session, now: Optional[float] = None):
        """product_id -> FeatureVector for every product the session touched."""
        try:
            analysis = self.analyze(session.query_text)
        except EmptyQuery:
            return None
        pids = dict.fromkeys(session.impressions)
        pids.update(dict.fromkeys(ev.product_id for ev in session.events))
        cands = [Candidate(pid, analysis.scores.get(pid, 0.0)) for pid in pids]
        items = self.featurize(analysis, cands, self.profile(session.customer_id, now))
        return {c.product_id: x for c, x in items}


def publish_catalog(store: FeatureStore, catalog: Catalog, now: Optional[float] = None) -> int:
    """Mirror product attribute records into the store's product namespace."""
    for product in catalog:
        payload = {"title": product.title, "price": product.price, "purchase_count": product.purchase_count,
                   "facets": product.facets}
        if product.brand:
            payload["brand"] = product.brand
        if product.size is not None:
            payload["size_magnitude"] = product.size.magnitude
            payload["size_unit"] = product.size.unit
        store.put(FeatureKey.product(product.product_id), payload, now=now)
    return len(catalog)


def publish_queries(store: FeatureStore, lexicon: Lexicon, queries: Iterable[str], now: Optional[float] = None) -> int:
    """Cache parsed attributes for top queries (24h TTL)."""
    n = 0
    for text in queries:
        pq = parse_query(text, lexicon)
        payload = {"head_terms": " ".join(pq.head_terms), "facets": pq.facets}
        if pq.brand:
            payload["brand"] = pq.brand
        if pq.size is not None:
            payload["size_magnitude"] = pq.size.magnitude
            payload["size_unit"] = pq.size.unit
        store.put(FeatureKey.query(" ".join(pq.tokens)), payload, ttl=QUERY_TTL_S, now=now)
        n += 1
    return n
