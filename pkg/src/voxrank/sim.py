"""Synthetic grocery world and a cascade click model for closed-loop runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import Catalog, Product, extract_product_attributes
from .feedback import EventType, FeedbackEvent
from .query import Lexicon, parse_query
from .text import tokenize

PRODUCT_TYPES = (
    "milk", "bread", "eggs", "cheese", "yogurt", "butter", "cereal", "coffee",
    "tea", "juice", "pasta", "rice", "chicken", "apples", "bananas", "chips",
    "cookies", "soup", "beans", "water", "salsa", "granola", "spinach", "tomatoes",
)
DESCRIPTORS = (
    "classic", "original", "premium", "honey", "vanilla", "sliced", "whole",
    "crunchy", "lite", "fresh", "select", "homestyle", "signature", "everyday",
)
BRANDS = (
    "great value", "marketside", "horizon", "kraft", "dannon", "tillamook",
    "simply", "kellogg", "folgers", "barilla", "tyson", "lays", "oreo",
    "campbell", "bush", "nature valley",
)
FACETS = (
    "organic", "gluten free", "low fat", "fat free", "whole grain", "sugar free",
    "vegan", "kosher", "non gmo", "grass fed", "free range", "low sodium",
)
SIZES = (
    (1, "gal"), (0.5, "gal"), (12, "oz"), (16, "oz"), (32, "oz"), (1, "lb"),
    (2, "lb"), (12, "ct"), (18, "ct"), (500, "ml"), (1, "l"), (2.5, "lb"),
)
# (template, slots); slots name the placeholders filled per request
QUERY_TEMPLATES = (
    ("{type}", ("type",)),
    ("{facet} {type}", ("facet", "type")),
    ("{brand} {type}", ("brand", "type")),
)
TEMPLATE_PROBS = (0.6, 0.25, 0.15)


@dataclass(frozen=True)
class SimUser:
    customer_id: str
    brand_pref: dict
    facet_pref: dict

    @property
    def facet_norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.facet_pref.values()))


@dataclass(frozen=True)
class SyntheticWorld:
    seed: int
    users: tuple
    catalog: Catalog
    lexicon: Lexicon
    query_templates: tuple = QUERY_TEMPLATES

    def user(self, customer_id: str) -> SimUser:
        for u in self.users:
            if u.customer_id == customer_id:
                return u
        raise KeyError(customer_id)


@dataclass(frozen=True)
class ClickModelParams:
    continue_prob: float = 0.85
    w_facet: float = 0.5
    w_brand: float = 0.3
    w_type: float = 0.2
    seed: int = 7

    def __post_init__(self):
        if not 0.0 < self.continue_prob < 1.0:
            raise ValueError("continue_prob must be in (0, 1)")
        if abs(self.w_facet + self.w_brand + self.w_type - 1.0) > 1e-9:
            raise ValueError("relevance weights must sum to 1")


def world_lexicon() -> Lexicon:
    return Lexicon.build(brands=BRANDS, facets=FACETS)


def _title_case(phrase: str) -> str:
    return " ".join(w.capitalize() for w in phrase.split())


def _fmt_magnitude(m) -> str:
    return str(int(m)) if float(m).is_integer() else str(m)


def generate_world(seed: int, n_users: int, n_products: int) -> SyntheticWorld:
    if n_users < 1 or n_products < 1:
        raise ValueError("n_users and n_products must be >= 1")
    rng = np.random.default_rng(seed)
    lexicon = world_lexicon()

    products = {}
    for i in range(n_products):
        ptype = PRODUCT_TYPES[int(rng.integers(len(PRODUCT_TYPES)))]
        brand = BRANDS[int(rng.integers(len(BRANDS)))]
        n_facets = int(rng.integers(1, 4))
        facets = [FACETS[j] for j in sorted(rng.choice(len(FACETS), size=n_facets, replace=False))]
        words = [_title_case(brand)] + [_title_case(f) for f in facets]
        if rng.random() < 0.6:
            words.append(DESCRIPTORS[int(rng.integers(len(DESCRIPTORS)))].capitalize())
        words.append(ptype.capitalize())
        mag, unit = SIZES[int(rng.integers(len(SIZES)))]
        words.append(f"{_fmt_magnitude(mag)} {unit}")
        title = " ".join(words)
        pid = f"p{i:05d}"
        price = round(float(rng.uniform(0.5, 15.0)), 2)
        popularity = int(rng.pareto(1.5) * 20)
        got_facets, size, got_brand = extract_product_attributes(title, brand, lexicon)
        products[pid] = Product(pid, title, got_brand, got_facets, size, price, popularity)

    users = []
    for i in range(n_users):
        nb, nf = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        bsel = sorted(rng.choice(len(BRANDS), size=nb, replace=False))
        fsel = sorted(rng.choice(len(FACETS), size=nf, replace=False))
        brand_pref = {BRANDS[j]: round(float(rng.uniform(0.5, 1.0)), 6) for j in bsel}
        facet_pref = {FACETS[j]: round(float(rng.uniform(0.5, 1.0)), 6) for j in fsel}
        users.append(SimUser(f"u{i:03d}", brand_pref, facet_pref))

    return SyntheticWorld(seed, tuple(users), Catalog(products), lexicon)


def sample_request(world: SyntheticWorld, rng: np.random.Generator, personal_slot_prob: float = 0.7):
    """Draw (user, query text) from the world's traffic model."""
    user = world.users[int(rng.integers(len(world.users)))]
    template, slots = world.query_templates[int(rng.choice(len(world.query_templates), p=TEMPLATE_PROBS))]
    fill = {"type": PRODUCT_TYPES[int(rng.integers(len(PRODUCT_TYPES)))]}
    if "facet" in slots:
        pool = sorted(user.facet_pref) if rng.random() < personal_slot_prob else FACETS
        fill["facet"] = pool[int(rng.integers(len(pool)))]
    if "brand" in slots:
        pool = sorted(user.brand_pref) if rng.random() < personal_slot_prob else BRANDS
        fill["brand"] = pool[int(rng.integers(len(pool)))]
    return user, template.format(**fill)


def relevance(user: SimUser, product: Product, head_terms: Sequence[str], params: ClickModelParams) -> float:
    """Click probability of an examined item, in [0, 1]."""
    facet_cos = 0.0
    norm = user.facet_norm
    if norm > 0 and product.facets:
        dot = sum(user.facet_pref.get(f, 0.0) for f in product.facets)
        facet_cos = dot / (norm * math.sqrt(len(product.facets)))
    brand = user.brand_pref.get(product.brand, 0.0) if product.brand else 0.0
    title_tokens = set(tokenize(product.title))
    type_match = 1.0 if set(head_terms) <= title_tokens else 0.0
    r = params.w_facet * facet_cos + params.w_brand * brand + params.w_type * type_match
    return min(1.0, max(0.0, r))


def cascade_clicks(rels: Sequence[float], params: ClickModelParams, rng: np.random.Generator):
    """Scan top-down; returns (clicked index or None, atc flag)."""
    for i, r in enumerate(rels):
        if rng.random() < r:
            return i, bool(rng.random() < r)
        if not rng.random() < params.continue_prob:
            break
    return None, False


def expected_click_position(rels: Sequence[float], continue_prob: float) -> float:
    """Mean 1-based click position given a click, in closed form."""
    reach, num, den = 1.0, 0.0, 0.0
    for k, r in enumerate(rels, start=1):
        p_click = reach * r
        num += k * p_click
        den += p_click
        reach *= (1.0 - r) * continue_prob
    return num / den if den > 0 else float("nan")


def simulate_session(
    world: SyntheticWorld,
    user: SimUser,
    query: str,
    results: Sequence[str],
    params: ClickModelParams,
    rng: np.random.Generator,
    session_id: str,
    start_ts: float,
) -> list:
    """Feedback events for one served result list under the cascade model."""
    if not results:
        raise ValueError("served results must be nonempty")
    head = parse_query(query, world.lexicon).head_terms
    products = [world.catalog[pid] for pid in results]
    rels = [relevance(user, p, head, params) for p in products]
    events = []

    def emit(pid, etype, pos, ts):
        events.append(FeedbackEvent(
            f"{session_id}-{len(events)}", session_id, user.customer_id, query, pid, etype, pos, ts,
        ))

    for pos, pid in enumerate(results, start=1):
        emit(pid, EventType.IMPRESSION, pos, start_ts)
    clicked, atc = cascade_clicks(rels, params, rng)
    if clicked is not None:
        emit(results[clicked], EventType.CLICK, clicked + 1, start_ts + 1.0)
        if atc:
            emit(results[clicked], EventType.ATC, clicked + 1, start_ts + 2.0)
    return events
