"""Product catalog loading and attribute/facet extraction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional

from .errors import DuplicateProductId, FileUnreadable, MalformedRecord
from .query import Lexicon, Size, analyze_tokens
from .text import normalize_phrase, tokenize


@dataclass(frozen=True)
class Product:
    product_id: str
    title: str
    brand: Optional[str] = None
    facets: frozenset = frozenset()
    size: Optional[Size] = None
    price: float = 0.0
    purchase_count: int = 0

    def to_record(self) -> dict:
        rec = {"product_id": self.product_id, "title": self.title}
        if self.brand is not None:
            rec["brand"] = self.brand
        rec["price"] = self.price
        rec["purchase_count"] = self.purchase_count
        return rec


def extract_product_attributes(title: str, brand_hint: Optional[str], lexicon: Lexicon):
    """Pull facets, size and brand out of a product title.

    Uses the same passes as the query parser, so a title and a query that
    share a phrase agree on what it means. ``brand_hint`` (normalized) wins
    over any brand found in the title.
    """
    _, size, facets, found_brand = analyze_tokens(tokenize(title), lexicon)
    brand = None
    if brand_hint is not None:
        brand = normalize_phrase(brand_hint) or None
    if brand is None:
        brand = found_brand
    return facets, size, brand


class Catalog:
    """Immutable product collection, iterated in product_id order."""

    def __init__(self, products: Mapping[str, Product] = ()):
        items = dict(products)
        self.products = {pid: items[pid] for pid in sorted(items)}
        self.facet_vocabulary = frozenset(f for p in self.products.values() for f in p.facets)
        self.brand_vocabulary = frozenset(p.brand for p in self.products.values() if p.brand)
        self.max_popularity = max((p.purchase_count for p in self.products.values()), default=0)

    @classmethod
    def from_products(cls, products) -> "Catalog":
        seen = {}
        for p in products:
            if p.product_id in seen:
                raise DuplicateProductId(p.product_id)
            seen[p.product_id] = p
        return cls(seen)

    def __len__(self) -> int:
        return len(self.products)

    def __iter__(self) -> Iterator[Product]:
        return iter(self.products.values())

    def __getitem__(self, product_id: str) -> Product:
        return self.products[product_id]

    def __contains__(self, product_id) -> bool:
        return product_id in self.products

    def get(self, product_id: str) -> Optional[Product]:
        return self.products.get(product_id)

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self.products == other.products

    def __repr__(self) -> str:
        return f"Catalog({len(self)} products)"


def product_from_record(rec, lexicon: Lexicon, line_no: int = 0) -> Product:
    if not isinstance(rec, dict):
        raise MalformedRecord(line_no, "record is not an object")
    pid, title = rec.get("product_id"), rec.get("title")
    if not isinstance(pid, str) or not pid:
        raise MalformedRecord(line_no, "product_id must be a nonempty string")
    if not isinstance(title, str) or not title.strip():
        raise MalformedRecord(line_no, "title must be a nonempty string")
    brand = rec.get("brand")
    if brand is not None and not isinstance(brand, str):
        raise MalformedRecord(line_no, "brand must be a string")
    price = rec.get("price")
    if isinstance(price, bool) or not isinstance(price, (int, float)) or not math.isfinite(price) or price < 0:
        raise MalformedRecord(line_no, "price must be a number >= 0")
    count = rec.get("purchase_count", 0)
    if isinstance(count, bool) or not isinstance(count, int) or count < 0:
        raise MalformedRecord(line_no, "purchase_count must be an integer >= 0")
    facets, size, brand = extract_product_attributes(title, brand, lexicon)
    return Product(pid, title, brand, facets, size, float(price), count)


def load_catalog(path, lexicon: Optional[Lexicon] = None) -> Catalog:
    """Load a JSON Lines catalog. Any bad line aborts the whole load."""
    lexicon = lexicon or Lexicon()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(path, str(exc)) from exc
    products = {}
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
            product = product_from_record(rec, lexicon, line_no)
            if product.product_id in products:
                raise DuplicateProductId(product.product_id)
            products[product.product_id] = product
    return Catalog(products)


def save_catalog(catalog: Catalog, path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for product in catalog:
            fh.write(json.dumps(product.to_record(), sort_keys=True) + "\n")
    return len(catalog)
