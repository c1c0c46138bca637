import json

import pytest
from hypothesis import given, strategies as st

from voxrank.catalog import Catalog, Product, extract_product_attributes, load_catalog, save_catalog
from voxrank.errors import DuplicateProductId, FileUnreadable, MalformedRecord
from voxrank.query import CANONICAL_UNITS, Lexicon, Size
from voxrank.sim import generate_world


def write_lines(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


def test_empty_file(tmp_path):
    cat = load_catalog(write_lines(tmp_path / "c.jsonl", []))
    assert len(cat) == 0
    assert cat.facet_vocabulary == frozenset() and cat.brand_vocabulary == frozenset()


def test_iteration_order(tmp_path):
    recs = [{"product_id": "p2", "title": "bread", "price": 2}, {"product_id": "p1", "title": "milk", "price": 1}]
    cat = load_catalog(write_lines(tmp_path / "c.jsonl", recs))
    assert len(cat) == 2
    assert [p.product_id for p in cat] == ["p1", "p2"]


def test_duplicate_id(tmp_path):
    recs = [{"product_id": "p1", "title": "a", "price": 1}, {"product_id": "p2", "title": "b", "price": 1},
            {"product_id": "p1", "title": "c", "price": 1}]
    with pytest.raises(DuplicateProductId) as err:
        load_catalog(write_lines(tmp_path / "c.jsonl", recs))
    assert err.value.product_id == "p1"


@pytest.mark.parametrize("bad", ["{nope", json.dumps({"title": "x", "price": 1}),
                                 json.dumps({"product_id": "p9", "title": "", "price": 1}),
                                 json.dumps({"product_id": "p9", "title": "x", "price": -1}),
                                 json.dumps({"product_id": "p9", "title": "x", "price": 1, "purchase_count": 1.5}),
                                 json.dumps([1, 2])])
def test_malformed_line_aborts(tmp_path, bad):
    recs = [{"product_id": "p1", "title": "milk", "price": 1}, bad]
    with pytest.raises(MalformedRecord) as err:
        load_catalog(write_lines(tmp_path / "c.jsonl", recs))
    assert err.value.line_no == 2


def test_unreadable(tmp_path):
    with pytest.raises(FileUnreadable):
        load_catalog(tmp_path / "missing.jsonl")


def test_extract_example():
    lex = Lexicon.build(brands=["great value"], facets=["organic"], units={"gal": "gallon"})
    facets, size, brand = extract_product_attributes("Great Value Organic Whole Milk 1 gal", None, lex)
    assert facets == {"organic"} and size == Size(1.0, "gallon") and brand == "great value"


def test_extract_nothing():
    assert extract_product_attributes("banana", None, Lexicon()) == (frozenset(), None, None)


def test_extract_longest_first():
    lex = Lexicon.build(facets=["gluten free", "organic", "free"])
    facets, _, _ = extract_product_attributes("gluten free organic bread", None, lex)
    assert facets == {"gluten free", "organic"}


def test_brand_hint_wins(lexicon):
    _, _, brand = extract_product_attributes("Horizon milk", " Great  VALUE ", lexicon)
    assert brand == "great value"


def test_vocabularies_are_unions(tmp_path, lexicon):
    recs = [{"product_id": "a", "title": "organic low fat milk", "brand": "Horizon", "price": 3},
            {"product_id": "b", "title": "gluten free bread 16 oz", "price": 4, "purchase_count": 7}]
    cat = load_catalog(write_lines(tmp_path / "c.jsonl", recs), lexicon)
    assert cat.facet_vocabulary == {"organic", "low fat", "gluten free"}
    assert cat.brand_vocabulary == {"horizon"}
    assert cat["b"].size == Size(16.0, "ounce")
    assert cat.max_popularity == 7


facet_lists = st.lists(st.sampled_from(["organic", "gluten free", "free", "low fat", "whole grain"]), max_size=4)


@given(facet_lists, st.sampled_from(["milk", "bread", "eggs"]))
def test_extraction_idempotent(facets, noun):
    lex = Lexicon.build(facets=["organic", "gluten free", "free", "low fat", "whole grain"])
    first, _, _ = extract_product_attributes(" ".join(facets + [noun]), None, lex)
    rebuilt = " ".join(sorted(first) + [noun])
    again, _, _ = extract_product_attributes(rebuilt, None, lex)
    assert again == first
    assert first <= lex.facet_phrases


def test_generated_catalog_round_trip(tmp_path):
    world = generate_world(5, 3, 300)
    path = tmp_path / "c.jsonl"
    save_catalog(world.catalog, path)
    again = load_catalog(path, world.lexicon)
    assert again == world.catalog
    save_catalog(again, tmp_path / "c2.jsonl")
    assert (tmp_path / "c2.jsonl").read_bytes() == path.read_bytes()
    for p in again:
        assert p.facets <= world.lexicon.facet_phrases
        assert p.size is None or p.size.unit in CANONICAL_UNITS


def test_from_products_rejects_duplicates():
    with pytest.raises(DuplicateProductId):
        Catalog.from_products([Product("x", "a"), Product("x", "b")])
