import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from voxrank.errors import EmptyQuery, FileUnreadable, MalformedLexicon
from voxrank.query import DEFAULT_STOPWORDS, Lexicon, Size, load_lexicon, parse_query, save_lexicon
from voxrank.text import is_number, tokenize


def naive_parse(tokens, lex):
    """Reference parser: one pass per stage, re-scanning from scratch each time."""
    tokens = list(tokens)
    used = [False] * len(tokens)
    size = None
    for i in range(len(tokens) - 1):
        if is_number(tokens[i]) and float(tokens[i]) > 0 and tokens[i + 1] in lex.unit_aliases:
            size = Size(float(tokens[i]), lex.unit_aliases[tokens[i + 1]])
            used[i] = used[i + 1] = True
            break

    def best(phrases):
        found = None
        for phrase in phrases:
            words = phrase.split(" ")
            for s in range(len(tokens) - len(words) + 1):
                if tokens[s : s + len(words)] == words and not any(used[s : s + len(words)]):
                    key = (-len(words), s)
                    if found is None or key < found[0]:
                        found = (key, phrase, s, len(words))
        return found

    facets = set()
    while (hit := best(lex.facet_phrases)) is not None:
        _, phrase, s, n = hit
        used[s : s + n] = [True] * n
        facets.add(phrase)
    brand = None
    if (hit := best(lex.brand_phrases)) is not None:
        _, brand, s, n = hit
        used[s : s + n] = [True] * n
    head = []
    for t, u in zip(tokens, used):
        if not u and t not in lex.stopwords:
            head.append(t)
    return tuple(head), frozenset(facets), brand, size


WORDS = ["milk", "bread", "whole", "grain", "gluten", "free", "organic", "low", "fat", "great", "value",
         "horizon", "the", "of", "a", "1", "2.5", "0", "gal", "oz", "lb", "ct", "12", "eggs"]
query_text = st.lists(
    st.tuples(st.sampled_from(WORDS), st.sampled_from([" ", "  ", ", ", "-", "!", " . "])), min_size=1, max_size=12
).map(lambda parts: "".join(w + sep for w, sep in parts))


def test_sample_query(lexicon):
    pq = parse_query("organic whole milk 1 gal", lexicon)
    assert pq.head_terms == ("whole", "milk")
    assert pq.facets == {"organic"}
    assert pq.size == Size(1.0, "gallon")
    assert pq.brand is None


def test_plain_query(lexicon):
    pq = parse_query("milk", lexicon)
    assert pq.head_terms == ("milk",) and pq.facets == frozenset()
    assert pq.size is None and pq.brand is None


@pytest.mark.parametrize("text", ["   ,,  ", "", "!!!", "\t\n"])
def test_empty_query(lexicon, text):
    with pytest.raises(EmptyQuery):
        parse_query(text, lexicon)


def test_size_before_phrases():
    lex = Lexicon.build(facets=["1 gal jug"], brands=["gal"])
    pq = parse_query("milk 1 gal jug", lex)
    assert pq.size == Size(1.0, "gallon")
    assert pq.facets == frozenset() and pq.brand is None
    assert pq.head_terms == ("milk", "jug")


def test_only_first_size_taken(lexicon):
    pq = parse_query("2 lb 3 oz", lexicon)
    assert pq.size == Size(2.0, "pound")
    assert pq.head_terms == ("3", "oz")


def test_decimal_and_glued_sizes(lexicon):
    assert parse_query("juice 1.5 l", lexicon).size == Size(1.5, "liter")
    assert parse_query("chips 12oz", lexicon).size == Size(12.0, "ounce")


def test_single_brand_longest(lexicon):
    pq = parse_query("horizon great value milk", lexicon)
    assert pq.brand == "great value"
    assert pq.head_terms == ("horizon", "milk")


def test_facets_beat_brand_for_shared_tokens(lexicon):
    # facets run first, so "organic" is gone before the longer brand can match
    pq = parse_query("great value organic milk", lexicon)
    assert pq.facets == {"organic"}
    assert pq.brand == "great value"


def test_equal_length_tie_goes_leftmost():
    lex = Lexicon.build(facets=["a b", "b c"], stopwords=[])
    pq = parse_query("a b c", lex)
    assert pq.facets == {"a b"}
    assert pq.head_terms == ("c",)


def test_stopwords_removed(lexicon):
    pq = parse_query("The milk of the farm", lexicon)
    assert pq.head_terms == ("milk", "farm")
    assert DEFAULT_STOPWORDS == {"a", "the", "of", "for", "and"}


def test_head_terms_keep_order(lexicon):
    assert parse_query("eggs organic bread milk", lexicon).head_terms == ("eggs", "bread", "milk")


@given(query_text)
def test_matches_reference_parser(text):
    lex = Lexicon.build(
        brands=["great value", "horizon", "great value organic"],
        facets=["organic", "gluten free", "free", "low fat", "whole grain"],
    )
    tokens = tokenize(text)
    if not tokens:
        return
    pq = parse_query(text, lex)
    assert (pq.head_terms, pq.facets, pq.brand, pq.size) == naive_parse(tokens, lex)


@given(query_text)
def test_token_conservation(text):
    lex = Lexicon.build(brands=["great value", "horizon"], facets=["organic", "gluten free", "free", "low fat"])
    if not tokenize(text):
        return
    pq = parse_query(text, lex)
    assert len(pq.token_roles) == len(pq.tokens)
    by_role = {}
    for t, r in zip(pq.tokens, pq.token_roles):
        by_role.setdefault(r, []).append(t)
    assert tuple(by_role.pop("head", [])) == pq.head_terms
    assert " ".join(by_role.pop("brand", [])) == (pq.brand or "")
    size = by_role.pop("size", [])
    if pq.size is None:
        assert size == []
    else:
        number, unit = size
        assert float(number) == pq.size.magnitude and lex.unit_aliases[unit] == pq.size.unit
    assert all(t in lex.stopwords for t in by_role.pop("stop", []))
    facet_words = Counter(by_role.pop("facet", []))
    assert set(facet_words) == {w for f in pq.facets for w in f.split(" ")}
    assert not by_role
    # every token lands in exactly one bucket
    assert sum(map(len, [pq.head_terms, size])) + sum(facet_words.values()) + len((pq.brand or "").split()) + \
        sum(1 for r in pq.token_roles if r == "stop") == len(pq.tokens)
    assert not set(pq.head_terms) & lex.stopwords


@given(query_text)
def test_longest_match_dominance(text):
    lex = Lexicon.build(facets=["gluten free", "free"])
    tokens = tokenize(text)
    if not tokens:
        return
    pq = parse_query(text, lex)
    pairs = sum(1 for a, b in zip(tokens, tokens[1:]) if (a, b) == ("gluten", "free"))
    if pairs:
        assert "gluten free" in pq.facets
    lone_free = tokens.count("free") - pairs
    assert ("free" in pq.facets) == (lone_free > 0)


@given(query_text)
def test_deterministic(text):
    lex = Lexicon.build(brands=["horizon"], facets=["organic"])
    if tokenize(text):
        assert parse_query(text, lex) == parse_query(text, lex)


def test_load_lexicon_normalizes(tmp_path):
    p = tmp_path / "lex.json"
    p.write_text(json.dumps({"brands": ["Great  Value"], "units": {"gal": "gallon"}}))
    lex = load_lexicon(p)
    assert lex.brand_phrases == {"great value"}
    assert lex.unit_aliases == {"gal": "gallon"}


def test_load_empty_lexicon(tmp_path):
    p = tmp_path / "lex.json"
    p.write_text("{}")
    lex = load_lexicon(p)
    assert lex == Lexicon()
    assert not lex.brand_phrases and not lex.facet_phrases and not lex.unit_aliases


@pytest.mark.parametrize("body", ["[1, 2]", "{\"brands\": \"x\"}", "{\"units\": {\"gal\": \"barrel\"}}", "not json",
                                  "{\"brands\": [\"  \"]}", "{\"stopwords\": [\"two words\"]}"])
def test_malformed_lexicon(tmp_path, body):
    p = tmp_path / "lex.json"
    p.write_text(body)
    with pytest.raises(MalformedLexicon):
        load_lexicon(p)


def test_missing_lexicon(tmp_path):
    with pytest.raises(FileUnreadable):
        load_lexicon(tmp_path / "nope.json")


def test_lexicon_round_trip(tmp_path, lexicon):
    save_lexicon(lexicon, tmp_path / "lex.json")
    assert load_lexicon(tmp_path / "lex.json") == lexicon
