from __future__ import annotations

from functools import lru_cache

from hypothesis import given
from hypothesis import strategies as st

from carepipe.text import fnv1a_64, levenshtein, normalize, similarity, tokenize


def brute_levenshtein(a: str, b: str) -> int:
    """Plain recursive definition, memoised; the oracle for the DP version."""

    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


short = st.text(alphabet="abcde", max_size=7)


def test_normalize_and_tokenize():
    assert normalize("Margaret's Walker!") == "margaret walker"
    assert tokenize("Don't  forget, the 2 pm dose.") == ["dont", "forget", "the", "2", "pm", "dose"]
    assert tokenize("   ") == []


def test_fnv1a_reference_values():
    assert fnv1a_64("") == 0xCBF29CE484222325
    assert fnv1a_64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64("foobar") == 0x85944171F73967E8
    assert fnv1a_64("a") == fnv1a_64(b"a")


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein("margret", "margaret") == 1


def test_similarity_margret():
    assert similarity("margret", "margaret") == 7 / 8
    assert similarity("", "") == 1.0


@given(short, short)
def test_levenshtein_matches_recursive_oracle(a, b):
    assert levenshtein(a, b) == brute_levenshtein(a, b)


@given(short, short, st.integers(0, 8))
def test_bounded_levenshtein(a, b, limit):
    exact = brute_levenshtein(a, b)
    assert levenshtein(a, b, limit) == (exact if exact <= limit else limit + 1)


@given(short, short, st.floats(0, 1))
def test_similarity_floor_is_exact_above_floor(a, b, floor):
    exact = similarity(a, b)
    got = similarity(a, b, floor=floor)
    if exact >= floor:
        assert got == exact
    else:
        assert got == 0.0


@given(short, short, short)
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
