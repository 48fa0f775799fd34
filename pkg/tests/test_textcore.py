import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxspell.textcore import (
    GAP,
    alignment_cost,
    char_edit_distance,
    detokenize,
    normalize,
    tokenize,
    word_align,
)

from oracles import brute_alignment_cost, levenshtein_full_table, levenshtein_recursive

words = st.text(alphabet="abcde.", min_size=1, max_size=7)
texts = st.lists(words, max_size=6).map(" ".join)


class TestTokenize:
    def test_call_john(self):
        tt = tokenize("Call John")
        assert tt.tokens == ("cal", "l", "joh", "n")
        assert tt.word_of_token == (0, 0, 1, 1)
        assert tt.token_span_of_word == ((0, 2), (2, 4))

    def test_single_letter(self):
        assert tokenize("a").tokens == ("a",)

    def test_punctuation_stays_inside_words(self):
        # "ten" -> ten ; "a.m." -> "a.m" + "."
        assert tokenize("ten a.m.").tokens == ("ten", "a.m", ".")

    def test_empty(self):
        tt = tokenize("   ")
        assert tt.tokens == () and tt.words == ()

    def test_chunk_knob(self):
        assert tokenize("john", chunk=2).tokens == ("jo", "hn")
        with pytest.raises(ValueError):
            tokenize("x", chunk=0)

    @given(texts)
    def test_roundtrip_and_idempotence(self, s):
        tt = tokenize(s)
        assert detokenize(tt) == normalize(s)
        assert tokenize(detokenize(tt)) == tt

    @given(texts)
    def test_word_ranges_partition_tokens(self, s):
        tt = tokenize(s)
        pos = 0
        for w, (a, b) in enumerate(tt.token_span_of_word):
            assert a == pos and b > a
            assert all(tt.word_of_token[t] == w for t in range(a, b))
            pos = b
        assert pos == len(tt.tokens)


class TestCharEditDistance:
    @pytest.mark.parametrize(
        "a,b,d",
        [("john", "john", 0), ("", "abc", 3), ("abc", "", 3)],
    )
    def test_trivial(self, a, b, d):
        assert char_edit_distance(a, b) == d

    def test_kitten_sitting(self):
        assert levenshtein_recursive("kitten", "sitting") == 3
        assert char_edit_distance("kitten", "sitting") == 3

    @given(st.text("abc", max_size=8), st.text("abc", max_size=8))
    def test_matches_full_table(self, a, b):
        assert char_edit_distance(a, b) == levenshtein_full_table(a, b)

    @given(st.text("abcd", max_size=6), st.text("abcd", max_size=6), st.text("abcd", max_size=6))
    def test_metric_axioms(self, a, b, c):
        assert char_edit_distance(a, b) == char_edit_distance(b, a)
        assert (char_edit_distance(a, b) == 0) == (a == b)
        assert char_edit_distance(a, c) <= char_edit_distance(a, b) + char_edit_distance(b, c)

    def test_symbol_sequences(self):
        assert char_edit_distance((1, 2, 3), (1, 3)) == 1


class TestWordAlign:
    def test_identity(self):
        al = word_align(["call", "john"], ["call", "john"])
        assert al.pairs == ((0, 0), (1, 1)) and al.cost == 0

    def test_substitution(self):
        al = word_align(["call", "john"], ["call", "joe"])
        assert al.pairs == ((0, 0), (1, 1)) and al.cost == 1

    def test_deletion(self):
        ref, hyp = ["call", "john", "now"], ["call", "now"]
        assert brute_alignment_cost(ref, hyp) == 1
        al = word_align(ref, hyp)
        assert al.pairs == ((0, 0), (1, GAP), (2, 1))
        assert al.cost == 1

    def test_prefers_substitution(self):
        # a substitution (cost 1) beats a deletion plus an insertion (cost 2)
        al = word_align(["a", "b"], ["a", "c"])
        assert al.pairs == ((0, 0), (1, 1))

    @settings(max_examples=60)
    @given(st.lists(st.sampled_from("abc"), max_size=5), st.lists(st.sampled_from("abc"), max_size=5))
    def test_minimal_and_well_formed(self, ref, hyp):
        al = word_align(ref, hyp)
        assert al.cost == brute_alignment_cost(ref, hyp)
        assert alignment_cost(ref, hyp, al) == al.cost
        assert [r for r, _ in al.pairs if r is not None] == list(range(len(ref)))
        assert [h for _, h in al.pairs if h is not None] == list(range(len(hyp)))

    def test_cost_is_word_levenshtein(self):
        rnd = random.Random(3)
        for _ in range(200):
            ref = [rnd.choice("xyz") for _ in range(rnd.randint(0, 7))]
            hyp = [rnd.choice("xyz") for _ in range(rnd.randint(0, 7))]
            assert word_align(ref, hyp).cost == levenshtein_full_table(ref, hyp)
