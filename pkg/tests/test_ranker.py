import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctxspell.ranker import BiasList, preselect, preselect_list, relevance_weight
from ctxspell.textcore import char_edit_distance

from oracles import brute_relevance, levenshtein_full_table

word = st.text("abcdj", min_size=1, max_size=5)
phrase = st.lists(word, min_size=1, max_size=2).map(" ".join)
hyp = st.lists(word, min_size=1, max_size=6).map(" ".join)


class TestRelevanceWeight:
    def test_exact_segment(self):
        assert relevance_weight("john", "call john now") == 0.0

    def test_one_edit(self):
        assert brute_relevance("john", "call jon at ten") == -0.25
        assert relevance_weight("john", "call jon at ten") == -0.25

    def test_short_hypothesis_uses_whole_text(self):
        expected = -levenshtein_full_table("john smith", "x") / 10
        assert relevance_weight("john smith", "x") == expected

    def test_empty_phrase(self):
        with pytest.raises(ValueError):
            relevance_weight("  ", "call john")

    @given(phrase, hyp)
    def test_matches_oracle(self, p, h):
        assert relevance_weight(p, h) == brute_relevance(p, h)

    @given(phrase, hyp)
    def test_non_positive_and_zero_iff_exact(self, p, h):
        w = relevance_weight(p, h)
        assert w <= 0
        m = len(p.split())
        words = h.split()
        segs = [" ".join(words[i : i + m]) for i in range(max(1, len(words) - m + 1))]
        assert (w == 0) == (p in segs)

    @given(phrase, hyp, st.lists(word, min_size=1, max_size=3))
    def test_appending_words_never_lowers_weight(self, p, h, extra):
        if len(h.split()) < len(p.split()):
            return  # the short-hypothesis fallback is a single segment
        assert relevance_weight(p, h + " " + " ".join(extra)) >= relevance_weight(p, h)


class TestPreselect:
    def test_top1(self):
        bl = BiasList.from_phrases(["john", "zzz"])
        (top,) = preselect(bl, "call john", 1)
        assert (top.phrase, top.original_index, top.weight) == ("john", 0, 0.0)

    def test_k_larger_than_list(self):
        bl = BiasList.from_phrases(["zzz", "jon", "john"])
        ranked = preselect(bl, "call john", 10)
        assert [r.phrase for r in ranked] == ["john", "jon", "zzz"]

    def test_ties_by_original_index(self):
        bl = BiasList.from_phrases(["aa", "bb", "cc"])
        assert [r.original_index for r in preselect(bl, "zz", 3)] == [0, 1, 2]

    def test_errors(self):
        with pytest.raises(ValueError):
            preselect(BiasList((), ()), "x", 1)
        with pytest.raises(ValueError):
            preselect(BiasList.from_phrases(["a"]), "x", 0)

    def test_random_lists_match_brute_sort(self):
        rnd = random.Random(11)
        alpha = "abcdefghij"
        for _ in range(20):
            phrases = [
                " ".join("".join(rnd.choice(alpha) for _ in range(rnd.randint(1, 6))) for _ in range(rnd.randint(1, 2)))
                for _ in range(100)
            ]
            h = " ".join("".join(rnd.choice(alpha) for _ in range(rnd.randint(1, 6))) for _ in range(6))
            bl = BiasList.from_phrases(phrases)
            expected = sorted(((brute_relevance(p, h), i) for i, p in enumerate(bl.phrases)), key=lambda t: (-t[0], t[1]))[:10]
            got = [(r.weight, r.original_index) for r in preselect(bl, h, 10)]
            assert got == expected

    def test_permutation_keeps_selected_multiset(self):
        rnd = random.Random(5)
        phrases = ["john", "jon", "joan", "jane", "sam", "dong", "june", "sean"]
        for _ in range(20):
            perm = phrases[:]
            rnd.shuffle(perm)
            a = preselect(BiasList.from_phrases(phrases), "call jon at ten", 4)
            b = preselect(BiasList.from_phrases(perm), "call jon at ten", 4)
            # weights of the top-4 agree; the phrases agree except among ties at the cut
            assert [r.weight for r in a] == [r.weight for r in b]
            cut = a[-1].weight
            assert {(r.phrase, r.weight) for r in a if r.weight > cut} == {(r.phrase, r.weight) for r in b if r.weight > cut}

    def test_preselect_list_keeps_indices(self):
        bl = BiasList.from_phrases(["zzz", "john", "yyy"])
        chosen = preselect_list(bl, "call john", 2)
        assert chosen.phrases[0] == "john" and chosen.indices[0] == 1


class TestBiasListFile:
    def test_load_normalizes_and_flags_duplicates(self, tmp_path):
        p = tmp_path / "list.txt"
        p.write_text("John\n\n  Mary  Ann \njohn\n", encoding="utf-8")
        bl = BiasList.load(p)
        assert bl.phrases == ("john", "mary ann", "john")
        assert bl.indices == (0, 1, 2)
        assert bl.duplicates == ["john"]

    def test_dump_roundtrip(self, tmp_path):
        bl = BiasList.from_phrases(["a b", "c"])
        bl.dump(tmp_path / "x.txt")
        assert BiasList.load(tmp_path / "x.txt") == bl


def test_distance_cache_is_transparent():
    assert char_edit_distance("abc", "abd") == levenshtein_full_table("abc", "abd")
