"""Answer metrics: normalized Levenshtein similarity and soft VQA accuracy.

The edit-distance oracle is a memoized recursion over suffixes; the anls
oracle recomputes the similarity from that recursion.
"""

import itertools

import numpy as np
import pytest

from boxattn.metrics import (EvalRecord, anls, edit_distance, normalize_answer,
                             results_json, score_records, vqa_accuracy)

from oracles import anls_oracle, edit_distance_recursive


def test_normalize_answer():
    assert normalize_answer("  The   Answer ") == "the answer"
    assert normalize_answer("A\tB\nC") == "a b c"
    assert normalize_answer("") == ""


def test_edit_distance_hand_cases():
    assert edit_distance("", "") == 0
    assert edit_distance("abc", "") == 3
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("flaw", "lawn") == 2
    assert edit_distance("word", "ward") == 1


def test_edit_distance_matches_recursion_on_random_strings():
    rng = np.random.default_rng(1)
    letters = "abcdef"
    for _ in range(300):
        a = "".join(rng.choice(list(letters), size=rng.integers(0, 9)))
        b = "".join(rng.choice(list(letters), size=rng.integers(0, 9)))
        assert edit_distance(a, b) == edit_distance_recursive(a, b)


def test_anls_word_ward_is_three_quarters():
    assert anls("word", "ward") == pytest.approx(0.75)


def test_anls_truncates_below_half():
    # distance 3 on length 5 -> raw 0.4, truncated to zero
    assert edit_distance("aaaaa", "aabbb") == 3
    assert anls("aaaaa", "aabbb") == 0.0
    # raw exactly 0.5 survives
    assert anls("ab", "ax") == pytest.approx(0.5)


def test_anls_multiple_references_take_best():
    assert anls("word", ["ward", "word", "sword"]) == 1.0
    assert anls("word", ["xyz", "ward"]) == pytest.approx(0.75)


def test_anls_case_and_whitespace_insensitive():
    assert anls("  WORD ", "word") == 1.0
    assert anls("two words", "Two  Words") == 1.0


def test_anls_empty_edge_cases():
    assert anls("", "") == 1.0
    assert anls("", "a") == 0.0
    assert anls("a", "") == 0.0


def test_anls_agrees_with_oracle_on_random_pairs():
    rng = np.random.default_rng(2)
    alphabet = list("abc ")
    for _ in range(200):
        p = "".join(rng.choice(alphabet, size=rng.integers(0, 8)))
        refs = ["".join(rng.choice(alphabet, size=rng.integers(0, 8)))
                for _ in range(rng.integers(1, 4))]
        assert anls(p, refs) == pytest.approx(anls_oracle(p, refs))


def test_vqa_accuracy_saturates_at_three_matches():
    refs = ["yes"] * 10
    assert vqa_accuracy("yes", refs) == 1.0
    assert vqa_accuracy("yes", ["yes", "yes", "yes", "no"]) == 1.0
    assert vqa_accuracy("yes", ["yes", "yes", "no", "no"]) == pytest.approx(2 / 3)
    assert vqa_accuracy("yes", ["yes", "no", "no", "no"]) == pytest.approx(1 / 3)
    assert vqa_accuracy("yes", ["no"] * 4) == 0.0


def test_vqa_accuracy_normalizes_and_rejects_empty():
    assert vqa_accuracy("YES ", ["yes", "Yes", " yes"]) == 1.0
    with pytest.raises(ValueError):
        vqa_accuracy("yes", [])


def test_score_records_and_report():
    records = [
        EvalRecord(question_id=0, prediction="word", references=["ward"]),
        EvalRecord(question_id=1, prediction="x", references=["x", "x", "x"]),
    ]
    agg = score_records(records)
    assert records[0].score_anls == pytest.approx(0.75)
    assert records[1].score_vqa == 1.0
    assert agg["mean_anls"] == pytest.approx((0.75 + 1.0) / 2)
    assert agg["mean_vqa_accuracy"] == pytest.approx((0.0 + 1.0) / 2)
    blob = results_json(records)
    assert blob == results_json(records)    # deterministic serialization
    assert '"mean_anls"' in blob


def test_exhaustive_small_alphabet_sample():
    """Spot-check the DP against the recursion on every pair of strings of
    length <= 3 over two letters (the length-6 three-letter sweep lives in
    the acceptance suite)."""
    strings = [""]
    for n in (1, 2, 3):
        strings += ["".join(s) for s in itertools.product("ab", repeat=n)]
    for a in strings:
        for b in strings:
            assert edit_distance(a, b) == edit_distance_recursive(a, b)
