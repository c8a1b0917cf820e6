import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levembed.seq import (SequenceError, decode_one_hot, levenshtein, levenshtein_dp, load_reads, one_hot,
                          one_hot_batch, parse_seq, save_reads)
from oracles import edit_graph_distances

ac6 = st.text(alphabet="AC", max_size=6)
dna = st.text(alphabet="ACGTN", max_size=12)


@pytest.mark.parametrize("s,t,d", [
    ("ACGT", "ACGT", 0),
    ("", "ACG", 3),
    ("ACG", "", 3),
    ("", "", 0),
    ("ACGT", "AGT", 1),
    ("AACC", "CCAA", 4),
    ("GATTACA", "GCATGCT", 4),
    ("N", "A", 1),
    ("NN", "NN", 0),
])
@pytest.mark.parametrize("dist", [levenshtein, levenshtein_dp])
def test_levenshtein_table(dist, s, t, d):
    assert dist(s, t) == d
    assert dist(t, s) == d


def test_table_values_match_edit_graph():
    assert edit_graph_distances("ACGT", "ACGT", 4)["AGT"] == 1
    assert edit_graph_distances("AACC", "AC", 4)["CCAA"] == 4


@settings(max_examples=200, deadline=None)
@given(ac6, ac6)
def test_dp_equals_exhaustive_search(s, t):
    want = edit_graph_distances(s, "AC", 6)[t]
    assert levenshtein_dp(s, t) == want
    assert levenshtein(s, t) == want


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet="ACGTN", max_size=80), st.text(alphabet="ACGTN", max_size=80))
def test_bit_parallel_equals_two_row_dp(s, t):
    assert levenshtein(s, t) == levenshtein_dp(s, t)


def test_long_sequences_cross_word_boundaries():
    rng = np.random.default_rng(4)
    for n in (63, 64, 65, 152, 300):
        a = "".join(rng.choice(list("ACGT"), size=n))
        b = "".join(rng.choice(list("ACGT"), size=n + int(rng.integers(-5, 6))))
        assert levenshtein(a, b) == levenshtein_dp(a, b)


@settings(max_examples=300, deadline=None)
@given(dna, dna, dna)
def test_metric_axioms(s, t, u):
    d = levenshtein(s, t)
    assert d == levenshtein(t, s)
    assert levenshtein(s, s) == 0
    assert abs(len(s) - len(t)) <= d <= max(len(s), len(t))
    assert levenshtein(s, u) <= d + levenshtein(t, u)


def test_one_hot_examples():
    np.testing.assert_array_equal(one_hot("AC", 3), [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 0, 0, 0]])
    np.testing.assert_array_equal(one_hot("N", 1), [[0, 0, 0, 0, 1]])
    np.testing.assert_array_equal(one_hot("", 2), np.zeros((2, 5)))


def test_one_hot_overflow_names_sequence():
    with pytest.raises(SequenceError, match="ACGTA"):
        one_hot("ACGTA", 4)


@given(dna, st.integers(0, 5))
def test_one_hot_round_trip(s, extra):
    m = one_hot(s, len(s) + extra)
    assert m.shape == (len(s) + extra, 5)
    assert np.all(m[:len(s)].sum(axis=1) == 1)
    assert np.all(m[len(s):] == 0)
    assert int((m.sum(axis=1) > 0).sum()) == len(s)
    assert decode_one_hot(m) == s


def test_one_hot_batch_shape():
    b = one_hot_batch(["A", "CG", ""], 4)
    assert b.shape == (3, 4, 5)
    assert decode_one_hot(b[1]) == "CG"


def test_parse_seq():
    assert parse_seq("acgt") == "ACGT"
    assert parse_seq("") == ""
    assert parse_seq("nAcG") == "NACG"
    with pytest.raises(SequenceError, match="position 2"):
        parse_seq("ACXG")


def test_read_file_round_trip(tmp_path):
    p = tmp_path / "reads.txt"
    p.write_text(">r1\nacgt\n\n>r2\nNNA\n")
    assert load_reads(p) == ["ACGT", "NNA"]
    save_reads(p, ["AC", "G"])
    assert load_reads(p) == ["AC", "G"]


def test_read_file_error_has_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("ACGT\nACZ\n")
    with pytest.raises(SequenceError, match=r"bad.txt:2: invalid symbol 'Z' at position 2"):
        load_reads(p)
