import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from pacrf.errors import CorpusMismatchError, DuplicateTypeError, InvalidLabelError, InvalidNameError
from pacrf.labelspace import (TaggedSentence, TriggerSpan, build_label_set, labels_to_spans,
                              micro_f1, spans_to_labels)


@pytest.mark.parametrize("n, expected", [(0, 1), (5, 11), (10, 21)])
def test_label_count_is_two_n_plus_one(n, expected):
    ls = build_label_set([f"T{i}" for i in range(n)])
    assert len(ls) == expected
    assert ls.labels[0] == "O" and ls.index("O") == 0


def test_label_order_and_bijection():
    ls = build_label_set(["Attack", "Marry"])
    assert ls.labels == ("O", "B-Attack", "I-Attack", "B-Marry", "I-Marry")
    for i, name in enumerate(ls.labels):
        assert ls.index(name) == i and ls.name(i) == name
    assert ls.decompose(0) == ("O", None)
    assert ls.decompose(3) == ("B", "Marry")
    assert ls.decompose(2) == ("I", "Attack")


def test_build_label_set_errors():
    with pytest.raises(DuplicateTypeError):
        build_label_set(["A", "B", "A"])
    with pytest.raises(InvalidNameError):
        build_label_set(["A", ""])
    ls = build_label_set(["A"])
    with pytest.raises(InvalidLabelError):
        ls.index("B-Z")
    with pytest.raises(InvalidLabelError):
        ls.name(3)


def test_tagged_sentence_length_mismatch():
    with pytest.raises(InvalidLabelError):
        TaggedSentence(("a", "b"), (0,))


def _idx(ls, names):
    return [ls.index(n) for n in names]


def test_labels_to_spans_examples():
    ls = build_label_set(["Marry", "Jail", "Trans"])
    assert labels_to_spans(_idx(ls, ["O", "B-Marry", "O"]), ls) == [TriggerSpan(1, 2, "Marry")]
    sent = TaggedSentence(("locked", "up", "."), tuple(_idx(ls, ["B-Jail", "I-Jail", "O"])))
    assert labels_to_spans(sent, ls) == [TriggerSpan(0, 2, "Jail")]
    # stray I opens a span
    assert labels_to_spans(_idx(ls, ["O", "I-Trans", "O"]), ls) == [TriggerSpan(1, 2, "Trans")]


def test_type_switch_inside_run_starts_new_span():
    ls = build_label_set(["A", "B"])
    got = labels_to_spans(_idx(ls, ["B-A", "I-A", "I-B", "I-B", "B-B"]), ls)
    assert got == [TriggerSpan(0, 2, "A"), TriggerSpan(2, 4, "B"), TriggerSpan(4, 5, "B")]


def test_span_extraction_matches_string_oracle_exhaustively():
    """Every label sequence of length <= 4 over 2 types, against a decoder written over names."""
    ls = build_label_set(["A", "B"])
    for n in range(0, 5):
        for seq in itertools.product(range(len(ls)), repeat=n):
            got = [(s.start, s.end, s.event_type) for s in labels_to_spans(seq, ls)]
            assert got == oracles.spans_from_names([ls.name(i) for i in seq]), seq


def test_spans_to_labels_rejects_out_of_range_span():
    ls = build_label_set(["A"])
    with pytest.raises(InvalidLabelError):
        spans_to_labels([TriggerSpan(2, 4, "A")], 3, ls)


@st.composite
def well_formed(draw):
    types = ["A", "B", "C"]
    ls = build_label_set(types)
    n = draw(st.integers(0, 12))
    labels, pos = [0] * n, 0
    while pos < n:
        if draw(st.booleans()):
            t = draw(st.sampled_from(types))
            k = draw(st.integers(1, min(3, n - pos)))
            labels[pos] = ls.begin(t)
            for p in range(pos + 1, pos + k):
                labels[p] = ls.inside(t)
            pos += k
        else:
            pos += 1
    return ls, labels


@given(well_formed())
@settings(max_examples=300)
def test_round_trip_for_well_formed_sequences(case):
    ls, labels = case
    assert spans_to_labels(labels_to_spans(labels, ls), len(labels), ls) == labels


def test_micro_f1_examples():
    gold = [[TriggerSpan(0, 1, "A"), TriggerSpan(3, 5, "B")]]
    assert tuple(micro_f1(gold, gold)) == (1.0, 1.0, 1.0)
    p, r, f = micro_f1([[TriggerSpan(0, 1, "A")]], gold)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3, abs=1e-12)
    assert tuple(micro_f1([[]], gold)) == (0.0, 0.0, 0.0)
    assert tuple(micro_f1([[]], [[]])) == (0.0, 0.0, 0.0)


def test_duplicate_predictions_count_as_false_positives():
    gold = [[TriggerSpan(0, 1, "A")]]
    res = micro_f1([[TriggerSpan(0, 1, "A"), TriggerSpan(0, 1, "A")]], gold)
    assert (res.tp, res.fp, res.fn) == (1, 1, 0)


def test_micro_f1_length_mismatch():
    with pytest.raises(CorpusMismatchError):
        micro_f1([[]], [[], []])


span_st = st.builds(TriggerSpan, st.integers(0, 4), st.integers(5, 7), st.sampled_from(["A", "B"]))
corpus_st = st.lists(st.tuples(st.lists(span_st, max_size=3), st.lists(span_st, max_size=3)),
                     min_size=1, max_size=5)


@given(corpus_st, st.randoms(use_true_random=False))
@settings(max_examples=200)
def test_micro_f1_matches_oracle_bounded_and_permutation_invariant(pairs, rnd):
    pred = [p for p, _ in pairs]
    gold = [g for _, g in pairs]
    res = micro_f1(pred, gold)
    expected = oracles.prf([[(s.start, s.end, s.event_type) for s in p] for p in pred],
                           [[(s.start, s.end, s.event_type) for s in g] for g in gold])
    assert tuple(res) == pytest.approx(expected, abs=1e-15)
    assert 0 <= res.precision <= 1 and 0 <= res.recall <= 1 and 0 <= res.f1 <= 1
    assert res.f1 <= max(res.precision, res.recall) + 1e-15

    order = list(range(len(pairs)))
    rnd.shuffle(order)
    shuffled_pred = [rnd.sample(pred[i], len(pred[i])) for i in order]
    shuffled_gold = [rnd.sample(gold[i], len(gold[i])) for i in order]
    assert tuple(micro_f1(shuffled_pred, shuffled_gold)) == pytest.approx(tuple(res), abs=1e-15)


def test_labels_accept_numpy_integers():
    ls = build_label_set(["A"])
    assert labels_to_spans(np.array([0, 1, 2]), ls) == [TriggerSpan(1, 3, "A")]
