import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import f1_score

from exceptions import DimensionError, InputError
from metrics import confusion_matrix, f1_breakdown, macro_f1, per_target_report, report_for_records


def naive_macro_f1(gold, pred):
    scores = []
    for c in range(3):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return sum(scores) / 3


labels = st.lists(st.integers(min_value=0, max_value=2), min_size=1, max_size=40)


def test_perfect_prediction():
    assert macro_f1([0, 1, 2, 2, 1], [0, 1, 2, 2, 1]) == 1.0


def test_total_mismatch():
    assert macro_f1([0, 1, 2], [1, 2, 0]) == 0.0


def test_hand_computed_example():
    breakdown = f1_breakdown([0, 0, 1, 2], [0, 1, 1, 2])
    np.testing.assert_allclose(breakdown.f1, [2 / 3, 2 / 3, 1.0])
    assert macro_f1([0, 0, 1, 2], [0, 1, 1, 2]) == pytest.approx(0.7778, abs=1e-4)


def test_constant_predictor_on_balanced_set():
    gold = [0, 1, 2] * 20
    assert macro_f1(gold, [0] * len(gold)) == pytest.approx(1 / 6, abs=1e-12)


def test_absent_class_scores_zero_and_warns(caplog):
    with caplog.at_level('WARNING'):
        score = macro_f1([0, 1, 0, 1], [0, 1, 0, 1])
    assert score == pytest.approx(2 / 3)
    assert 'nieobecne' in caplog.text


def test_confusion_matrix_orientation():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2])
    assert cm.to_list() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]
    assert cm.total == 4
    assert (cm + cm).total == 8


def test_invalid_inputs():
    with pytest.raises(DimensionError):
        macro_f1([0, 1], [0])
    with pytest.raises(InputError):
        macro_f1([0, 3], [0, 1])


@pytest.mark.slow
def test_exhaustive_short_sequences_match_naive():
    for n in range(1, 7):
        for gold in itertools.product(range(3), repeat=n):
            for pred in itertools.product(range(3), repeat=n):
                assert f1_breakdown(gold, pred).macro_f1 == pytest.approx(naive_macro_f1(gold, pred), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_matches_sklearn(data):
    gold = data.draw(labels)
    pred = data.draw(st.lists(st.integers(min_value=0, max_value=2), min_size=len(gold), max_size=len(gold)))
    expected = f1_score(gold, pred, labels=[0, 1, 2], average='macro', zero_division=0)
    assert macro_f1(gold, pred) == pytest.approx(expected, abs=1e-12)
    np.testing.assert_array_equal(confusion_matrix(gold, pred).counts,
                                  sk_confusion_matrix(gold, pred, labels=[0, 1, 2]))


@settings(max_examples=100, deadline=None)
@given(labels, st.randoms(use_true_random=False))
def test_permutation_invariance(gold, random):
    pred = [(g + 1) % 3 if i % 3 == 0 else g for i, g in enumerate(gold)]
    order = list(range(len(gold)))
    random.shuffle(order)
    shuffled_gold = [gold[i] for i in order]
    shuffled_pred = [pred[i] for i in order]
    assert macro_f1(shuffled_gold, shuffled_pred) == pytest.approx(macro_f1(gold, pred), abs=1e-12)


def test_avg_is_unweighted_mean_over_targets():
    targets = ['A'] * 3 + ['B'] * 6
    gold = [0, 1, 2] + [0, 1, 2, 0, 1, 2]
    # B: klasa 2 zawsze mylona z 0
    pred = [0, 1, 2] + [0, 1, 0, 0, 1, 0]
    report = per_target_report(targets, gold, pred)
    assert report.per_target['A'].macro_f1 == 1.0
    expected_b = naive_macro_f1(gold[3:], pred[3:])
    assert report.per_target['B'].macro_f1 == pytest.approx(expected_b)
    assert report.avg_macro_f1 == pytest.approx((1.0 + expected_b) / 2)
    assert report.pooled_macro_f1 == pytest.approx(naive_macro_f1(gold, pred))


def test_targets_scoring_one_and_half_average_to_three_quarters():
    targets = ['A'] * 3 + ['B'] * 4
    gold = [0, 1, 2] + [0, 1, 2, 2]
    # B: F1 = (1, 0.5, 0)
    pred = [0, 1, 2] + [0, 1, 1, 1]
    report = per_target_report(targets, gold, pred)
    assert report.per_target['B'].macro_f1 == pytest.approx(0.5, abs=1e-12)
    assert report.avg_macro_f1 == pytest.approx(0.75, abs=1e-12)


def test_single_target_equals_plain_macro_f1():
    rng = np.random.default_rng(3)
    gold, pred = rng.integers(0, 3, 30), rng.integers(0, 3, 30)
    report = per_target_report(['only'] * 30, gold, pred)
    assert report.avg_macro_f1 == macro_f1(gold, pred)
    assert report.pooled_macro_f1 == macro_f1(gold, pred)


def test_randomized_report_matches_naive():
    rng = np.random.default_rng(50)
    targets = list(rng.choice(['A', 'B', 'C', 'D'], 50))
    gold, pred = rng.integers(0, 3, 50).tolist(), rng.integers(0, 3, 50).tolist()
    report = per_target_report(targets, gold, pred)
    naive = {}
    for name in sorted(set(targets)):
        idx = [i for i, t in enumerate(targets) if t == name]
        naive[name] = naive_macro_f1([gold[i] for i in idx], [pred[i] for i in idx])
    assert list(report.per_target) == sorted(naive)
    for name, score in naive.items():
        assert report.per_target[name].macro_f1 == pytest.approx(score, abs=1e-12)
    assert report.avg_macro_f1 == pytest.approx(sum(naive.values()) / len(naive), abs=1e-12)


def test_mean_gate_per_target():
    gates = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.2, 0.3, 0.5]])
    report = per_target_report(['A', 'A', 'B'], [0, 1, 2], [0, 1, 2], gates)
    np.testing.assert_allclose(report.per_target['A'].mean_gate, [0.5, 0.5, 0.0])
    np.testing.assert_allclose(report.per_target['B'].mean_gate, [0.2, 0.3, 0.5])
    np.testing.assert_allclose(report.mean_gate, gates.mean(axis=0))
    with pytest.raises(DimensionError):
        per_target_report(['A'], [0], [0], np.zeros((2, 3)))


def test_table_and_jsonl_outputs():
    report = per_target_report(['B', 'A', 'A'], [0, 1, 2], [0, 1, 1], np.full((3, 2), 0.5))
    rows = [line.split('\t') for line in report.to_table().splitlines()]
    assert rows[0] == ['target', 'n', 'macro_f1', 'mean_pi_t', 'mean_pi_v', 'mean_pi_tv']
    assert [r[0] for r in rows[1:]] == ['A', 'B', 'Avg.', 'pooled']
    assert rows[1][1] == '2' and rows[3][1] == '3'
    assert rows[1][3:] == ['0.500000', '0.500000', '']
    lines = [json.loads(line) for line in report.to_jsonl().splitlines()]
    assert [l['kind'] for l in lines] == ['target', 'target', 'summary']
    assert lines[-1]['avg_macro_f1'] == pytest.approx(report.avg_macro_f1)
    assert lines[0]['confusion'] == report.per_target['A'].confusion.to_list()
    assert 'Avg.' in report.format_console()


def test_report_for_records(small_dataset):
    records = small_dataset.records
    report = report_for_records(records, [r.label for r in records])
    assert report.avg_macro_f1 == 1.0
    assert set(report.per_target) == {'A', 'B'}
    assert report.n_records == len(records)
