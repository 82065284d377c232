import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tracer.errors import EvaluationError
from tracer.evaluation import (EvalReport, auarc, auroc, early_warning, emit_report, evaluate,
                               permutation_auroc, read_curve_csv, roc_curve, summary_lines)


def brute_auroc(scores, labels):
    """(concordant + ties / 2) / pairs, by enumerating every failure-success pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auroc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    assert auroc([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]) == 0.75


def test_auroc_one_class():
    with pytest.raises(EvaluationError):
        auroc([0.1, 0.2], [1, 1])


_labeled = st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 8).map(lambda v: v / 4), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@given(_labeled)
def test_auroc_brute_force_and_monotone_invariance(data):
    s, y = data
    if 0 < sum(y) < len(y):
        assert auroc(s, y) == brute_auroc(s, y)
        assert auroc(np.exp(3 * np.asarray(s)) - 7, y) == auroc(s, y)


def test_roc_curve_endpoints():
    pts = roc_curve([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0])
    assert pts[0] == (0.0, 0.0, math.inf)
    assert pts[-1][:2] == (1.0, 1.0)


def test_auarc_examples():
    area, curve = auarc([0.2, 0.5, 0.1], [0, 0, 0])
    assert area == 1.0 and all(acc == 1.0 for _, acc in curve)
    area, curve = auarc([0.2, 0.5, 0.1], [1, 1, 1])
    assert area == 0.0
    area, curve = auarc([0.9, 0.1], [1, 0])
    assert curve == [(0.0, 0.5), (0.5, 1.0)]
    assert area == 0.75


def test_auarc_rejects_ties_as_block():
    _, curve = auarc([0.5, 0.5, 0.1], [1, 0, 0])
    assert [x for x, _ in curve] == [0.0, pytest.approx(2 / 3)]


@given(_labeled)
def test_auarc_range_and_order_independence(data):
    s, y = data
    area, curve = auarc(s, y)
    assert 0.0 <= area <= 1.0
    xs = [x for x, _ in curve]
    assert xs == sorted(xs) and xs[0] == 0.0
    perm = np.random.default_rng(len(s)).permutation(len(s))
    assert auarc(np.asarray(s)[perm], np.asarray(y)[perm])[0] == pytest.approx(area, abs=1e-15)


def test_early_warning_examples():
    ew = early_warning([[0.1, 0.3, 0.7]], 0.5)
    assert ew.detection_times == (1.0,)
    ew = early_warning([[0.1, 0.3, 0.7]], 0.2)
    assert ew.detection_times == (pytest.approx(2 / 3),)
    ew = early_warning([[0.2, 0.4, 0.1, 0.3]], 0.0)
    assert ew.detection_times == (0.25,)
    ew = early_warning([[0.2, 0.4]], 9.0)
    assert ew.detection_times == (None,) and ew.mean_time is None and ew.n_detected == 0
    assert all(rate == 0.0 for _, rate in ew.curve)


def test_early_warning_grid_and_by_20():
    ew = early_warning([[1.0] + [0.0] * 4, [0.0] * 4 + [1.0]], 0.5)
    assert [x for x, _ in ew.curve] == [pytest.approx(i / 20) for i in range(1, 21)]
    assert ew.detected_by_early == 0.5
    assert ew.curve[3] == (0.2, 0.5) and ew.curve[-1] == (1.0, 1.0)


@given(st.lists(st.lists(st.floats(0, 5), min_size=1, max_size=12), min_size=1, max_size=6),
       st.floats(0, 5), st.floats(0, 5))
def test_detection_times_non_increasing_as_threshold_drops(prefixes, a, b):
    hi, lo = max(a, b), min(a, b)
    t_hi = early_warning(prefixes, hi).detection_times
    t_lo = early_warning(prefixes, lo).detection_times
    for x, y in zip(t_hi, t_lo):
        assert y is not None if x is not None else True
        if x is not None:
            assert y <= x


def test_summary_format_and_files(tmp_path):
    report = EvalReport(0.735, 0.629, [(0.0, 0.0, math.inf), (1.0, 1.0, 0.1)], [(0.0, 0.5)], None, 1, 1)
    assert summary_lines(report)[0] == "AUROC/AUARC: 0.735 / 0.629"
    emit_report(report, tmp_path)
    assert (tmp_path / "early_warning.csv").read_text() == "progress,detection_rate\n"
    assert read_curve_csv(tmp_path / "arc.csv") == [(0.0, 0.5)]
    assert read_curve_csv(tmp_path / "roc.csv") == report.roc_curve


def test_evaluate_with_prefixes(tmp_path):
    scores = [0.9, 0.8, 0.2, 0.1]
    prefixes = [[0.1, 0.9], [0.8, 0.8], [0.2], [0.0, 0.1]]
    report = evaluate(scores, [1, 1, 0, 0], prefixes)
    assert report.auroc == 1.0
    assert report.early_warning.threshold == 0.5
    assert report.early_warning.detection_times == (1.0, 0.5)
    emit_report(report, tmp_path)
    assert read_curve_csv(tmp_path / "early_warning.csv") == list(report.early_warning.curve)


def test_permutation_auroc_near_chance():
    rng = np.random.default_rng(0)
    s = rng.random(400)
    y = (s > 0.5).astype(int)
    mean, sd = permutation_auroc(s, y, n_perm=300, seed=1)
    assert abs(mean - 0.5) < 3 * sd / math.sqrt(300) + 0.01
