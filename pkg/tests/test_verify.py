from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scnowcast import verify
from scnowcast.verify import ContingencyTable


def concordance_auc(scores, truth):
    """P(score_pos > score_neg) + 1/2 P(tie), over every positive/negative pair."""
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_contingency_examples():
    assert verify.contingency([1, 1, 0, 0], [1, 0, 1, 0]).as_tuple() == (1, 1, 1, 1)
    assert verify.contingency([1] * 5, [1] * 5).as_tuple() == (5, 0, 0, 0)
    with pytest.raises(ValueError):
        verify.contingency([1, 0], [1])
    with pytest.raises(ValueError):
        verify.contingency([2], [1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_contingency_swap_symmetry(pairs):
    p, t = zip(*pairs)
    a, b = verify.contingency(p, t), verify.contingency(t, p)
    assert (a.hits, a.misses, a.false_alarms, a.correct_nulls) == (b.hits, b.false_alarms, b.misses, b.correct_nulls)
    assert a.total == len(pairs)


def test_score_examples():
    t = ContingencyTable(7, 3, 3, 0)
    assert verify.pod(t) == pytest.approx(0.7)
    assert verify.far(t) == pytest.approx(0.3)
    assert verify.csi(t) == pytest.approx(7 / 13)
    perfect = ContingencyTable(9, 0, 0, 4)
    assert (verify.pod(perfect), verify.far(perfect), verify.csi(perfect)) == (1.0, 0.0, 1.0)


def test_undefined_scores():
    t = ContingencyTable(0, 0, 2, 5)
    assert verify.pod(t) is None and verify.far(t) == 1.0 and verify.csi(t) == 0.0
    empty = ContingencyTable(0, 0, 0, 5)
    assert verify.pod(empty) is None and verify.far(empty) is None and verify.csi(empty) is None
    assert verify.fmt_score(None) == "undefined"


@settings(max_examples=200, deadline=None)
@given(h=st.integers(1, 10**6), m=st.integers(0, 10**6), f=st.integers(0, 10**6))
def test_score_identity_exact(h, m, f):
    pod, far, csi = verify.exact_scores(ContingencyTable(h, m, f, 0))
    assert csi <= pod and csi <= 1 - far
    assert 1 / csi == 1 / pod + 1 / (1 - far) - 1


def test_table_rows_within_rounding():
    assert verify.csi_from_pod_far(0.68, 0.37) == pytest.approx(0.486, abs=5e-4)
    assert verify.csi_from_pod_far(0.63, 0.49) == pytest.approx(0.3925, abs=5e-4)


def test_roc_examples():
    assert verify.roc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert verify.roc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]).auc == 0.75
    with pytest.raises(ValueError):
        verify.roc([0.1, 0.2], [1, 1])


def test_roc_curve_shape():
    c = verify.roc([0.5, 0.5, 0.2, 0.9], [1, 0, 0, 1])
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_equals_concordance(pairs):
    s, t = zip(*pairs)
    if len(set(t)) < 2:
        return
    s = [v / 6 for v in s]  # coarse scores force ties
    assert verify.roc(s, t).auc == pytest.approx(concordance_auc(s, t), abs=1e-12)


def test_auc_null_distribution():
    rng = np.random.default_rng(0)
    s = rng.random(10_000)
    t = rng.permutation(np.arange(10_000) % 2)
    assert abs(verify.roc(s, t).auc - 0.5) < 0.05


def test_skill_series_and_aggregate():
    tabs = [ContingencyTable(2, 1, 1, 5), ContingencyTable(0, 0, 3, 6), ContingencyTable(4, 2, 0, 3)]
    series = verify.skill_series(zip([0, 900, 1800], tabs))
    assert series[1].pod is None and series[1].csi == 0.0 and series[1].far == 1.0
    total = verify.aggregate(tabs)
    assert total.as_tuple() == tuple(np.sum([t.as_tuple() for t in tabs], axis=0))
    const = verify.skill_series([(t, tabs[0]) for t in range(3)])
    assert len({(p.pod, p.far, p.csi) for p in const}) == 1


def test_overlay_examples(tmp_path):
    truth = np.zeros((3, 4), dtype=int)
    truth[1, 2] = 1
    g = verify.overlay(np.zeros((3, 4), dtype=int), truth)
    assert g.histogram() == {"H": 0, "M": 1, "F": 0, "N": 11}
    same = verify.overlay(truth, truth)
    assert set(np.unique(same.classes)) <= {"H", "N"}
    g.write_csv(tmp_path / "o.csv")
    assert np.array_equal(verify.read_overlay_csv(tmp_path / "o.csv").classes, g.classes)
    g.write_pgm(tmp_path / "o.pgm")
    raw = (tmp_path / "o.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_overlay_histogram_is_contingency(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.integers(0, 2, (5, 7)), rng.integers(0, 2, (5, 7))
    assert verify.overlay(p, t).table() == verify.contingency(p.ravel(), t.ravel())


def test_csv_writers(tmp_path):
    t = ContingencyTable(1, 0, 0, 3)
    path = verify.write_csv(tmp_path / "s.csv", verify.SCORES_COLUMNS, [verify.scores_row("e", t, None)])
    (row,) = verify.read_csv(path)
    assert row["auc"] == "undefined" and row["csi"] == "1.000000"
    assert list(row) == list(verify.SCORES_COLUMNS)
