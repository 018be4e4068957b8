"""Average precision, mAP, thresholded baselines, and report files."""

import numpy as np
import pytest

from dualprompt import evaluation
from dualprompt.evaluation import (
    EvalReport,
    UndefinedAPError,
    average_precision,
    baseline_threshold_predict,
    binarize_and_confuse,
    build_report,
    mean_ap,
)


def brute_force_ap(scores, labels):
    """Independent O(n^2) oracle: mean precision at each positive's rank under
    a stable descending sort."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    precisions = []
    hits = 0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def test_perfect_ranking_gives_one():
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0


def test_single_positive_ranked_last_gives_one_over_n():
    n = 7
    scores = np.linspace(1.0, 0.1, n)
    labels = np.zeros(n, dtype=int)
    labels[-1] = 1
    assert average_precision(scores, labels) == pytest.approx(1.0 / n)


def test_no_positives_raises():
    with pytest.raises(UndefinedAPError):
        average_precision([0.5, 0.2], [0, 0])


def test_matches_brute_force_oracle_on_random_instances():
    rng = np.random.RandomState(0)
    for _ in range(200):
        n = rng.randint(2, 13)
        scores = rng.randn(n)
        labels = np.zeros(n, dtype=int)
        labels[rng.choice(n, size=rng.randint(1, n + 1), replace=False)] = 1
        expected = brute_force_ap(scores, labels)
        assert average_precision(scores, labels) == pytest.approx(expected, abs=1e-9)


def test_ties_break_by_stable_original_order():
    # equal scores: the earlier-index item is ranked first
    ap_first = average_precision([0.5, 0.5], [1, 0])
    ap_second = average_precision([0.5, 0.5], [0, 1])
    assert ap_first == 1.0
    assert ap_second == 0.5


def test_mean_ap_skips_zero_positive_classes():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]])  # C x V
    labels = np.array([[1, 0], [0, 1], [0, 0]])
    overall, per_class, skipped = mean_ap(scores, labels)
    assert skipped == [2]
    assert set(per_class) == {0, 1}
    assert overall == pytest.approx(1.0)


def test_mean_ap_class_subset():
    rng = np.random.RandomState(1)
    scores = rng.rand(4, 10)
    labels = (rng.rand(4, 10) < 0.4).astype(int)
    labels[labels.sum(axis=1) == 0, 0] = 1
    sub, per_class, _ = mean_ap(scores, labels, [1, 3])
    assert set(per_class) == {1, 3}
    expected = np.mean([brute_force_ap(scores[j], labels[j]) for j in (1, 3)])
    assert sub == pytest.approx(expected)


def test_baseline_threshold_predict_maps_similarity_to_half_open_interval():
    sims = np.array([[-1.0, 0.0, 1.0]])
    out = baseline_threshold_predict(sims, threshold=0.5)
    assert out.tolist() == [[0, 0, 1]]


def test_binarize_and_confuse_counts_cooccurrence():
    probs = np.array([[0.9, 0.2], [0.6, 0.7]])  # videos x classes
    truth = np.array([[1, 0], [0, 1]])
    confusion = binarize_and_confuse(probs, truth, cluster=["a", "b"])
    # video 0 predicts class 0 (true 0); video 1 predicts both (true 1)
    assert confusion[0, 0] == 1
    assert confusion[1, 0] == 1 and confusion[1, 1] == 1


def test_report_roundtrip(tmp_path):
    scores = np.array([[0.9, 0.1, 0.3], [0.2, 0.8, 0.4]])
    labels = np.array([[1, 0, 0], [0, 1, 1]])
    report = build_report(scores, labels, ["c0", "c1"])
    path = tmp_path / "report.txt"
    report.save(path)
    rows = EvalReport.load_rows(path)
    assert ("summary", "all", "mAP", repr(report.map_overall)) in rows
    per_class = [r for r in rows if r[0] == "per_class"]
    assert len(per_class) == 2


def test_build_report_sections_with_split():
    from dualprompt.splits import SplitSpec

    rng = np.random.RandomState(2)
    scores = rng.rand(4, 12)
    labels = (rng.rand(4, 12) < 0.5).astype(int)
    labels[labels.sum(axis=1) == 0, 0] = 1
    split = SplitSpec(kind="random", seed=0, fraction=0.5,
                      seen={"a", "b"}, unseen={"c", "d"})
    report = build_report(scores, labels, ["a", "b", "c", "d"], split=split)
    assert 0.0 <= report.map_zsl <= 1.0
    assert 0.0 <= report.map_seen <= 1.0
    assert report.map_gzsl == report.map_overall
