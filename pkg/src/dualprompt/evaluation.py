"""Multi-label ranking metrics: average precision, subset mAP, threshold
binarization with cluster confusion matrices, and the similarity-threshold
baseline predictor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REPORT_VERSION = "# metrics v1"


class UndefinedAPError(ValueError):
    """Raised when a class has no positive label, so AP is undefined."""


def average_precision(scores, labels) -> float:
    """Mean of precision-at-k over the positive ranks, scores sorted descending.

    Ties are broken by stable original order.
    """
    scores = np.asarray(scores, float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not labels.any():
        raise UndefinedAPError("no positive label for this class")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order].astype(bool)
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    precisions = hits[ranked] / ranks[ranked]
    return float(precisions.mean())


def mean_ap(score_matrix, label_matrix, class_indices=None):
    """Arithmetic mean of per-class AP over the subset; zero-positive classes
    are skipped and counted.

    Returns (mAP, per_class_ap dict, skipped class list).
    """
    scores = np.asarray(score_matrix, float)
    labels = np.asarray(label_matrix)
    if scores.shape != labels.shape:
        raise ValueError(f"score/label shapes differ: {scores.shape} vs {labels.shape}")
    if class_indices is None:
        class_indices = range(scores.shape[0])
    per_class = {}
    skipped = []
    for j in class_indices:
        try:
            per_class[j] = average_precision(scores[j], labels[j])
        except UndefinedAPError:
            skipped.append(j)
    if not per_class:
        raise ValueError("no class in the subset has a positive label")
    return float(np.mean(list(per_class.values()))), per_class, skipped


def binarize_and_confuse(probabilities, true_labels, cluster, threshold=0.5):
    """Confusion matrix over one verb/object cluster of classes.

    probabilities: videos x classes array aligned with `cluster` column order.
    true_labels: same-shape binary array. Entry (a, b) counts videos that truly
    carry class a and predict class b after thresholding.
    """
    if len(cluster) == 0:
        raise ValueError("empty cluster")
    probs = np.asarray(probabilities, float)
    truth = np.asarray(true_labels).astype(bool)
    if probs.shape != truth.shape or probs.shape[1] != len(cluster):
        raise ValueError("probabilities/labels must be videos x cluster-classes")
    predicted = probs > threshold
    matrix = truth.astype(np.int64).T @ predicted.astype(np.int64)
    return matrix


def baseline_threshold_predict(similarities, threshold=0.5):
    """Fixed-threshold baseline: rescale cosine scores from [-1, 1] to [0, 1]
    and predict every class strictly above the threshold."""
    sims = np.asarray(similarities, float)
    rescaled = (sims + 1.0) / 2.0
    return rescaled > threshold


@dataclass
class EvalReport:
    per_class_ap: dict = field(default_factory=dict)
    map_overall: float = float("nan")
    map_zsl: float = float("nan")
    map_gzsl: float = float("nan")
    map_seen: float = float("nan")
    bucket_map: dict = field(default_factory=dict)
    skipped_classes: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (section, id, metric, value)

    def add_row(self, section, ident, metric, value):
        self.rows.append((section, ident, metric, value))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(REPORT_VERSION + "\n")
            for section, ident, metric, value in self.rows:
                fh.write(f"{section}|{ident}|{metric}|{value!r}\n")

    @classmethod
    def load_rows(cls, path):
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                section, ident, metric, value = line.split("|")
                rows.append((section, ident, metric, value))
        return rows


def build_report(score_matrix, label_matrix, class_ids, split=None, buckets=None) -> EvalReport:
    """Full metric report: overall mAP, ZSL (unseen-only), GZSL (all), seen-only,
    and per-bucket mAP when a compositional partition is supplied."""
    report = EvalReport()
    id_to_idx = {cid: i for i, cid in enumerate(class_ids)}
    overall, per_class, skipped = mean_ap(score_matrix, label_matrix)
    report.per_class_ap = {class_ids[j]: ap for j, ap in per_class.items()}
    report.skipped_classes = [class_ids[j] for j in skipped]
    report.map_overall = overall
    report.map_gzsl = overall
    report.add_row("summary", "all", "mAP", overall)
    report.add_row("summary", "all", "skipped_zero_positive", len(skipped))
    if split is not None:
        unseen_idx = [id_to_idx[c] for c in sorted(split.unseen) if c in id_to_idx]
        seen_idx = [id_to_idx[c] for c in sorted(split.seen) if c in id_to_idx]
        if unseen_idx:
            report.map_zsl, _, _ = mean_ap(score_matrix, label_matrix, unseen_idx)
            report.add_row("summary", "unseen", "mAP_ZSL", report.map_zsl)
        if seen_idx:
            report.map_seen, _, _ = mean_ap(score_matrix, label_matrix, seen_idx)
            report.add_row("summary", "seen", "mAP_seen", report.map_seen)
        report.add_row("summary", "all", "mAP_GZSL", report.map_gzsl)
    if buckets is not None:
        for name in sorted(buckets):
            idx = [id_to_idx[c] for c in sorted(buckets[name]) if c in id_to_idx]
            if not idx:
                continue
            try:
                bucket_map, _, _ = mean_ap(score_matrix, label_matrix, idx)
            except ValueError:
                continue
            report.bucket_map[name] = bucket_map
            report.add_row("buckets", name, "mAP", bucket_map)
            report.add_row("buckets", name, "classes", len(idx))
    for cid, ap in sorted(report.per_class_ap.items()):
        report.add_row("per_class", cid, "AP", ap)
    return report
