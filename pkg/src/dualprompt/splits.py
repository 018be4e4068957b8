"""Class-level split generation (random / verb / object), split statistics in
the seen-vs-unseen schema, and the compositional subset partition of the
unseen classes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SPLIT_FILE_VERSION = "split-v1"


@dataclass
class SplitSpec:
    kind: str
    seed: int
    fraction: float
    seen: set
    unseen: set
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("random", "verb", "object"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.seen & self.unseen:
            raise ValueError("seen and unseen classes overlap")

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "version": SPLIT_FILE_VERSION,
                    "kind": self.kind,
                    "seed": self.seed,
                    "fraction": self.fraction,
                    "seen": sorted(self.seen),
                    "unseen": sorted(self.unseen),
                    "provenance": self.provenance,
                },
                fh,
                indent=2,
            )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            rec = json.load(fh)
        if rec.get("version") != SPLIT_FILE_VERSION:
            raise ValueError(f"unsupported split file version {rec.get('version')!r}")
        return cls(
            kind=rec["kind"],
            seed=rec["seed"],
            fraction=rec["fraction"],
            seen=set(rec["seen"]),
            unseen=set(rec["unseen"]),
            provenance=rec["provenance"],
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_random_split(classes, fraction=0.5, seed=0) -> SplitSpec:
    """Uniformly sample round(fraction * N) classes as unseen."""
    ids = sorted(c.id for c in classes)
    if len(ids) < 2:
        raise ValueError("need at least 2 classes to split")
    n_unseen = _round_half_up(fraction * len(ids))
    if n_unseen == 0 or n_unseen == len(ids):
        raise ValueError(f"fraction {fraction} leaves one side empty")
    rng = np.random.RandomState(seed)
    unseen = {ids[i] for i in rng.choice(len(ids), size=n_unseen, replace=False)}
    return SplitSpec("random", seed, fraction, set(ids) - unseen, unseen)


def _cluster_split(classes, key, kind, fraction, seed):
    clusters = {}
    for c in classes:
        k = key(c)
        if k is not None:
            clusters.setdefault(k, []).append(c.id)
    names = sorted(clusters)
    if len(names) < 2:
        raise ValueError(f"need at least 2 {kind} clusters to split")
    n_sel = _round_half_up(fraction * len(names))
    if n_sel == 0 or n_sel == len(names):
        raise ValueError(f"fraction {fraction} leaves one side empty")
    rng = np.random.RandomState(seed)
    selected = sorted(names[i] for i in rng.choice(len(names), size=n_sel, replace=False))
    unseen = {cid for name in selected for cid in clusters[name]}
    all_ids = {c.id for c in classes}
    return SplitSpec(kind, seed, fraction, all_ids - unseen, unseen, provenance=selected)


def make_verb_split(classes, fraction=0.5, seed=0) -> SplitSpec:
    """Cluster classes by verb and move whole clusters to the unseen side."""
    return _cluster_split(classes, lambda c: c.verb, "verb", fraction, seed)


def make_object_split(classes, fraction=0.5, seed=0) -> SplitSpec:
    """Cluster object-bearing classes by object; verb-only classes stay seen."""
    return _cluster_split(classes, lambda c: c.object, "object", fraction, seed)


@dataclass
class SplitStats:
    kind: str
    unseen_classes: int
    unseen_verbs: int
    total_verbs: int
    unseen_objects: int
    total_objects: int

    @property
    def unseen_verb_fraction(self):
        return self.unseen_verbs / self.total_verbs

    @property
    def unseen_object_fraction(self):
        return self.unseen_objects / self.total_objects

    def table_row(self):
        return (
            f"{self.kind}|{self.unseen_verb_fraction * 100:.1f}% ({self.unseen_verbs}/{self.total_verbs})"
            f"|{self.unseen_object_fraction * 100:.1f}% ({self.unseen_objects}/{self.total_objects})"
            f"|{self.unseen_classes}"
        )


def split_stats(split: SplitSpec, classes) -> SplitStats:
    """Count test-side verbs/objects that never occur in any training class."""
    by_id = {c.id: c for c in classes}
    seen_verbs = {by_id[i].verb for i in split.seen}
    seen_objects = {by_id[i].object for i in split.seen if by_id[i].object}
    test_verbs = {by_id[i].verb for i in split.unseen}
    test_objects = {by_id[i].object for i in split.unseen if by_id[i].object}
    all_verbs = {c.verb for c in classes}
    all_objects = {c.object for c in classes if c.object}
    return SplitStats(
        kind=split.kind,
        unseen_classes=len(split.unseen),
        unseen_verbs=len(test_verbs - seen_verbs),
        total_verbs=len(all_verbs),
        unseen_objects=len(test_objects - seen_objects),
        total_objects=len(all_objects),
    )


BUCKETS = ("VS-OS", "VS-OU", "VU-OS", "VU-OU", "VS-NO", "VU-NO")


def subset_partition(split: SplitSpec, classes) -> dict:
    """Assign each unseen class to one verb-seen/object-seen bucket.

    Buckets follow the (verb seen/unseen) x (object seen/unseen/not-present)
    grid; the result is a true partition of the unseen classes.
    """
    by_id = {c.id: c for c in classes}
    seen_verbs = {by_id[i].verb for i in split.seen}
    seen_objects = {by_id[i].object for i in split.seen if by_id[i].object}
    buckets = {b: set() for b in BUCKETS}
    for cid in split.unseen:
        c = by_id[cid]
        v = "VS" if c.verb in seen_verbs else "VU"
        if c.object is None:
            o = "NO"
        else:
            o = "OS" if c.object in seen_objects else "OU"
        buckets[f"{v}-{o}"].add(cid)
    return buckets


def restrict_targets_to_seen(samples, split: SplitSpec):
    """Project training label sets onto the seen classes (split-leak hygiene).

    Samples that keep no labels are dropped.
    """
    kept = []
    for s in samples:
        labels = s.labels & split.seen
        if labels:
            kept.append((s, labels))
    return kept
