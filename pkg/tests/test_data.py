"""Synthetic clip generation, vocabulary, class maps, annotations, features."""

import numpy as np
import pytest

from dualprompt import data
from dualprompt.data import (
    ActionClass,
    SynthConfig,
    VideoSample,
    Vocabulary,
    charades_class_map_path,
    generate_synthetic_dataset,
    load_charades_annotations,
    load_class_map,
    load_frame_features,
    load_manifest,
    save_class_map,
    save_frame_features,
    save_manifest,
    synth_class_map,
)


def small_cfg(**kw):
    base = dict(verbs=("grow", "blink"), objects=("ball", "box"),
                frames_per_clip=4, frame_size=32, max_actions_per_clip=2,
                clips_per_class=3, seed=0)
    base.update(kw)
    return SynthConfig(**base)


# -- domain types ---------------------------------------------------------------


def test_action_class_requires_verb():
    with pytest.raises(ValueError):
        ActionClass(id="x", name="thing", verb="")


def test_video_sample_needs_exactly_one_payload():
    with pytest.raises(ValueError):
        VideoSample(id="a", labels=set())
    with pytest.raises(ValueError):
        VideoSample(id="a", labels=set(), frames=np.zeros((1, 2, 2, 3)),
                    features=np.zeros((1, 4)))


def test_vocabulary_encode_and_unknown_word():
    vocab = Vocabulary.from_classes(synth_class_map(small_cfg()))
    ids = vocab.encode("grow ball")
    assert len(ids) == 2
    with pytest.raises(KeyError, match="juggle"):
        vocab.encode("juggle ball")


# -- synthetic generation ---------------------------------------------------------


def test_class_map_is_cross_product():
    classes = synth_class_map(small_cfg())
    assert [c.name for c in classes] == ["grow ball", "grow box", "blink ball", "blink box"]


def test_exclude_pairs_removes_classes():
    cfg = small_cfg(exclude=(("grow", "ball"),))
    names = [c.name for c in synth_class_map(cfg)]
    assert "grow ball" not in names and len(names) == 3


def test_dataset_shapes_and_label_consistency():
    cfg = small_cfg()
    classes, samples = generate_synthetic_dataset(cfg)
    ids = {c.id for c in classes}
    for s in samples:
        assert s.frames.shape == (4, 32, 32, 3)
        assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0
        assert 1 <= len(s.labels) <= 2
        assert s.labels <= ids


def test_single_action_config_single_label():
    _, samples = generate_synthetic_dataset(small_cfg(max_actions_per_clip=1))
    assert all(len(s.labels) == 1 for s in samples)


def test_every_class_reaches_min_occurrences():
    cfg = SynthConfig(verbs=("grow", "blink", "pulse", "shake"),
                      objects=("ball", "box", "ring", "cross"),
                      frames_per_clip=4, clips_per_class=10,
                      max_actions_per_clip=2, seed=1)
    classes, samples = generate_synthetic_dataset(cfg)
    counts = {c.id: 0 for c in classes}
    for s in samples:
        for cid in s.labels:
            counts[cid] += 1
    assert len(classes) == 16
    assert all(n >= 10 for n in counts.values())


def test_dataset_deterministic_per_seed():
    _, s1 = generate_synthetic_dataset(small_cfg(seed=5))
    _, s2 = generate_synthetic_dataset(small_cfg(seed=5))
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(s1, s2))
    _, s3 = generate_synthetic_dataset(small_cfg(seed=6))
    assert any(not np.array_equal(a.frames, b.frames) for a, b in zip(s1, s3))


def test_blink_produces_empty_frames():
    cfg = small_cfg(verbs=("blink", "grow"), objects=("ball",), max_actions_per_clip=1)
    classes, samples = generate_synthetic_dataset(cfg)
    blink_id = next(c.id for c in classes if c.verb == "blink")
    clip = next(s for s in samples if s.labels == {blink_id})
    sums = clip.frames.reshape(4, -1).sum(axis=1)
    assert (sums == 0).any() and (sums > 0).any()


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(verbs=("grow",), objects=("ball",))
    with pytest.raises(ValueError):
        small_cfg(max_actions_per_clip=0)


# -- class map files ---------------------------------------------------------------


def test_class_map_roundtrip(tmp_path):
    classes = synth_class_map(small_cfg())
    path = tmp_path / "map.txt"
    save_class_map(path, classes)
    loaded, report = load_class_map(path)
    assert [(c.id, c.name, c.verb, c.object) for c in loaded] == \
        [(c.id, c.name, c.verb, c.object) for c in classes]
    assert report.num_classes == 4
    assert report.num_verb_object == 4 and report.num_verb_only == 0


def test_class_map_duplicate_id_reports_line(tmp_path):
    path = tmp_path / "dup.txt"
    path.write_text("# classmap v1\na|grow ball|grow|ball\na|grow box|grow|box\n")
    with pytest.raises(ValueError, match="line 3"):
        load_class_map(path)


def test_class_map_malformed_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# classmap v1\nonly-two|fields\n")
    with pytest.raises(ValueError, match="line 2"):
        load_class_map(path)


def test_bundled_charades_map_loads():
    classes, report = load_class_map(charades_class_map_path())
    assert report.num_classes == 157


# -- annotations and manifests ------------------------------------------------------


def test_annotation_parsing_multi_label(tmp_path):
    classes = synth_class_map(small_cfg())
    path = tmp_path / "ann.txt"
    cid0, cid1 = classes[0].id, classes[1].id
    path.write_text(f"# annotations v1\nclipA|{cid0} 0.0 2.5;{cid1} 1.0 3.0\nclipB|{cid1} 0.5 1.5\n")
    annotations, warnings = load_charades_annotations(path, classes)
    by_id = {a["id"]: a for a in annotations}
    assert by_id["clipA"]["labels"] == {cid0, cid1}
    assert by_id["clipB"]["labels"] == {cid1}
    assert by_id["clipB"]["intervals"] == [(cid1, 0.5, 1.5)]
    assert warnings == []


def test_annotation_unknown_class_raises(tmp_path):
    classes = synth_class_map(small_cfg())
    path = tmp_path / "ann.txt"
    path.write_text("# annotations v1\nclipA|zzz 0.0 1.0\n")
    with pytest.raises(ValueError, match="zzz"):
        load_charades_annotations(path, classes)


def test_annotation_empty_actions_warns(tmp_path):
    classes = synth_class_map(small_cfg())
    path = tmp_path / "ann.txt"
    path.write_text("# annotations v1\nclipA|\n")
    annotations, warnings = load_charades_annotations(path, classes)
    assert annotations[0]["labels"] == set()
    assert len(warnings) == 1


def test_manifest_roundtrip(tmp_path):
    _, samples = generate_synthetic_dataset(small_cfg())
    path = tmp_path / "manifest.txt"
    save_manifest(path, samples)
    loaded = load_manifest(path)
    assert loaded == {s.id: s.labels for s in samples}


# -- feature containers ----------------------------------------------------------------


def test_frame_features_bitwise_roundtrip(tmp_path):
    rng = np.random.RandomState(0)
    feats = {"clipA": rng.randn(8, 16), "clipB": rng.randn(4, 16)}
    path = tmp_path / "feat.npz"
    save_frame_features(path, feats)
    loaded = load_frame_features(path)
    assert set(loaded) == {"clipA", "clipB"}
    for k in feats:
        assert np.array_equal(loaded[k], feats[k])


def test_frame_features_reject_non_2d(tmp_path):
    with pytest.raises(ValueError):
        save_frame_features(tmp_path / "x.npz", {"a": np.zeros(3)})


def test_frame_features_reject_garbage_file(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"this is not a zip archive")
    with pytest.raises(ValueError):
        load_frame_features(path)
