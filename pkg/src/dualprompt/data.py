"""Synthetic compositional clips, class-map/annotation ingestion, and the
precomputed-feature container.

Synthetic verbs are purely temporal (motion) and objects purely spatial
(shape + color), so verb-vs-object generalization experiments isolate
temporal vs spatial bias.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np

CLASSMAP_VERSION = "# classmap v1"
MANIFEST_VERSION = "# manifest v1"
ANNOTATIONS_VERSION = "# annotations v1"
FEATURES_VERSION = "features-v1"


@dataclass(frozen=True)
class ActionClass:
    id: str
    name: str
    verb: str
    object: str | None = None

    def __post_init__(self):
        if not self.verb:
            raise ValueError(f"class {self.id!r} has no verb")


@dataclass
class VideoSample:
    id: str
    labels: set
    frames: np.ndarray | None = None  # T x H x W x C pixels in [0,1]
    features: np.ndarray | None = None  # T x d precomputed features
    split_role: str = "train"

    def __post_init__(self):
        if (self.frames is None) == (self.features is None):
            raise ValueError(f"sample {self.id!r} must carry exactly one of pixels or features")


class Vocabulary:
    """Word-level vocabulary over lowercase class-name words."""

    def __init__(self, words):
        self.words = sorted(set(words))
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    @classmethod
    def from_classes(cls, classes):
        words = []
        for c in classes:
            words.extend(c.name.lower().split())
        return cls(words)

    def encode(self, text):
        ids = []
        for w in text.lower().split():
            if w not in self.index:
                raise KeyError(f"unknown word {w!r}")
            ids.append(self.index[w])
        if not ids:
            raise ValueError("empty class name")
        return ids

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("# vocab v1\n")
            for w in self.words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        return cls(lines)


# -- synthetic rendering -------------------------------------------------------

OBJECT_COLORS = {
    "ball": (0.9, 0.15, 0.1),
    "box": (0.1, 0.8, 0.2),
    "ring": (0.2, 0.35, 0.95),
    "cross": (0.9, 0.85, 0.1),
    "bar": (0.85, 0.2, 0.8),
    "tri": (0.1, 0.8, 0.85),
    "dot": (0.95, 0.55, 0.1),
    "frame": (0.9, 0.9, 0.9),
    "diag": (0.55, 0.2, 0.9),
    "tee": (0.5, 0.75, 0.3),
}

# ordered so that the first six verbs remain distinguishable from an unordered
# set of frames (frame pooling is permutation-invariant downstream); pure
# translations carry no frame-local signature and live in the back half
VERBS = ("grow", "blink", "pulse", "shake", "spin", "stretch",
         "left", "right", "up", "down", "shrink", "drift")


def _object_mask(kind: str, s: int) -> np.ndarray:
    """Binary sprite mask of side s for one object kind."""
    yy, xx = np.mgrid[0:s, 0:s]
    cy = cx = (s - 1) / 2.0
    r = s / 2.0
    m = np.zeros((s, s))
    if kind == "ball":
        m = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(float)
    elif kind == "dot":
        m = ((yy - cy) ** 2 + (xx - cx) ** 2 <= (r * 0.55) ** 2).astype(float)
    elif kind == "ring":
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        m = ((d2 <= r * r) & (d2 >= (r * 0.55) ** 2)).astype(float)
    elif kind == "box":
        m[:] = 1.0
    elif kind == "frame":
        m[:] = 1.0
        t = max(1, s // 4)
        m[t : s - t, t : s - t] = 0.0
    elif kind == "cross":
        t = max(1, s // 3)
        m[(s - t) // 2 : (s + t) // 2, :] = 1.0
        m[:, (s - t) // 2 : (s + t) // 2] = 1.0
    elif kind == "bar":
        t = max(1, s // 3)
        m[(s - t) // 2 : (s + t) // 2, :] = 1.0
    elif kind == "tri":
        m = (yy >= (s - 1) - 2 * np.minimum(xx, (s - 1) - xx)).astype(float)
    elif kind == "diag":
        m = (np.abs(yy - xx) <= max(1, s // 4)).astype(float)
    elif kind == "tee":
        t = max(1, s // 3)
        m[:t, :] = 1.0
        m[:, (s - t) // 2 : (s + t) // 2] = 1.0
    else:
        raise ValueError(f"unknown object kind {kind!r}")
    return m


def _verb_motion(verb, t, T, span):
    """Per-frame (dy, dx, size, aspect, angle, visible, brightness) for one verb."""
    u = t / max(1, T - 1)
    dy = dx = angle = 0.0
    size = aspect = 1.0
    visible = True
    bright = 1.0
    if verb == "left":
        dx = -span * u
    elif verb == "right":
        dx = span * u
    elif verb == "up":
        dy = -span * u
    elif verb == "down":
        dy = span * u
    elif verb == "drift":
        dy = span * u * 0.7
        dx = span * u * 0.7
    elif verb == "grow":
        size = 0.5 + u
    elif verb == "shrink":
        size = 1.5 - u
    elif verb == "blink":
        visible = (t // 2) % 2 == 0
    elif verb == "pulse":
        bright = 0.3 + 0.7 * (0.5 + 0.5 * np.cos(2 * np.pi * 2 * u))
    elif verb == "shake":
        dx = (span / 2.0) * (1 if t % 2 == 0 else -1)
    elif verb == "spin":
        angle = 2.0 * np.pi * 0.75 * u
    elif verb == "stretch":
        aspect = 1.0 + 1.5 * u
    else:
        raise ValueError(f"unknown verb {verb!r}")
    return dy, dx, size, aspect, angle, visible, bright


def _rotate_mask(mask: np.ndarray, angle: float) -> np.ndarray:
    """Nearest-neighbor rotation about the sprite center."""
    s = mask.shape[0]
    c = (s - 1) / 2.0
    yy, xx = np.mgrid[0:s, 0:s]
    ca, sa = np.cos(-angle), np.sin(-angle)
    src_y = ca * (yy - c) - sa * (xx - c) + c
    src_x = sa * (yy - c) + ca * (xx - c) + c
    iy = np.round(src_y).astype(int)
    ix = np.round(src_x).astype(int)
    ok = (iy >= 0) & (iy < s) & (ix >= 0) & (ix < s)
    out = np.zeros_like(mask)
    out[ok] = mask[iy[ok], ix[ok]]
    return out


def _stamp(canvas, mask, color, top, left, bright):
    h, w, _ = canvas.shape
    mh, mw = mask.shape
    y0, x0 = int(round(top)), int(round(left))
    ys, xs = max(0, y0), max(0, x0)
    ye, xe = min(h, y0 + mh), min(w, x0 + mw)
    if ye <= ys or xe <= xs:
        return
    sub = mask[ys - y0 : ye - y0, xs - x0 : xe - x0]
    for c in range(3):
        region = canvas[ys:ye, xs:xe, c]
        canvas[ys:ye, xs:xe, c] = np.maximum(region, sub * color[c] * bright)


@dataclass
class SynthConfig:
    verbs: tuple = VERBS[:6]
    objects: tuple = tuple(list(OBJECT_COLORS)[:6])
    frames_per_clip: int = 16
    frame_size: int = 32
    max_actions_per_clip: int = 3
    clips_per_class: int = 4
    sprite_size: int = 9
    motion_span: float = 2.0  # travel distance over a clip, in sprite widths
    exclude: tuple = ()  # (verb, object) pairs left out of the class map
    id_prefix: str = "s"
    seed: int = 0

    def __post_init__(self):
        if len(self.verbs) * len(self.objects) - len(self.exclude) < 2:
            raise ValueError("need at least 2 classes")
        if self.max_actions_per_clip < 1:
            raise ValueError("max_actions_per_clip must be >= 1")


def synth_class_map(cfg: SynthConfig):
    classes = []
    skip = set(cfg.exclude)
    i = 0
    for v in cfg.verbs:
        for o in cfg.objects:
            if (v, o) in skip:
                continue
            classes.append(ActionClass(id=f"{cfg.id_prefix}{i:03d}", name=f"{v} {o}", verb=v, object=o))
            i += 1
    return classes


def render_clip(actions, cfg: SynthConfig, rng) -> np.ndarray:
    """Render one clip of shape (T, H, W, 3); actions are (verb, object) pairs."""
    T, H = cfg.frames_per_clip, cfg.frame_size
    s = cfg.sprite_size
    anchors_per_side = H // (s + 4)
    slots = [
        (2 + i * (s + 4), 2 + j * (s + 4))
        for i in range(anchors_per_side)
        for j in range(anchors_per_side)
    ]
    if len(actions) > len(slots):
        raise ValueError(f"canvas {H}x{H} too small for {len(actions)} actors")
    chosen = [slots[k] for k in rng.choice(len(slots), size=len(actions), replace=False)]
    span = s * cfg.motion_span
    clip = np.zeros((T, H, H, 3))
    for (verb, obj), (ay, ax) in zip(actions, chosen):
        base_mask = _object_mask(obj, s)
        color = OBJECT_COLORS[obj]
        for t in range(T):
            dy, dx, size, aspect, angle, visible, bright = _verb_motion(verb, t, T, span)
            if not visible:
                continue
            mask = base_mask
            if size != 1.0 or aspect != 1.0:
                h = max(3, int(round(s * size)))
                w = max(3, int(round(s * size * aspect)))
                mask = _resize_mask(mask, h, w)
            if angle != 0.0:
                mask = _rotate_mask(mask, angle)
            _stamp(clip[t], mask, color, ay + dy, ax + dx, bright)
    return clip


def _resize_mask(mask, new_h, new_w=None):
    if new_w is None:
        new_w = new_h
    s = mask.shape[0]
    ridx = np.clip((np.arange(new_h) * s / new_h).astype(int), 0, s - 1)
    cidx = np.clip((np.arange(new_w) * s / new_w).astype(int), 0, s - 1)
    return mask[np.ix_(ridx, cidx)]


def generate_synthetic_dataset(cfg: SynthConfig):
    """Cross-product class map plus rendered multi-actor clips, deterministic per seed."""
    rng = np.random.RandomState(cfg.seed)
    classes = synth_class_map(cfg)
    by_pair = {(c.verb, c.object): c for c in classes}
    pairs = [(c.verb, c.object) for c in classes]
    samples = []
    n = 0
    for c in classes:
        for _ in range(cfg.clips_per_class):
            k = int(rng.randint(1, cfg.max_actions_per_clip + 1))
            actions = [(c.verb, c.object)]
            if k > 1:
                others = [p for p in pairs if p != (c.verb, c.object)]
                extra = rng.choice(len(others), size=k - 1, replace=False)
                actions.extend(others[e] for e in extra)
            clip = render_clip(actions, cfg, rng)
            labels = {by_pair[a].id for a in actions}
            samples.append(VideoSample(id=f"clip{n:05d}", labels=labels, frames=clip))
            n += 1
    return classes, samples


# -- class map and annotation files --------------------------------------------


def charades_class_map_path():
    """Path to the bundled Charades-style verb/object class map."""
    return importlib.resources.files("dualprompt") / "assets" / "charades_classes.txt"


@dataclass
class ClassMapReport:
    num_classes: int
    num_verbs: int
    num_objects: int
    num_verb_object: int
    num_verb_only: int


def save_class_map(path, classes):
    with open(path, "w") as fh:
        fh.write(CLASSMAP_VERSION + "\n")
        for c in classes:
            fh.write(f"{c.id}|{c.name}|{c.verb}|{c.object or ''}\n")


def load_class_map(path):
    """Parse 'id|name|verb|object' records; returns (classes, validation report)."""
    classes = []
    seen_ids = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("|")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            cid, name, verb, obj = (p.strip() for p in parts)
            if cid in seen_ids:
                raise ValueError(f"line {lineno}: duplicate class id {cid!r}")
            if not verb:
                raise ValueError(f"line {lineno}: class {cid!r} is missing a verb")
            seen_ids.add(cid)
            classes.append(ActionClass(id=cid, name=name, verb=verb, object=obj or None))
    verbs = {c.verb for c in classes}
    objects = {c.object for c in classes if c.object}
    vo = sum(1 for c in classes if c.object)
    report = ClassMapReport(
        num_classes=len(classes),
        num_verbs=len(verbs),
        num_objects=len(objects),
        num_verb_object=vo,
        num_verb_only=len(classes) - vo,
    )
    return classes, report


def load_charades_annotations(path, classes):
    """Parse 'clip_id|cXXX start end;...' lines into labeled clip descriptors.

    Returns (descriptors, warnings); clips with an empty action field get an
    empty label set and a warning entry.
    """
    known = {c.id for c in classes}
    descriptors = []
    warnings = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("|")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'clip|actions'")
            clip_id, actions_field = parts[0].strip(), parts[1].strip()
            labels = set()
            intervals = []
            if not actions_field:
                warnings.append(f"clip {clip_id!r}: no actions")
            else:
                for entry in actions_field.split(";"):
                    fields = entry.split()
                    if len(fields) != 3:
                        raise ValueError(f"clip {clip_id!r}: malformed action entry {entry!r}")
                    cid, start, end = fields
                    if cid not in known:
                        raise ValueError(f"clip {clip_id!r}: unknown class id {cid!r}")
                    try:
                        interval = (float(start), float(end))
                    except ValueError:
                        raise ValueError(f"clip {clip_id!r}: non-numeric time in {entry!r}") from None
                    labels.add(cid)
                    intervals.append((cid, *interval))
            descriptors.append({"id": clip_id, "labels": labels, "intervals": intervals})
    return descriptors, warnings


def save_manifest(path, samples):
    with open(path, "w") as fh:
        fh.write(MANIFEST_VERSION + "\n")
        for s in samples:
            fh.write(f"{s.id}|{','.join(sorted(s.labels))}\n")


def load_manifest(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            clip_id, labels = line.split("|")
            out[clip_id] = set(labels.split(",")) if labels else set()
    return out


# -- feature containers ----------------------------------------------------------


def save_frame_features(path, features: dict):
    """Store {clip_id: T x d float array} with exact round-trip."""
    payload = {"__format__": np.frombuffer(FEATURES_VERSION.encode(), dtype=np.uint8)}
    for cid, mat in features.items():
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"clip {cid!r}: features must be a T x d matrix")
        payload["feat/" + cid] = mat
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_frame_features(path) -> dict:
    import zipfile

    try:
        with np.load(path, allow_pickle=False) as z:
            version = bytes(z["__format__"]).decode()
            if version != FEATURES_VERSION:
                raise ValueError(f"unsupported feature container version {version!r}")
            out = {}
            for key in z.files:
                if key.startswith("feat/"):
                    mat = z[key]
                    if mat.ndim != 2:
                        raise ValueError(f"clip {key[5:]!r}: stored features are not 2-D")
                    out[key[5:]] = mat
            return out
    except (zipfile.BadZipFile, OSError, KeyError) as exc:
        raise ValueError(f"malformed feature container {path}: {exc}") from exc
