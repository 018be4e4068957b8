"""Toy contrastive vision-text encoders with a windowed temporal attention view.

The video encoder is a small patch transformer whose self-attention keys and
values can span a window of neighboring frames (window=1 reduces to plain
per-frame attention). The text encoder is the same transformer over word
embeddings. Both produce unit-norm embeddings in a shared space.
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

CHECKPOINT_VERSION = "weights-v1"


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    num_layers: int = 2
    text_layers: int | None = None  # per-tower depth override; defaults to num_layers
    vision_layers: int | None = None
    num_heads: int = 4
    patch_size: int = 8
    frame_size: int = 32
    channels: int = 3
    vocab_size: int = 0  # set from the tokenizer vocabulary
    max_tokens: int = 80
    max_frames: int = 16
    temporal_window: int = 3
    pretrain_temperature: float = 14.29  # inverse-temperature on cosine logits

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.temporal_window < 1 or self.temporal_window % 2 == 0:
            raise ValueError(f"temporal_window must be odd and positive, got {self.temporal_window}")
        if self.frame_size % self.patch_size != 0:
            raise ValueError("frame_size must be a multiple of patch_size")
        for depth in (self.text_layers, self.vision_layers):
            if depth is not None and depth < 1:
                raise ValueError("per-tower layer counts must be positive")

    def tower_layers(self, tower):
        override = self.text_layers if tower == "text" else self.vision_layers
        return self.num_layers if override is None else override

    @property
    def patches_per_frame(self):
        return (self.frame_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels


class ModelWeights:
    """Ordered name -> Tensor parameter map."""

    def __init__(self, params=None):
        self.params: dict[str, Tensor] = dict(params or {})

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params.keys())

    def set_trainable(self, predicate):
        """Set requires_grad per parameter name; predicate(name) -> bool."""
        for name, p in self.params.items():
            p.requires_grad = bool(predicate(name))
            p.grad = None

    def trainable(self):
        return [(n, p) for n, p in self.params.items() if p.requires_grad]

    def copy(self):
        return ModelWeights({n: Tensor(p.data.copy()) for n, p in self.params.items()})

    def save(self, path):
        save_checkpoint(path, {n: p.data for n, p in self.params.items()})

    @classmethod
    def load(cls, path):
        return cls({n: Tensor(v) for n, v in load_checkpoint(path).items()})


def save_checkpoint(path, arrays: dict):
    """Write named float64 arrays with a format-version header; bit-exact round-trip."""
    payload = {"__format__": np.frombuffer(CHECKPOINT_VERSION.encode(), dtype=np.uint8)}
    payload["__names__"] = np.array(list(arrays.keys()))
    for n, v in arrays.items():
        payload["param/" + n] = np.asarray(v, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as z:
            version = bytes(z["__format__"]).decode()
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version!r}")
            names = [str(n) for n in z["__names__"]]
            return {n: z["param/" + n] for n in names}
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ValueError(f"malformed checkpoint {path}: {exc}") from exc


def init_weights(cfg: EncoderConfig, seed: int) -> ModelWeights:
    rng = np.random.RandomState(seed)
    d = cfg.embed_dim

    def normal(*shape, std=0.02):
        return Tensor(rng.normal(0.0, std, size=shape))

    params = {}
    params["text.embed"] = normal(cfg.vocab_size, d)
    params["text.pos"] = normal(cfg.max_tokens, d)
    params["vision.patch_proj"] = normal(cfg.patch_dim, d, std=1.0 / np.sqrt(cfg.patch_dim))
    params["vision.patch_bias"] = Tensor(np.zeros(d))
    params["vision.pos"] = normal(cfg.patches_per_frame, d, std=0.3)
    for tower in ("text", "vision"):
        for i in range(cfg.tower_layers(tower)):
            pre = f"{tower}.layer{i}."
            for w in ("wq", "wk", "wv", "wo"):
                params[pre + "attn." + w] = normal(d, d, std=1.0 / np.sqrt(d))
            params[pre + "attn.bo"] = Tensor(np.zeros(d))
            params[pre + "mlp.w1"] = normal(d, 2 * d, std=1.0 / np.sqrt(d))
            params[pre + "mlp.b1"] = Tensor(np.zeros(2 * d))
            params[pre + "mlp.w2"] = normal(2 * d, d, std=1.0 / np.sqrt(2 * d))
            params[pre + "mlp.b2"] = Tensor(np.zeros(d))
    params["text.proj"] = normal(d, d, std=1.0 / np.sqrt(d))
    params["vision.proj"] = normal(d, d, std=1.0 / np.sqrt(d))
    return ModelWeights(params)


def vision_param_names(weights: ModelWeights):
    return [n for n in weights.names() if n.startswith("vision.")]


def text_param_names(weights: ModelWeights):
    return [n for n in weights.names() if n.startswith("text.")]


# -- attention ----------------------------------------------------------------


def attention_forward(frames, weights: ModelWeights, prefix: str, num_heads: int, window: int):
    """Windowed multi-head self-attention over a list of per-frame token matrices.

    Keys/values for frame t come from frames max(0, t-w//2) .. min(T-1, t+w//2),
    clamped at clip boundaries. Returns one output matrix per frame.
    """
    if not frames:
        raise ShapeError("attention_forward on an empty frame list")
    tokens = frames[0].shape[1]
    if any(f.shape != (frames[0].shape[0], tokens) for f in frames):
        raise ShapeError("all frames must have equal token counts and widths")
    wq = weights[prefix + "wq"]
    wk = weights[prefix + "wk"]
    wv = weights[prefix + "wv"]
    wo = weights[prefix + "wo"]
    bo = weights[prefix + "bo"]
    d = wq.shape[1]
    dh = d // num_heads
    half = window // 2

    qs = [ad.matmul(f, wq) for f in frames]
    ks = [ad.matmul(f, wk) for f in frames]
    vs = [ad.matmul(f, wv) for f in frames]

    T = len(frames)
    outs = []
    for t in range(T):
        lo, hi = max(0, t - half), min(T - 1, t + half)
        k = ks[lo] if lo == hi else ad.concat(ks[lo : hi + 1], axis=0)
        v = vs[lo] if lo == hi else ad.concat(vs[lo : hi + 1], axis=0)
        heads = []
        for h in range(num_heads):
            qh = ad.slice_cols(qs[t], h * dh, (h + 1) * dh)
            kh = ad.slice_cols(k, h * dh, (h + 1) * dh)
            vh = ad.slice_cols(v, h * dh, (h + 1) * dh)
            attn = ad.softmax(ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(dh)), axis=-1)
            heads.append(ad.matmul(attn, vh))
        merged = heads[0] if num_heads == 1 else ad.concat(heads, axis=1)
        outs.append(ad.add(ad.matmul(merged, wo), bo))
    return outs


def _transformer_layers(frames, weights, tower, cfg, window):
    for i in range(cfg.tower_layers(tower)):
        pre = f"{tower}.layer{i}."
        normed = [ad.layer_norm(f) for f in frames]
        attended = attention_forward(normed, weights, pre + "attn.", cfg.num_heads, window)
        frames = [ad.add(f, a) for f, a in zip(frames, attended)]
        nxt = []
        for f in frames:
            h = ad.layer_norm(f)
            h = ad.add(ad.matmul(h, weights[pre + "mlp.w1"]), weights[pre + "mlp.b1"])
            h = ad.relu(h)
            h = ad.add(ad.matmul(h, weights[pre + "mlp.w2"]), weights[pre + "mlp.b2"])
            nxt.append(ad.add(f, h))
        frames = nxt
    return frames


# -- text encoder ---------------------------------------------------------------


def encode_text(token_embeddings: Tensor, weights: ModelWeights, cfg: EncoderConfig) -> Tensor:
    """Encode a token-embedding sequence (L x d) to a unit-norm d-vector.

    Pools by averaging the token hidden states, so every token (including
    learnable prompt rows) contributes to the sentence embedding through the
    residual stream. Gradients flow through to the input embeddings even when
    the weights are frozen.
    """
    L = token_embeddings.shape[0]
    if L > cfg.max_tokens:
        raise ShapeError(f"sequence length {L} exceeds max_tokens {cfg.max_tokens}")
    x = ad.add(token_embeddings, ad.slice_rows(weights["text.pos"], 0, L))
    (x,) = _transformer_layers([x], weights, "text", cfg, window=1)
    pooled = ad.tmean(ad.layer_norm(x), axis=0)
    out = ad.matmul(_as_row(pooled), weights["text.proj"])
    return ad.l2_normalize(tsqueeze(out))


def _as_row(a: Tensor) -> Tensor:
    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return ad._node(a.data.reshape(1, -1), (a,), backward, "row")


def tsqueeze(a: Tensor) -> Tensor:
    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return ad._node(a.data.reshape(-1), (a,), backward, "squeeze")


# -- video encoder ----------------------------------------------------------------


def patchify(frame: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Split an H x W x C frame into (patches, patch_dim) rows."""
    p = cfg.patch_size
    h, w, c = frame.shape
    rows = []
    for i in range(0, h, p):
        for j in range(0, w, p):
            rows.append(frame[i : i + p, j : j + p].reshape(-1))
    return np.stack(rows)


def encode_video(frames, weights: ModelWeights, cfg: EncoderConfig, window=None):
    """Encode T pixel frames (each H x W x C in [0,1]) to T unit-norm d-vectors.

    A 2-D numpy array is treated as precomputed T x d features and is only
    l2-normalized (the transformer is bypassed).
    """
    if window is None:
        window = cfg.temporal_window
    if isinstance(frames, np.ndarray) and frames.ndim == 2:
        return ad.l2_normalize(Tensor(frames), axis=-1)
    frames = list(frames)
    if not frames:
        raise ShapeError("encode_video on an empty clip")
    if any(not (isinstance(f, np.ndarray) and f.ndim == 3) for f in frames):
        raise ShapeError("encode_video expects pixel frames (H x W x C) or a feature matrix")
    T = len(frames)
    if T > cfg.max_frames:
        raise ShapeError(f"clip length {T} exceeds max_frames {cfg.max_frames}")

    embedded = []
    for frame in frames:
        x = ad.matmul(Tensor(patchify(frame, cfg)), weights["vision.patch_proj"])
        x = ad.add(x, weights["vision.patch_bias"])
        x = ad.add(x, weights["vision.pos"])
        embedded.append(x)

    out_frames = _transformer_layers(embedded, weights, "vision", cfg, window)
    pooled = [ad.tmean(ad.layer_norm(f), axis=0) for f in out_frames]
    stacked = ad.stack_rows(pooled)
    return ad.l2_normalize(ad.matmul(stacked, weights["vision.proj"]), axis=-1)


def encode_image(frame: np.ndarray, weights: ModelWeights, cfg: EncoderConfig) -> Tensor:
    """Single-frame encoding (window degenerates); returns a unit d-vector."""
    return tsqueeze(encode_video([frame], weights, cfg, window=1))


# -- zero-shot scoring and weight interpolation -------------------------------------


def clip_zero_shot_probs(embedding, class_embeddings, temperature: float = 1.0) -> np.ndarray:
    """Softmax over scaled cosine similarities of one embedding against each class."""
    if len(class_embeddings) == 0:
        raise ValueError("clip_zero_shot_probs needs at least one class")
    e = embedding.data if isinstance(embedding, Tensor) else np.asarray(embedding, float)
    sims = np.array(
        [float(e @ (c.data if isinstance(c, Tensor) else np.asarray(c, float))) for c in class_embeddings]
    )
    z = temperature * sims
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def interpolate_weights(theta_orig: ModelWeights, theta_ft: ModelWeights, ratio: float) -> ModelWeights:
    """Elementwise (1-r)*orig + r*ft; endpoints return exact copies."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    names_a, names_b = theta_orig.names(), theta_ft.names()
    if names_a != names_b:
        missing = next(n for n in names_a + names_b if n not in names_a or n not in names_b)
        raise ValueError(f"weight sets are not interpolation-compatible: {missing!r}")
    out = {}
    for n in names_a:
        a, b = theta_orig[n].data, theta_ft[n].data
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for {n!r}: {a.shape} vs {b.shape}")
        if ratio == 0.0:
            out[n] = Tensor(a.copy())
        elif ratio == 1.0:
            out[n] = Tensor(b.copy())
        else:
            out[n] = Tensor((1.0 - ratio) * a + ratio * b)
    return ModelWeights(out)
