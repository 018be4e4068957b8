"""Three-stage training: contrastive pretraining of the toy encoders,
temporal fine-tuning of the video tower, and prompt-only training with every
other parameter frozen."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import encoders, prompts
from .autodiff import Tensor
from .data import Vocabulary, render_clip
from .encoders import EncoderConfig, ModelWeights
from .prompts import LossConfig, PromptPair


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.0
    batch_size: int = 64
    epochs: int = 30
    warmup_epochs: int = 1
    frames_per_clip: int = 16
    context_tokens: int = 64
    seed: int = 0
    early_stop_delta: float = 1e-4
    early_stop_patience: int = 5

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "frames_per_clip", "context_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear 0 -> base_lr ramp over warm-up, then half-cosine decay to 0."""
    if warmup_steps >= total_steps:
        raise ValueError("warmup_steps must be smaller than total_steps")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * (1.0 + math.cos(math.pi * progress)) / 2.0


class SGD:
    """Plain SGD with optional momentum over (name, tensor) parameter pairs."""

    def __init__(self, params, momentum: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = {i: np.zeros_like(p.data) for i, (_, p) in enumerate(self.params)}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float):
        for i, (_, p) in enumerate(self.params):
            if p.grad is None:
                continue
            if self.momentum:
                v = self.velocity[i]
                v *= self.momentum
                v += p.grad
                p.data -= lr * v
            else:
                p.data -= lr * p.grad


def weights_hash(weights: ModelWeights, exclude_prefixes=()) -> str:
    h = hashlib.sha256()
    for name in weights.names():
        if any(name.startswith(p) for p in exclude_prefixes):
            continue
        h.update(name.encode())
        h.update(weights[name].data.tobytes())
    return h.hexdigest()


def _diag_mean_log(logp: Tensor) -> Tensor:
    n = logp.shape[0]
    eye = Tensor(np.eye(n))
    return ad.scale(ad.tsum(ad.mul(logp, eye)), 1.0 / n)


def _log_softmax(logits: Tensor, axis: int) -> Tensor:
    return ad.log(ad.softmax(logits, axis=axis))


def contrastive_loss(image_emb: Tensor, text_emb: Tensor, temperature: float) -> Tensor:
    """Symmetric in-batch cross-entropy over scaled image-text cosine logits."""
    if image_emb.shape[0] < 2:
        raise ValueError("contrastive batch must have at least 2 pairs")
    logits = ad.scale(ad.matmul(image_emb, ad.transpose(text_emb)), temperature)
    img_to_txt = _diag_mean_log(_log_softmax(logits, axis=1))
    txt_to_img = _diag_mean_log(_log_softmax(logits, axis=0))
    return ad.scale(ad.add(img_to_txt, txt_to_img), -0.5)


def render_object_image(obj: str, synth_cfg, rng) -> np.ndarray:
    """Static single frame showing one object at a random position."""
    one_frame = type(synth_cfg)(
        verbs=synth_cfg.verbs,
        objects=synth_cfg.objects,
        frames_per_clip=1,
        frame_size=synth_cfg.frame_size,
        max_actions_per_clip=1,
        clips_per_class=1,
        sprite_size=synth_cfg.sprite_size,
        motion_span=synth_cfg.motion_span,
        seed=0,
    )
    verb = synth_cfg.verbs[0]  # motion is irrelevant in a single frame
    return render_clip([(verb, obj)], one_frame, rng)[0]


def pretrain_contrastive(classes, synth_cfg, cfg: TrainConfig, enc_cfg: EncoderConfig, vocab: Vocabulary):
    """Train both towers from scratch on (object image, "<verb> <object>") pairs.

    Verbs appear in the captions but carry no visual signal by design.
    Returns (weights, history).
    """
    if cfg.batch_size < 2:
        raise ValueError("contrastive pretraining needs batches of at least 2")
    weights = encoders.init_weights(enc_cfg, cfg.seed)
    weights.set_trainable(lambda name: True)
    opt = SGD(weights.trainable(), momentum=cfg.momentum)
    rng = np.random.RandomState(cfg.seed + 1)

    token_ids = [vocab.encode(c.name) for c in classes]
    batch = min(cfg.batch_size, len(classes))
    steps_per_epoch = max(1, len(classes) // batch)
    total = cfg.epochs * steps_per_epoch
    warmup = max(1, cfg.warmup_epochs * steps_per_epoch)

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(classes))
        for b in range(steps_per_epoch):
            idx = order[b * batch : (b + 1) * batch]
            if len(idx) < 2:
                continue
            images, texts = [], []
            for i in idx:
                frame = render_object_image(classes[i].object, synth_cfg, rng)
                images.append(encoders.encode_image(frame, weights, enc_cfg))
                texts.append(_encode_tokens(token_ids[i], weights, enc_cfg))
            loss = contrastive_loss(ad.stack_rows(images), ad.stack_rows(texts), enc_cfg.pretrain_temperature)
            if not np.isfinite(loss.data).all():
                raise FloatingPointError(f"non-finite pretraining loss at step {step}")
            lr = cosine_lr(step, total, warmup, cfg.learning_rate)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            history.append({"stage": "pretrain", "step": step, "lr": lr, "loss": loss.item()})
            step += 1
    weights.set_trainable(lambda name: False)
    return weights, history


def _encode_tokens(ids, weights, enc_cfg):
    rows = [ad.slice_rows(weights["text.embed"], i, i + 1) for i in ids]
    seq = ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    return encoders.encode_text(seq, weights, enc_cfg)


def finetune_temporal(theta_orig: ModelWeights, base_classes, base_samples, eval_class_names,
                      cfg: TrainConfig, enc_cfg: EncoderConfig, vocab: Vocabulary,
                      temperature: float = 10.0):
    """Fine-tune the video tower (window > 1) on a base multi-label action set.

    The text tower is frozen; base classes must be disjoint from every
    evaluation class. Returns (theta_ft, history).
    """
    base_names = {c.name for c in base_classes}
    overlap = base_names & set(eval_class_names)
    if overlap:
        raise ValueError(f"base classes overlap evaluation classes: {sorted(overlap)[:3]}")
    weights = theta_orig.copy()
    weights.set_trainable(lambda name: name.startswith("vision."))
    opt = SGD(weights.trainable(), momentum=cfg.momentum)
    rng = np.random.RandomState(cfg.seed + 2)

    # text tower is frozen: precompute class text embeddings as constants
    text_emb = np.stack(
        [_encode_tokens(vocab.encode(c.name), weights, enc_cfg).data for c in base_classes]
    )
    text_const = Tensor(text_emb)
    class_index = {c.id: i for i, c in enumerate(base_classes)}

    batch = min(cfg.batch_size, len(base_samples))
    steps_per_epoch = max(1, len(base_samples) // batch)
    total = cfg.epochs * steps_per_epoch
    warmup = max(1, cfg.warmup_epochs * steps_per_epoch)

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(base_samples))
        for b in range(steps_per_epoch):
            idx = order[b * batch : (b + 1) * batch]
            per_clip = []
            for i in idx:
                sample = base_samples[i]
                frames = encoders.encode_video(list(sample.frames), weights, enc_cfg)
                video = ad.l2_normalize(ad.tmean(frames, axis=0))
                logits = ad.scale(prompts.mv(text_const, video), temperature)
                y = np.zeros(len(base_classes))
                for cid in sample.labels:
                    y[class_index[cid]] = 1.0
                p = prompts.sigmoid(logits)
                eps = Tensor(np.full(len(base_classes), 1e-12))
                one = Tensor(np.ones(len(base_classes)))
                bce = ad.add(
                    ad.mul(Tensor(y), ad.log(ad.add(p, eps))),
                    ad.mul(Tensor(1.0 - y), ad.log(ad.add(ad.add(one, ad.scale(p, -1.0)), eps))),
                )
                per_clip.append(ad.scale(ad.tsum(bce), -1.0 / len(base_classes)))
            loss = ad.scale(ad.tsum(ad.stack_rows(per_clip)), 1.0 / len(per_clip))
            if not np.isfinite(loss.data).all():
                raise FloatingPointError(f"non-finite fine-tuning loss at step {step}")
            lr = cosine_lr(step, total, warmup, cfg.learning_rate)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            history.append({"stage": "finetune", "step": step, "lr": lr, "loss": loss.item()})
            step += 1
    weights.set_trainable(lambda name: False)
    return weights, history


def cache_video_features(samples, weights: ModelWeights, enc_cfg: EncoderConfig) -> dict:
    """Encode every clip once with frozen weights; returns {clip_id: T x d array}."""
    out = {}
    for s in samples:
        if s.features is not None:
            out[s.id] = encoders.encode_video(s.features, weights, enc_cfg).data
        else:
            out[s.id] = encoders.encode_video(list(s.frames), weights, enc_cfg).data
    return out


def train_prompts(weights: ModelWeights, train_targets, classes, split, vocab: Vocabulary,
                  cfg: TrainConfig, loss_cfg: LossConfig, enc_cfg: EncoderConfig,
                  feature_cache: dict | None = None):
    """Optimize only the positive/negative context matrices with everything frozen.

    train_targets: list of (VideoSample, label-id set) pairs whose labels must
    already be restricted to the seen side of the split.
    Returns (PromptPair, history).
    """
    seen_classes = sorted([c for c in classes if c.id in split.seen], key=lambda c: c.id)
    for sample, labels in train_targets:
        leaked = labels & split.unseen
        if leaked:
            raise ValueError(f"split leak: sample {sample.id!r} targets unseen class {sorted(leaked)[0]!r}")

    weights.set_trainable(lambda name: False)
    pair = PromptPair(cfg.context_tokens, enc_cfg.embed_dim, seed=cfg.seed)
    opt = SGD([("prompt.positive", pair.positive), ("prompt.negative", pair.negative)],
              momentum=cfg.momentum)
    rng = np.random.RandomState(cfg.seed + 3)

    if feature_cache is None:
        feature_cache = cache_video_features([s for s, _ in train_targets], weights, enc_cfg)
    class_index = {c.id: i for i, c in enumerate(seen_classes)}
    token_ids = [vocab.encode(c.name) for c in seen_classes]

    batch = min(cfg.batch_size, len(train_targets))
    steps_per_epoch = max(1, len(train_targets) // batch)
    total = cfg.epochs * steps_per_epoch
    warmup = max(1, cfg.warmup_epochs * steps_per_epoch)

    history = []
    step = 0
    best = float("inf")
    stall = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_targets))
        epoch_losses = []
        for b in range(steps_per_epoch):
            idx = order[b * batch : (b + 1) * batch]
            pos_emb = [
                encoders.encode_text(
                    prompts.assemble_class_prompt(pair.positive, ids, weights["text.embed"]),
                    weights, enc_cfg)
                for ids in token_ids
            ]
            neg_emb = [
                encoders.encode_text(
                    prompts.assemble_class_prompt(pair.negative, ids, weights["text.embed"]),
                    weights, enc_cfg)
                for ids in token_ids
            ]
            per_sample = []
            for i in idx:
                sample, labels = train_targets[i]
                video = Tensor(feature_cache[sample.id])
                y = np.zeros(len(seen_classes))
                for cid in labels:
                    y[class_index[cid]] = 1.0
                pos_agg, neg_agg = [], []
                for tp, tn in zip(pos_emb, neg_emb):
                    sp = ad.scale(prompts.mv(video, tp), loss_cfg.logit_scale)
                    sn = ad.scale(prompts.mv(video, tn), loss_cfg.logit_scale)
                    p_agg, n_agg = prompts.aggregate(sp, sn)
                    pos_agg.append(p_agg)
                    neg_agg.append(n_agg)
                per_sample.append(prompts.asymmetric_loss(pos_agg, neg_agg, y, loss_cfg))
            loss = ad.scale(ad.tsum(ad.stack_rows(per_sample)), 1.0 / len(per_sample))
            if not np.isfinite(loss.data).all():
                raise FloatingPointError(f"non-finite prompt loss at step {step}")
            lr = cosine_lr(step, total, warmup, cfg.learning_rate)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            epoch_losses.append(loss.item())
            history.append({"stage": "prompts", "step": step, "lr": lr, "loss": loss.item()})
            step += 1
        mean_loss = float(np.mean(epoch_losses))
        if best - mean_loss < cfg.early_stop_delta:
            stall += 1
            if stall >= cfg.early_stop_patience:
                break
        else:
            stall = 0
        best = min(best, mean_loss)
    return pair, history


def save_history(path, history):
    with open(path, "w") as fh:
        fh.write("# history v1\n")
        fh.write("stage|step|lr|loss\n")
        for rec in history:
            fh.write(f"{rec['stage']}|{rec['step']}|{rec['lr']!r}|{rec['loss']!r}\n")
