"""Dual positive/negative prompt learning: class-prompt assembly, per-frame
similarity scoring, class-specific frame aggregation, the prediction rule,
and the asymmetric loss."""

from __future__ import annotations

from dataclasses import dataclass, asdict
import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import encoders
from .encoders import EncoderConfig, ModelWeights

PROMPT_CHECKPOINT_VERSION = "prompts-v1"


@dataclass
class LossConfig:
    gamma_plus: float = 1.0
    gamma_minus: float = 2.0
    clip_margin: float = 0.05
    logit_scale: float = 1.0

    def __post_init__(self):
        if self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ValueError("focusing exponents must be nonnegative")
        if not 0.0 <= self.clip_margin < 1.0:
            raise ValueError("clip_margin must lie in [0, 1)")
        if self.logit_scale <= 0:
            raise ValueError("logit_scale must be positive")


class PromptPair:
    """The learnable positive and negative context matrices (M x d each).

    These are the only trainable tensors during prompt training.
    """

    def __init__(self, context_len: int, embed_dim: int, seed: int = 0, init_std: float = 0.02):
        rng = np.random.RandomState(seed)
        self.context_len = context_len
        self.embed_dim = embed_dim
        self.seed = seed
        self.positive = Tensor(rng.normal(0.0, init_std, (context_len, embed_dim)), requires_grad=True)
        self.negative = Tensor(rng.normal(0.0, init_std, (context_len, embed_dim)), requires_grad=True)

    def parameters(self):
        return [self.positive, self.negative]

    def num_parameters(self):
        return 2 * self.context_len * self.embed_dim

    def save(self, path, loss_cfg: LossConfig | None = None):
        meta = json.dumps(
            {
                "version": PROMPT_CHECKPOINT_VERSION,
                "seed": self.seed,
                "loss_config": asdict(loss_cfg) if loss_cfg else None,
            }
        )
        with open(path, "wb") as fh:
            np.savez(
                fh,
                meta=np.frombuffer(meta.encode(), dtype=np.uint8),
                positive=self.positive.data,
                negative=self.negative.data,
            )

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta["version"] != PROMPT_CHECKPOINT_VERSION:
                raise ValueError(f"unsupported prompt checkpoint version {meta['version']!r}")
            pos, neg = z["positive"], z["negative"]
        pair = cls.__new__(cls)
        pair.context_len, pair.embed_dim = pos.shape
        pair.seed = meta["seed"]
        pair.positive = Tensor(pos, requires_grad=True)
        pair.negative = Tensor(neg, requires_grad=True)
        loss_cfg = LossConfig(**meta["loss_config"]) if meta["loss_config"] else None
        return pair, loss_cfg


def assemble_class_prompt(context: Tensor, token_ids, embedding_table: Tensor) -> Tensor:
    """Concatenate the learnable context rows with the class-name token embeddings."""
    if len(token_ids) == 0:
        raise ValueError("empty class name")
    rows = [ad.slice_rows(embedding_table, i, i + 1) for i in token_ids]
    tokens = ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    if context.shape[0] == 0:
        return tokens
    return ad.concat([context, tokens], axis=0)


class ScoreSheet:
    """Per-frame positive/negative logits (classes x frames) and their aggregates."""

    def __init__(self, pos_frame, neg_frame, pos_agg, neg_agg):
        self.pos_frame = pos_frame
        self.neg_frame = neg_frame
        self.pos_agg = pos_agg
        self.neg_agg = neg_agg

    def positives(self) -> np.ndarray:
        return np.array([t.item() for t in self.pos_agg])

    def negatives(self) -> np.ndarray:
        return np.array([t.item() for t in self.neg_agg])


def encode_class_prompts(prompt_pair, classes, vocab, weights, cfg):
    """Encode [context, class tokens] for every class with both contexts,
    yielding positive and negative text embeddings per class."""
    pos, neg = [], []
    for cls in classes:
        ids = vocab.encode(cls.name)
        pos.append(encoders.encode_text(assemble_class_prompt(prompt_pair.positive, ids, weights["text.embed"]), weights, cfg))
        neg.append(encoders.encode_text(assemble_class_prompt(prompt_pair.negative, ids, weights["text.embed"]), weights, cfg))
    return pos, neg


def score_frames(frame_embeddings: Tensor, prompt_pair, classes, vocab, weights: ModelWeights,
                 cfg: EncoderConfig, logit_scale: float = 1.0, negative_weights: str = "positive") -> ScoreSheet:
    """Score each class against each frame and aggregate over the frame axis.

    frame_embeddings: T x d tensor of unit-norm frame vectors.
    """
    if not classes:
        raise ValueError("score_frames needs at least one class")
    pos_emb, neg_emb = encode_class_prompts(prompt_pair, classes, vocab, weights, cfg)
    pos_frame, neg_frame, pos_agg, neg_agg = [], [], [], []
    for tp, tn in zip(pos_emb, neg_emb):
        sp = ad.scale(mv(frame_embeddings, tp), logit_scale)
        sn = ad.scale(mv(frame_embeddings, tn), logit_scale)
        ap_, an_ = aggregate(sp, sn, negative_weights=negative_weights)
        pos_frame.append(sp)
        neg_frame.append(sn)
        pos_agg.append(ap_)
        neg_agg.append(an_)
    return ScoreSheet(pos_frame, neg_frame, pos_agg, neg_agg)


def mv(matrix: Tensor, vector: Tensor) -> Tensor:
    """Matrix @ vector giving a 1-D tensor (rows are unit, so this is cosine)."""
    return ad.tsum(ad.mul(matrix, ad._broadcast_row(vector, matrix.shape[0])), axis=1)


def aggregate(pos_logits: Tensor, neg_logits: Tensor, negative_weights: str = "positive"):
    """Softmax-weighted pooling of per-frame logits.

    The pooling weights come from the positive logits; the negative aggregate
    reuses those positive weights (the literal reading of the method), unless
    negative_weights="negative" selects the ablation variant.
    """
    if pos_logits.shape != neg_logits.shape:
        raise ad.ShapeError(f"logit shapes differ: {pos_logits.shape} vs {neg_logits.shape}")
    if negative_weights not in ("positive", "negative"):
        raise ValueError(f"unknown negative_weights mode {negative_weights!r}")
    w = ad.softmax(pos_logits, axis=-1)
    pos = ad.tsum(ad.mul(w, pos_logits))
    if negative_weights == "negative":
        w_neg = ad.softmax(neg_logits, axis=-1)
        neg = ad.tsum(ad.mul(w_neg, neg_logits))
    else:
        neg = ad.tsum(ad.mul(w, neg_logits))
    return pos, neg


def predict(pos_scores: np.ndarray, neg_scores: np.ndarray) -> set:
    """Class j is predicted iff its positive score strictly exceeds the negative."""
    pos_scores = np.asarray(pos_scores, float)
    neg_scores = np.asarray(neg_scores, float)
    if pos_scores.shape != neg_scores.shape:
        raise ValueError(f"score shapes differ: {pos_scores.shape} vs {neg_scores.shape}")
    return {int(j) for j in np.nonzero(pos_scores > neg_scores)[0]}


def pairwise_probability(pos, neg):
    """Two-way softmax p = exp(S+) / (exp(S+) + exp(S-)), computed stably."""
    pos = np.asarray(pos, float)
    neg = np.asarray(neg, float)
    return 1.0 / (1.0 + np.exp(-(pos - neg)))


def asymmetric_loss(pos_agg, neg_agg, targets, cfg: LossConfig) -> Tensor:
    """Asymmetric focal-style loss over per-class (S+, S-) pairs.

    p_j is the two-way softmax of (S+_j, S-_j); negatives use the margin-shifted
    q_j = max(p_j - m, 0). Positive term (1-p)^g+ log p, negative term q^g- log(1-q),
    averaged over classes.
    """
    targets = np.asarray(targets, float)
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must be binary")
    pos = ad.stack_rows(pos_agg) if isinstance(pos_agg, list) else pos_agg
    neg = ad.stack_rows(neg_agg) if isinstance(neg_agg, list) else neg_agg
    if pos.shape[0] != neg.shape[0] or pos.shape[0] != targets.size:
        raise ValueError("score/target lengths differ")
    # two-way softmax per class: p = sigmoid(S+ - S-)
    delta = ad.add(pos, ad.scale(neg, -1.0))
    p = sigmoid(delta)
    eps = 1e-12
    terms = []
    one = Tensor(np.ones(targets.size))
    not_p = ad.add(one, ad.scale(p, -1.0))
    log_p = ad.log(ad.add(p, Tensor(np.full(targets.size, eps))))
    q = ad.relu(ad.add(p, Tensor(np.full(targets.size, -cfg.clip_margin))))
    not_q = ad.add(one, ad.scale(q, -1.0))
    log_not_q = ad.log(ad.add(not_q, Tensor(np.full(targets.size, eps))))

    pos_w = ad.power(not_p, cfg.gamma_plus) if cfg.gamma_plus != 0 else one
    neg_w = ad.power(q, cfg.gamma_minus) if cfg.gamma_minus != 0 else one
    y = Tensor(targets)
    not_y = Tensor(1.0 - targets)
    pos_term = ad.mul(y, ad.mul(pos_w, log_p))
    neg_term = ad.mul(not_y, ad.mul(neg_w, log_not_q))
    total = ad.tsum(ad.add(pos_term, neg_term))
    return ad.scale(total, -1.0 / targets.size)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return ((a, g * out_data * (1.0 - out_data)),)

    return ad._node(out_data, (a,), backward, "sigmoid")
