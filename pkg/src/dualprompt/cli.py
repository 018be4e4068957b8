"""Command-line pipeline orchestration.

Subcommands cover the full workflow: synthesize data, pretrain the two
towers, temporally fine-tune the vision tower, interpolate ("patch") the
weights, build class splits, train the dual prompts, evaluate, and render
report tables. Each run owns a run directory with a fixed layout::

    <run>/resolved_config.txt
    <run>/data/         class maps, manifests, rendered clips
    <run>/checkpoints/  weight and prompt checkpoints
    <run>/splits/       split JSON files
    <run>/metrics/      evaluation reports
    <run>/logs/         per-stage loss histories

The default run root comes from the DUALPROMPT_RUN_ROOT environment
variable (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import evaluation, pipeline, prompts, splits, train
from .data import (
    SynthConfig,
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
    VideoSample,
)
from .encoders import EncoderConfig, ModelWeights, interpolate_weights
from .prompts import LossConfig, PromptPair
from .train import TrainConfig

RUN_SUBDIRS = ("data", "checkpoints", "splits", "metrics", "logs")


# -- run configuration -------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    """Fully-resolved configuration for one run: a global seed plus one config
    object per concern. Keys in config files are dotted, e.g.
    ``encoder.embed_dim`` or ``pretrain.learning_rate``; bare keys such as
    ``learning_rate`` apply to all three training stages."""

    seed: int = 0
    encoder: EncoderConfig = None
    synth: SynthConfig = None
    pretrain: TrainConfig = None
    finetune: TrainConfig = None
    prompt: TrainConfig = None
    loss: LossConfig = None

    def __post_init__(self):
        self.encoder = self.encoder or EncoderConfig()
        self.synth = self.synth or SynthConfig()
        self.pretrain = self.pretrain or TrainConfig()
        self.finetune = self.finetune or TrainConfig()
        self.prompt = self.prompt or TrainConfig()
        self.loss = self.loss or LossConfig()

    def sections(self):
        return {
            "encoder": self.encoder,
            "synth": self.synth,
            "pretrain": self.pretrain,
            "finetune": self.finetune,
            "prompt": self.prompt,
            "loss": self.loss,
        }

    def items(self):
        yield "seed", self.seed
        for section, cfg in self.sections().items():
            for f in dataclasses.fields(cfg):
                yield f"{section}.{f.name}", getattr(cfg, f.name)


# Bare keys accepted in config files and as CLI overrides; each fans out to
# every training stage.
_STAGE_ALIASES = {
    "lr": "learning_rate",
    "learning_rate": "learning_rate",
    "batch": "batch_size",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "momentum": "momentum",
    "context_tokens": "context_tokens",
    "frames": "frames_per_clip",
    "frames_per_clip": "frames_per_clip",
    "warmup_epochs": "warmup_epochs",
}


def _coerce(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if current is None:  # optional numeric fields (e.g. per-tower depths)
        if value.lower() in ("none", ""):
            return None
        try:
            return int(value)
        except ValueError:
            return float(value)
    if isinstance(current, tuple):
        return tuple(v for v in value.split(",") if v)
    return value


def load_config(path=None, overrides=None) -> RunConfig:
    """Merge a key=value config file with command-line overrides (which win).

    Unknown or mistyped keys raise ValueError naming the key.
    """
    cfg = RunConfig()
    entries = []
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                entries.append((key.strip(), value.strip()))
    entries.extend(overrides or [])

    sections = cfg.sections()
    for key, value in entries:
        if key == "seed":
            cfg.seed = int(value)
            for stage in ("pretrain", "finetune", "prompt"):
                getattr(cfg, stage).seed = cfg.seed
            continue
        if "." in key:
            section, _, field = key.partition(".")
            if section not in sections:
                raise ValueError(f"unknown config section {section!r} in key {key!r}")
            target = sections[section]
            if not any(f.name == field for f in dataclasses.fields(target)):
                raise ValueError(f"unknown config key {key!r}")
            setattr(target, field, _coerce(value, getattr(target, field)))
        elif key in _STAGE_ALIASES:
            field = _STAGE_ALIASES[key]
            for stage in ("pretrain", "finetune", "prompt"):
                target = getattr(cfg, stage)
                setattr(target, field, _coerce(value, getattr(target, field)))
        else:
            raise ValueError(f"unknown config key {key!r}")
    for section in sections.values():
        if hasattr(section, "__post_init__"):
            section.__post_init__()
    return cfg


def _init_run_dir(run_dir: str, cfg: RunConfig):
    for sub in RUN_SUBDIRS:
        os.makedirs(os.path.join(run_dir, sub), exist_ok=True)
    with open(os.path.join(run_dir, "resolved_config.txt"), "w") as fh:
        for key, value in cfg.items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={value}\n")


def _run_root():
    return os.environ.get("DUALPROMPT_RUN_ROOT", "runs")


def _p(run_dir, *parts):
    return os.path.join(run_dir, *parts)


# -- clip containers ----------------------------------------------------------


def _save_clips(path, samples):
    payload = {"clip/" + s.id: np.asarray(s.frames, dtype=np.float64) for s in samples}
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def _load_clips(path, manifest):
    samples = []
    with np.load(path, allow_pickle=False) as z:
        for key in sorted(z.files):
            cid = key[5:]
            samples.append(VideoSample(id=cid, labels=set(manifest[cid]), frames=z[key]))
    return samples


def _load_dataset(data_dir, stem):
    classes, _ = load_class_map(os.path.join(data_dir, f"{stem}_classes.txt"))
    manifest = load_manifest(os.path.join(data_dir, f"{stem}_manifest.txt"))
    samples = _load_clips(os.path.join(data_dir, f"{stem}_clips.npz"), manifest)
    return classes, samples


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"required input file not found: {path}")
    return path


def _vocab_from_run(run_dir):
    eval_classes, _ = load_class_map(_p(run_dir, "data", "eval_classes.txt"))
    base_classes, _ = load_class_map(_p(run_dir, "data", "base_classes.txt"))
    return eval_classes, base_classes, Vocabulary.from_classes(eval_classes + base_classes)


# -- subcommands --------------------------------------------------------------


def cmd_synth_data(args):
    cfg = load_config(args.config, args.set)
    _init_run_dir(args.run_dir, cfg)
    synth_eval, synth_base = pipeline.default_synth_configs(
        cfg.seed, frames_per_clip=cfg.synth.frames_per_clip,
        clips_per_class=cfg.synth.clips_per_class,
        max_actions=cfg.synth.max_actions_per_clip)
    for stem, synth_cfg in (("eval", synth_eval), ("base", synth_base)):
        classes, samples = generate_synthetic_dataset(synth_cfg)
        save_class_map(_p(args.run_dir, "data", f"{stem}_classes.txt"), classes)
        save_manifest(_p(args.run_dir, "data", f"{stem}_manifest.txt"), samples)
        _save_clips(_p(args.run_dir, "data", f"{stem}_clips.npz"), samples)
        print(f"{stem}: {len(classes)} classes, {len(samples)} clips")
    return 0


def _encoder_cfg(cfg: RunConfig, vocab):
    enc = dataclasses.replace(cfg.encoder)
    enc.vocab_size = len(vocab)
    enc.max_frames = max(enc.max_frames, cfg.synth.frames_per_clip)
    return enc


def cmd_pretrain(args):
    cfg = load_config(args.config, args.set)
    eval_classes, base_classes, vocab = _vocab_from_run(args.run_dir)
    enc = _encoder_cfg(cfg, vocab)
    synth_eval, _ = pipeline.default_synth_configs(cfg.seed)
    weights, history = train.pretrain_contrastive(
        eval_classes + base_classes, synth_eval, cfg.pretrain, enc, vocab)
    weights.save(_p(args.run_dir, "checkpoints", "theta_orig.ckpt"))
    train.save_history(_p(args.run_dir, "logs", "pretrain_history.txt"), history)
    print(f"pretrained {len(weights.names())} tensors; final loss "
          f"{history[-1]['loss']:.4f}")
    return 0


def cmd_finetune(args):
    cfg = load_config(args.config, args.set)
    eval_classes, base_classes, vocab = _vocab_from_run(args.run_dir)
    enc = _encoder_cfg(cfg, vocab)
    _, base_samples = _load_dataset(_p(args.run_dir, "data"), "base")
    theta_orig = ModelWeights.load(
        _require(_p(args.run_dir, "checkpoints", "theta_orig.ckpt")))
    theta_ft, history = train.finetune_temporal(
        theta_orig, base_classes, base_samples, {c.name for c in eval_classes},
        cfg.finetune, enc, vocab)
    theta_ft.save(_p(args.run_dir, "checkpoints", "theta_ft.ckpt"))
    train.save_history(_p(args.run_dir, "logs", "finetune_history.txt"), history)
    print(f"fine-tuned on {len(base_samples)} clips; final loss "
          f"{history[-1]['loss']:.4f}")
    return 0


def cmd_patch(args):
    theta_orig = ModelWeights.load(_require(args.orig))
    theta_ft = ModelWeights.load(_require(args.ft))
    patched = interpolate_weights(theta_orig, theta_ft, args.ratio)
    patched.save(args.out)
    print(f"wrote interpolated checkpoint (ratio {args.ratio}) to {args.out}")
    return 0


_SPLIT_MAKERS = {
    "random": splits.make_random_split,
    "verb": splits.make_verb_split,
    "object": splits.make_object_split,
}


def cmd_split(args):
    classes, report = load_class_map(_require(args.class_map))
    split = _SPLIT_MAKERS[args.kind](classes, fraction=args.fraction, seed=args.seed)
    out = args.out or f"split_{args.kind}_{args.seed}.json"
    split.save(out)
    stats = splits.split_stats(split, classes)
    print("split|unseen verbs|unseen objects|unseen classes")
    print(stats.table_row())
    print(f"class map: {report.num_classes} classes, {report.num_verbs} verbs, "
          f"{report.num_objects} objects")
    print(f"wrote {out}")
    return 0


def cmd_train_prompts(args):
    cfg = load_config(args.config, args.set)
    eval_classes, base_classes, vocab = _vocab_from_run(args.run_dir)
    enc = _encoder_cfg(cfg, vocab)
    _, eval_samples = _load_dataset(_p(args.run_dir, "data"), "eval")
    weights = ModelWeights.load(_require(args.weights))
    weights.set_trainable(lambda name: False)
    split = splits.SplitSpec.load(_require(args.split))

    feat_path = _p(args.run_dir, "checkpoints", "eval_features.npz")
    if os.path.exists(feat_path):
        cache = load_frame_features(feat_path)
    else:
        cache = train.cache_video_features(eval_samples, weights, enc)
        save_frame_features(feat_path, cache)

    train_videos, _ = pipeline.instance_split(eval_samples, args.test_fraction, cfg.seed + 7)
    targets = splits.restrict_targets_to_seen(train_videos, split)
    pair, history = train.train_prompts(
        weights, targets, eval_classes, split, vocab, cfg.prompt, cfg.loss, enc,
        feature_cache=cache)
    out = args.out or _p(args.run_dir, "checkpoints", f"prompts_{split.kind}.ckpt")
    pair.save(out, cfg.loss)
    train.save_history(
        _p(args.run_dir, "logs", f"prompts_{split.kind}_history.txt"), history)
    print(f"trained {pair.num_parameters()} prompt parameters on {len(targets)} clips; "
          f"wrote {out}")
    return 0


def cmd_eval(args):
    cfg = load_config(args.config, args.set)
    classes, _ = load_class_map(_require(os.path.join(args.data, "eval_classes.txt")))
    manifest = load_manifest(_require(os.path.join(args.data, "eval_manifest.txt")))
    samples = _load_clips(_require(os.path.join(args.data, "eval_clips.npz")), manifest)
    vocab_path = os.path.join(args.data, "vocab.txt")
    if os.path.exists(vocab_path):
        vocab = Vocabulary.load(vocab_path)
    else:
        base_path = os.path.join(args.data, "base_classes.txt")
        extra = load_class_map(base_path)[0] if os.path.exists(base_path) else []
        vocab = Vocabulary.from_classes(classes + list(extra))
    enc = _encoder_cfg(cfg, vocab)

    weights = ModelWeights.load(_require(args.weights))
    weights.set_trainable(lambda name: False)
    pair, loss_cfg = PromptPair.load(_require(args.prompts))
    loss_cfg = loss_cfg or cfg.loss
    split = splits.SplitSpec.load(_require(args.split))

    _, test_videos = pipeline.instance_split(samples, args.test_fraction, cfg.seed + 7)
    cache = train.cache_video_features(test_videos, weights, enc)
    pos_emb, neg_emb = pipeline.encode_class_embeddings(pair, classes, vocab, weights, enc)
    pos, neg = pipeline.score_dataset(test_videos, cache, pos_emb, neg_emb,
                                      logit_scale=loss_cfg.logit_scale)
    probs = prompts.pairwise_probability(pos, neg)
    labels = pipeline.label_matrix(test_videos, classes)
    buckets = splits.subset_partition(split, classes)
    report = evaluation.build_report(probs, labels, [c.id for c in classes],
                                     split=split, buckets=buckets)
    out = args.out or f"report_{split.kind}.txt"
    report.save(out)
    print(f"mAP GZSL={report.map_gzsl:.4f} ZSL={report.map_zsl:.4f} "
          f"seen={report.map_seen:.4f}; wrote {out}")
    return 0


def cmd_report(args):
    metrics_dir = _p(args.run_dir, "metrics")
    split_dir = _p(args.run_dir, "splits")
    class_map = _p(args.run_dir, "data", "eval_classes.txt")

    if os.path.isdir(split_dir) and os.path.exists(class_map):
        classes, _ = load_class_map(class_map)
        rows = []
        for name in sorted(os.listdir(split_dir)):
            if name.endswith(".json"):
                split = splits.SplitSpec.load(os.path.join(split_dir, name))
                rows.append(splits.split_stats(split, classes).table_row())
        if rows:
            print("== splits ==")
            print("split|unseen verbs|unseen objects|unseen classes")
            for row in rows:
                print(row)

    if not os.path.isdir(metrics_dir):
        print(f"no metrics directory at {metrics_dir}")
        return 1
    summary, buckets = [], []
    for name in sorted(os.listdir(metrics_dir)):
        if not name.endswith(".txt"):
            continue
        kind = name[len("report_"):-len(".txt")] if name.startswith("report_") else name
        for section, ident, metric, value in evaluation.EvalReport.load_rows(
                os.path.join(metrics_dir, name)):
            if section == "summary":
                summary.append(f"{kind}|{ident}|{metric}|{float(value):.4f}")
            elif section == "buckets" and metric == "mAP":
                buckets.append(f"{kind}|{ident}|{float(value):.4f}")
    print("== mAP summary ==")
    print("split|subset|metric|value")
    for row in summary:
        print(row)
    if buckets:
        print("== compositional buckets ==")
        print("split|bucket|mAP")
        for row in buckets:
            print(row)
    return 0


def cmd_import_charades(args):
    path = args.class_map or charades_class_map_path()
    classes, report = load_class_map(_require(str(path)))
    print(f"classes={report.num_classes} verbs={report.num_verbs} "
          f"objects={report.num_objects} verb+object={report.num_verb_object} "
          f"verb-only={report.num_verb_only}")
    if args.annotations:
        annotations, warnings = load_charades_annotations(_require(args.annotations), classes)
        print(f"{len(annotations)} annotated clips, {len(warnings)} warnings")
        for w in warnings[:10]:
            print(f"  warning: {w}")
    if args.out:
        save_class_map(args.out, classes)
        print(f"wrote normalized class map to {args.out}")
    return 0


# -- argument parsing ----------------------------------------------------------


def _add_common(sub, run_dir=True):
    if run_dir:
        sub.add_argument("--run-dir", default=os.path.join(_run_root(), "default"),
                         help="run directory (default: $DUALPROMPT_RUN_ROOT/default)")
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--set", action="append", default=[], type=_parse_override,
                     metavar="KEY=VALUE", help="config override; wins over the file")
    sub.add_argument("--lr", dest="set", action="append", type=_lr_override,
                     metavar="LR", help="shorthand for --set lr=LR")


def _parse_override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _lr_override(text):
    return ("lr", text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dualprompt",
        description="Zero-shot multi-label action recognition with dual prompts.")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth-data", help="generate the synthetic datasets")
    _add_common(s)
    s.set_defaults(func=cmd_synth_data)

    s = subs.add_parser("pretrain", help="contrastive pretraining of both towers")
    _add_common(s)
    s.set_defaults(func=cmd_pretrain)

    s = subs.add_parser("finetune", help="temporal fine-tuning of the vision tower")
    _add_common(s)
    s.set_defaults(func=cmd_finetune)

    s = subs.add_parser("patch", help="interpolate original and fine-tuned weights")
    s.add_argument("--orig", required=True)
    s.add_argument("--ft", required=True)
    s.add_argument("--ratio", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_patch)

    s = subs.add_parser("split", help="build a class split and print its stats")
    s.add_argument("--kind", choices=sorted(_SPLIT_MAKERS), required=True)
    s.add_argument("--fraction", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--class-map", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_split)

    s = subs.add_parser("train-prompts", help="train the dual prompt pair")
    _add_common(s)
    s.add_argument("--weights", required=True, help="frozen (patched) checkpoint")
    s.add_argument("--split", required=True, help="split JSON file")
    s.add_argument("--test-fraction", type=float, default=0.3)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_train_prompts)

    s = subs.add_parser("eval", help="score a dataset and write the metric report")
    _add_common(s, run_dir=False)
    s.add_argument("--weights", required=True)
    s.add_argument("--prompts", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--data", required=True, help="data directory from synth-data")
    s.add_argument("--test-fraction", type=float, default=0.3)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = subs.add_parser("report", help="render stored metrics as delimited tables")
    s.add_argument("--run-dir", default=os.path.join(_run_root(), "default"))
    s.set_defaults(func=cmd_report)

    s = subs.add_parser("import-charades", help="validate class map and annotations")
    s.add_argument("--class-map", default=None,
                   help="defaults to the bundled Charades-style map")
    s.add_argument("--annotations", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_import_charades)
    return parser


def parse_and_dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return parse_and_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
