"""Command-line interface tests: config parsing and subcommand smoke runs on a
tiny configuration."""

import os

import numpy as np
import pytest

from dualprompt import cli
from dualprompt.cli import load_config, parse_and_dispatch
from dualprompt.data import charades_class_map_path


# -- config loading ---------------------------------------------------------------


def test_load_config_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.encoder.embed_dim > 0
    assert cfg.pretrain.learning_rate > 0


def test_load_config_file_and_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "seed = 3\n"
        "pretrain.learning_rate = 0.5\n"
        "encoder.embed_dim = 32\n"
    )
    cfg = load_config(str(path), overrides=[("pretrain.learning_rate", "0.25")])
    assert cfg.seed == 3
    assert cfg.pretrain.seed == 3  # seed fans out to every stage
    assert cfg.pretrain.learning_rate == 0.25  # overrides beat the file
    assert cfg.encoder.embed_dim == 32


def test_load_config_bare_key_fans_out(tmp_path):
    cfg = load_config(overrides=[("lr", "0.125"), ("epochs", "7")])
    for stage in (cfg.pretrain, cfg.finetune, cfg.prompt):
        assert stage.learning_rate == 0.125
        assert stage.epochs == 7


def test_load_config_unknown_key_named():
    with pytest.raises(ValueError, match="pretrain.lerning_rate"):
        load_config(overrides=[("pretrain.lerning_rate", "0.1")])
    with pytest.raises(ValueError, match="bogus"):
        load_config(overrides=[("bogus", "1")])
    with pytest.raises(ValueError, match="nosection"):
        load_config(overrides=[("nosection.lr", "1")])


def test_load_config_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/run.cfg")


def test_load_config_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("just a line without equals\n")
    with pytest.raises(ValueError, match="key=value"):
        load_config(str(path))


def test_load_config_revalidates_sections():
    with pytest.raises(ValueError):
        load_config(overrides=[("encoder.embed_dim", "15")])  # not divisible by heads


def test_run_config_items_are_dotted():
    cfg = load_config()
    keys = dict(cfg.items())
    assert "seed" in keys
    assert "encoder.embed_dim" in keys
    assert "prompt.learning_rate" in keys


# -- dispatch errors -----------------------------------------------------------------


def test_dispatch_reports_errors_on_stderr(tmp_path, capsys):
    rc = parse_and_dispatch(["pretrain", "--run-dir", str(tmp_path / "nope")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- subcommand smoke test -------------------------------------------------------------


TINY = [
    ("seed", "0"),
    ("synth.frames_per_clip", "4"),
    ("synth.clips_per_class", "2"),
    ("synth.max_actions_per_clip", "1"),
    ("encoder.embed_dim", "16"),
    ("encoder.num_layers", "1"),
    ("encoder.num_heads", "2"),
    ("encoder.patch_size", "8"),
    ("encoder.max_tokens", "16"),
    ("epochs", "2"),
    ("warmup_epochs", "0"),
    ("lr", "0.05"),
    ("batch", "8"),
    ("context_tokens", "2"),
]


def _cfg_flags():
    flat = []
    for k, v in TINY:
        flat.extend(["--set", f"{k}={v}"])
    return flat


def _run(args, configurable=True):
    rc = parse_and_dispatch(args + (_cfg_flags() if configurable else []))
    assert rc == 0, f"command failed: {args}"


@pytest.mark.slow
def test_cli_full_workflow(tmp_path, capsys):
    run = str(tmp_path / "run")
    _run(["synth-data", "--run-dir", run])
    assert os.path.exists(os.path.join(run, "resolved_config.txt"))
    for stem in ("eval", "base"):
        for suffix in ("classes.txt", "manifest.txt", "clips.npz"):
            assert os.path.exists(os.path.join(run, "data", f"{stem}_{suffix}"))

    _run(["pretrain", "--run-dir", run])
    orig = os.path.join(run, "checkpoints", "theta_orig.ckpt")
    assert os.path.exists(orig)

    _run(["finetune", "--run-dir", run])
    ft = os.path.join(run, "checkpoints", "theta_ft.ckpt")
    assert os.path.exists(ft)

    patched = os.path.join(run, "checkpoints", "theta_patched.ckpt")
    _run(["patch", "--orig", orig, "--ft", ft, "--ratio", "0.5", "--out", patched],
         configurable=False)
    assert os.path.exists(patched)

    split_path = os.path.join(run, "splits", "random_seed11.json")
    _run(["split", "--kind", "random", "--fraction", "0.5", "--seed", "11",
          "--class-map", os.path.join(run, "data", "eval_classes.txt"),
          "--out", split_path], configurable=False)
    assert os.path.exists(split_path)

    _run(["train-prompts", "--run-dir", run, "--weights", patched, "--split", split_path])
    prompt_path = os.path.join(run, "checkpoints", "prompts_random.ckpt")
    assert os.path.exists(prompt_path)

    report_path = os.path.join(run, "metrics", "report_random.txt")
    _run(["eval", "--weights", patched, "--prompts", prompt_path, "--split", split_path,
          "--data", os.path.join(run, "data"), "--out", report_path])
    assert os.path.exists(report_path)

    capsys.readouterr()
    _run(["report", "--run-dir", run], configurable=False)
    out = capsys.readouterr().out
    assert "== mAP summary ==" in out
    assert "== splits ==" in out


def test_cli_import_charades_bundled(capsys):
    rc = parse_and_dispatch(["import-charades", "--class-map", str(charades_class_map_path())])
    assert rc == 0
    out = capsys.readouterr().out
    assert "157" in out


def test_cli_patch_rejects_bad_ratio(tmp_path, capsys):
    cfg = cli.load_config(overrides=[("encoder.embed_dim", "16"), ("encoder.num_layers", "1"),
                                     ("encoder.num_heads", "2")])
    from dualprompt.encoders import init_weights

    enc = cfg.encoder
    enc.vocab_size = 4
    a, b = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    init_weights(enc, 0).save(a)
    init_weights(enc, 1).save(b)
    rc = parse_and_dispatch(["patch", "--orig", a, "--ft", b, "--ratio", "2.0",
                             "--out", str(tmp_path / "o.ckpt")])
    assert rc == 1
    assert "ratio" in capsys.readouterr().err
