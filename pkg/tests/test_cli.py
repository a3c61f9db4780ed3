import json

import pytest

from minis2st.cli import (
    UsageError,
    _coerce,
    _read_config_file,
    main,
    read_token_file,
    write_token_file,
)
from minis2st.corpus import ParseError, read_manifest
from minis2st.training import CheckpointState, save_checkpoint


# ------------------------------------------------------------- exit codes


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["gen-corpus", "--help"]) == 0
    capsys.readouterr()


def test_missing_command_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["filter", "--bogus", "x"]) == 1
    capsys.readouterr()


def test_missing_input_file_exits_two(tmp_path, capsys):
    code = main(["filter", "--in", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "out.jsonl")])
    assert code == 2
    assert "missing file" in capsys.readouterr().err


def test_garbage_checkpoint_exits_two(tmp_path, capsys):
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint at all")
    code = main(["tokenize", "--ckpt", str(junk),
                 "--in", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "t")])
    assert code == 2
    capsys.readouterr()


def test_wrong_checkpoint_kind_exits_four(tmp_path, capsys):
    ckpt = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, CheckpointState(kind="model", config={}, step=0, tensors={}))
    code = main(["tokenize", "--ckpt", str(ckpt),
                 "--in", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "t")])
    assert code == 4
    assert "version mismatch" in capsys.readouterr().err


def test_eval_requires_exactly_one_reference_source(tmp_path, capsys):
    hyp = tmp_path / "h.tok"
    write_token_file(hyp, [("u0", [1, 2])])
    assert main(["eval", "--hyp", str(hyp), "--out-dir", str(tmp_path)]) == 1
    assert main(["eval", "--hyp", str(hyp), "--ref", "a", "--ref-manifest", "b",
                 "--out-dir", str(tmp_path)]) == 1
    capsys.readouterr()


# ------------------------------------------------------------------ coerce


def test_coerce_booleans():
    for text in ("1", "true", "Yes", "ON"):
        assert _coerce(text, True) is True
    for text in ("0", "false", "No", "OFF"):
        assert _coerce(text, True) is False
    with pytest.raises(UsageError):
        _coerce("maybe", True)


def test_coerce_follows_default_type():
    assert _coerce("42", 7) == 42
    assert _coerce("2.5", 1.0) == 2.5
    assert _coerce("2", 1.0) == 2.0
    assert _coerce("hello", "s") == "hello"


# ------------------------------------------------------------- config files


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\n\npairs = 12\nnoise_std=0.1\n")
    assert _read_config_file(cfg) == {"pairs": "12", "noise_std": "0.1"}


def test_config_file_rejects_malformed_line(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("pairs=3\njust some words\n")
    with pytest.raises(UsageError, match=":2:"):
        _read_config_file(cfg)


def test_layering_defaults_then_file_then_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("pairs=12\n")

    out_a = tmp_path / "a.jsonl"
    assert main(["gen-corpus", "--out", str(out_a), "--config", str(cfg)]) == 0
    assert len(read_manifest(out_a)) == 12  # file overrides the default 500

    out_b = tmp_path / "b.jsonl"
    assert main(["gen-corpus", "--out", str(out_b), "--config", str(cfg),
                 "--pairs", "9"]) == 0
    assert len(read_manifest(out_b)) == 9  # flag overrides the file
    capsys.readouterr()


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_pairs=12\n")
    code = main(["gen-corpus", "--out", str(tmp_path / "m.jsonl"),
                 "--config", str(cfg)])
    assert code == 1
    assert "unknown config key" in capsys.readouterr().err


# -------------------------------------------------------------- token files


def test_token_file_roundtrip(tmp_path):
    rows = [("utt-0", [3, 1, 4, 1, 5]), ("utt-1", []), ("utt-2", [9])]
    path = tmp_path / "tokens.txt"
    write_token_file(path, rows)
    assert read_token_file(path) == rows


def test_token_file_reports_bad_line_number(tmp_path):
    path = tmp_path / "tokens.txt"
    path.write_text("u0 1 2 3\nu1 4 oops 6\n")
    with pytest.raises(ParseError, match=":2:"):
        read_token_file(path)


# --------------------------------------------------------------- gen-corpus


def test_gen_corpus_is_deterministic(tmp_path, capsys):
    # frame paths embed the manifest basename, so keep that equal across runs
    a, b = tmp_path / "r1" / "m.jsonl", tmp_path / "r2" / "m.jsonl"
    for out in (a, b):
        out.parent.mkdir()
        assert main(["gen-corpus", "--out", str(out), "--pairs", "8",
                     "--seed", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    frames = sorted(p.name for p in (a.parent / "m.frames").iterdir())
    assert frames == sorted(p.name for p in (b.parent / "m.frames").iterdir())
    for name in frames:
        assert (a.parent / "m.frames" / name).read_bytes() == \
            (b.parent / "m.frames" / name).read_bytes()
    capsys.readouterr()


def test_gen_corpus_split_writes_val_manifest(tmp_path, capsys):
    out = tmp_path / "train.jsonl"
    val = tmp_path / "val.jsonl"
    assert main(["gen-corpus", "--out", str(out), "--val-out", str(val),
                 "--pairs", "10", "--val-pairs", "3"]) == 0
    assert len(read_manifest(out)) == 7
    assert len(read_manifest(val)) == 3
    capsys.readouterr()


def test_run_manifest_describes_the_run(tmp_path, capsys):
    out = tmp_path / "m.jsonl"
    assert main(["gen-corpus", "--out", str(out), "--pairs", "6",
                 "--seed", "2"]) == 0
    doc = json.loads((tmp_path / "m.jsonl.run.json").read_text())
    assert doc["command"] == "gen-corpus"
    assert doc["seed"] == 2
    assert doc["effective_config"]["pairs"] == 6
    assert str(out) in doc["outputs"]
    assert doc["wall_time_s"] >= 0
    assert set(doc) == {"command", "argv", "effective_config", "seed",
                        "inputs", "outputs", "wall_time_s"}
    capsys.readouterr()
