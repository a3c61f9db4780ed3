"""Command-line entry point covering the whole pipeline.

Subcommands: gen-corpus, filter, train-tokenizer, tokenize, train-model,
translate, synthesize, eval, ablate.  Option values layer as defaults (from
the desk-scale presets and, where sensible, manifest metadata) < config file
(key=value lines) < explicit flags.  Every successful run writes a run
manifest recording the effective config, seed, input content hashes, and wall
time; it is metadata, not a comparable artifact.

Exit codes: 0 success, 1 usage or invalid values, 2 I/O or parse failures,
3 numeric divergence, 4 checkpoint version/kind mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .corpus import (
    ParseError,
    ToyCorpusConfig,
    corpus_stats,
    filter_by_similarity,
    generate_toy_corpus,
    read_frames,
    read_manifest,
    write_frames,
    write_manifest,
)
from .evaluation import EvalReport, EvalRow, corpus_bleu, meteor_lite, run_ablation, speaker_similarity
from .model import DecodeConfig, ModelConfig
from .pipeline import (
    bundle_text_to_token,
    bundle_vocoder,
    embedder_from_snapshot,
    model_from_checkpoint,
    resolve_vocoder,
    same_speaker_prompts,
    split_manifest,
    text_to_token_from_checkpoint,
    tokenizer_from_checkpoint,
    toy_model_config,
    toy_tokenizer_config,
    toy_train_config,
    toy_vocoder_config,
    train_model_stage,
    train_text_to_token_stage,
    train_tokenizer_stage,
    train_vocoder_stage,
)
from .tokenizer import TokenizerConfig, token_symbol_alignment
from .training import (
    ConfigError,
    NumericError,
    TrainConfig,
    VersionError,
    load_checkpoint,
    save_checkpoint,
)
from .vocoder import VocoderConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


# ------------------------------------------------------------ config layering


def _read_config_file(path) -> dict:
    out = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(text: str, like):
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _layer(defaults: dict, args) -> dict:
    """defaults < config file < explicit flags; unknown file keys are errors."""
    eff = dict(defaults)
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key not in eff:
                raise UsageError(f"unknown config key {key!r}")
            eff[key] = _coerce(raw, eff[key])
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            eff[key] = value
    return eff


def _add_layered(sp, defaults: dict, skip=()):
    for key, value in defaults.items():
        if key in skip:
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            sp.add_argument(flag, dest=key, default=None,
                            type=lambda s: _coerce(s, True), metavar="BOOL",
                            help=f"default {value}")
        else:
            sp.add_argument(flag, dest=key, default=None, type=type(value),
                            help=f"default {value}")


def _pick(eff: dict, cls):
    return {f.name: eff[f.name] for f in fields(cls) if f.name in eff}


_TRAIN_DEFAULTS_SKIP = ("seed",)  # added once per subcommand


def _train_defaults(stage: str) -> dict:
    return asdict(toy_train_config(stage))


# -------------------------------------------------------------- run manifests


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(path, *, command, config, seed, inputs, outputs, t0):
    doc = {
        "command": command,
        "argv": sys.argv[1:] if sys.argv else [],
        "effective_config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "outputs": [str(o) for o in outputs],
        "wall_time_s": time.perf_counter() - t0,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- token files


def write_token_file(path, rows):
    """One line per utterance: the id followed by space-separated indices."""
    lines = [" ".join([rid] + [str(int(t)) for t in toks]) for rid, toks in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_token_file(path):
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        try:
            rows.append((parts[0], [int(p) for p in parts[1:]]))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-integer token in {raw!r}")
    return rows


# ----------------------------------------------------------------- subcommands


def cmd_gen_corpus(args) -> int:
    t0 = time.perf_counter()
    defaults = {**asdict(ToyCorpusConfig()), "seed": 0, "val_pairs": 0}
    eff = _layer(defaults, args)
    cfg = ToyCorpusConfig(**_pick(eff, ToyCorpusConfig))
    m = generate_toy_corpus(cfg, eff["seed"])
    out = Path(args.out)
    outputs = [out]
    if eff["val_pairs"]:
        if not (0 < eff["val_pairs"] < len(m)):
            raise UsageError(f"--val-pairs must be in (0, {len(m)})")
        train_m, val_m = split_manifest(m, len(m) - eff["val_pairs"])
        write_manifest(train_m, out)
        val_path = args.val_out or out.with_name(out.stem + ".val" + out.suffix)
        write_manifest(val_m, val_path)
        outputs.append(Path(val_path))
        print(f"wrote {len(train_m)} train / {len(val_m)} val pairs")
    else:
        write_manifest(m, out)
        print(f"wrote {len(m)} pairs")
    print(corpus_stats(read_manifest(out)).render_text(), end="")
    _write_run_manifest(str(out) + ".run.json", command="gen-corpus", config=eff,
                        seed=eff["seed"], inputs=[args.config], outputs=outputs, t0=t0)
    return 0


def cmd_filter(args) -> int:
    t0 = time.perf_counter()
    defaults = {"threshold": 0.9, "inclusive": False}
    eff = _layer(defaults, args)
    m = read_manifest(args.infile)
    kept = filter_by_similarity(m, threshold=eff["threshold"], inclusive=eff["inclusive"])
    write_manifest(kept, args.out)
    print(f"kept {len(kept)} of {len(m)} records")
    _write_run_manifest(str(args.out) + ".run.json", command="filter", config=eff,
                        seed=None, inputs=[args.config, args.infile],
                        outputs=[args.out], t0=t0)
    return 0


def cmd_train_tokenizer(args) -> int:
    t0 = time.perf_counter()
    train_m = read_manifest(args.train)
    val_m = read_manifest(args.val)
    meta = train_m.metadata
    defaults = {**asdict(toy_tokenizer_config()), **_train_defaults("tokenizer"),
                "max_steps": 0, "with_text_to_token": False}
    defaults["feat_dim"] = int(meta.get("feat_dim", defaults["feat_dim"]))
    defaults["text_vocab"] = int(meta.get("tgt_vocab", defaults["text_vocab"]))
    eff = _layer(defaults, args)
    cfg = TokenizerConfig(**_pick(eff, TokenizerConfig))
    tcfg = TrainConfig(**_pick(eff, TrainConfig))
    log_path = args.log or str(args.out) + ".log.jsonl"
    tok, result = train_tokenizer_stage(
        train_m, val_m, cfg, tcfg, seed=eff["seed"],
        checkpoint_path=args.out, log_path=log_path,
        max_steps=eff["max_steps"] or None,
    )
    print(f"tokenizer: {result.steps} steps, best val {result.best_val:.4f} "
          f"at step {result.best_step}")
    outputs = [args.out, log_path]
    if eff["with_text_to_token"]:
        tmp = str(args.out) + ".t2t.tmp"
        t2t, t2t_result = train_text_to_token_stage(
            train_m, val_m, tok, seed=eff["seed"], checkpoint_path=tmp,
            max_steps=eff["max_steps"] or None,
        )
        t2t_snapshot = load_checkpoint(tmp).config
        save_checkpoint(args.out,
                        bundle_text_to_token(load_checkpoint(args.out), t2t, t2t_snapshot))
        Path(tmp).unlink()
        print(f"text-to-token: {t2t_result.steps} steps, "
              f"best val {t2t_result.best_val:.4f}")
    _write_run_manifest(str(args.out) + ".run.json", command="train-tokenizer",
                        config=eff, seed=eff["seed"],
                        inputs=[args.config, args.train, args.val],
                        outputs=outputs, t0=t0)
    return 0


def cmd_tokenize(args) -> int:
    t0 = time.perf_counter()
    tok = tokenizer_from_checkpoint(load_checkpoint(args.ckpt))
    m = read_manifest(args.infile)
    rows = [(r.id, tok.tokenize(r.tgt_frames)) for r in m]
    write_token_file(args.out, rows)
    print(f"tokenized {len(rows)} utterances")
    _write_run_manifest(str(args.out) + ".run.json", command="tokenize",
                        config={}, seed=None,
                        inputs=[args.config, args.ckpt, args.infile],
                        outputs=[args.out], t0=t0)
    return 0


def cmd_train_model(args) -> int:
    t0 = time.perf_counter()
    train_m = read_manifest(args.train)
    val_m = read_manifest(args.val)
    tok_st = load_checkpoint(args.tokenizer)
    tok = tokenizer_from_checkpoint(tok_st)
    meta = train_m.metadata
    defaults = {**asdict(toy_model_config()), **_train_defaults("model"),
                "max_steps": 0, "token_source": "speech", "with_vocoder": True}
    defaults["feat_dim"] = int(meta.get("feat_dim", defaults["feat_dim"]))
    defaults["text_vocab"] = tok.cfg.text_vocab
    defaults["audio_vocab"] = tok.cfg.codebook_size
    eff = _layer(defaults, args)
    cfg = ModelConfig(**_pick(eff, ModelConfig))
    tcfg = TrainConfig(**_pick(eff, TrainConfig))
    max_steps = eff["max_steps"] or None

    t2t = embedder = None
    if eff["token_source"] == "text":
        t2t = text_to_token_from_checkpoint(tok_st)
        embedder = embedder_from_snapshot(tok_st.config["text_to_token"]["embedder"])
    log_path = args.log or str(args.out) + ".log.jsonl"
    model, result = train_model_stage(
        train_m, val_m, tok, cfg, tcfg, seed=eff["seed"],
        token_source=eff["token_source"], text_to_token=t2t, embedder=embedder,
        checkpoint_path=args.out, log_path=log_path, max_steps=max_steps,
    )
    print(f"model: {result.steps} steps, best val {result.best_val:.4f} "
          f"at step {result.best_step}")

    if eff["with_vocoder"]:
        base = toy_vocoder_config()
        voc_cfg = VocoderConfig(
            feat_dim=tok.cfg.feat_dim, audio_vocab=tok.cfg.codebook_size,
            token_dim=base.token_dim, d_model=base.d_model, blocks=base.blocks,
            heads=base.heads, frame_rate=int(meta.get("frame_rate", 50)),
        )
        tmp = str(args.out) + ".voc.tmp"
        voc, voc_result, _ = train_vocoder_stage(
            train_m, val_m, tok, voc_cfg, seed=eff["seed"], checkpoint_path=tmp,
            max_steps=max_steps,
        )
        voc_st = load_checkpoint(tmp)
        save_checkpoint(args.out, bundle_vocoder(load_checkpoint(args.out), voc, voc_st.config))
        Path(tmp).unlink()
        print(f"vocoder: {voc_result.steps} steps, best val {voc_result.best_val:.6f}")
    _write_run_manifest(str(args.out) + ".run.json", command="train-model",
                        config=eff, seed=eff["seed"],
                        inputs=[args.config, args.train, args.val, args.tokenizer],
                        outputs=[args.out, log_path], t0=t0)
    return 0


def cmd_translate(args) -> int:
    t0 = time.perf_counter()
    defaults = {"decode_max_steps": 64, "repetition_penalty": 1.2}
    eff = _layer(defaults, args)
    st = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(st)
    m = read_manifest(args.infile)
    dcfg = DecodeConfig(max_steps=eff["decode_max_steps"],
                        repetition_penalty=eff["repetition_penalty"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    voc = embedder = prompts = None
    try:
        voc, embedder = resolve_vocoder(st)
        prompts = same_speaker_prompts(m)
        (out_dir / "frames").mkdir(exist_ok=True)
        (out_dir / "prompts").mkdir(exist_ok=True)
    except VersionError:
        pass  # text and tokens only

    text_rows, token_rows = [], []
    truncated = 0
    for r in m:
        res = model.translate(r.src_frames, dcfg)
        text_rows.append((r.id, res.text))
        token_rows.append((r.id, res.tokens))
        truncated += int(res.truncated_text or res.truncated_audio)
        if voc is not None:
            prompt = prompts[r.id].tgt_frames
            gen = voc.synthesize(res.tokens, embedder.embed(prompt))
            write_frames(out_dir / "frames" / f"{r.id}.ds2f", gen)
            write_frames(out_dir / "prompts" / f"{r.id}.ds2f", prompt)
    write_token_file(out_dir / "translations.text", text_rows)
    write_token_file(out_dir / "translations.tokens", token_rows)
    outputs = [out_dir / "translations.text", out_dir / "translations.tokens"]
    if voc is not None:
        outputs += [out_dir / "frames", out_dir / "prompts"]
    note = " (no vocoder in checkpoint: frames skipped)" if voc is None else ""
    print(f"translated {len(m)} utterances, {truncated} truncated{note}")
    _write_run_manifest(out_dir / "run-manifest.json", command="translate",
                        config=eff, seed=None,
                        inputs=[args.config, args.ckpt, args.infile],
                        outputs=outputs, t0=t0)
    return 0


def cmd_synthesize(args) -> int:
    t0 = time.perf_counter()
    voc, embedder = resolve_vocoder(load_checkpoint(args.ckpt))
    rows = read_token_file(args.tokens)
    prompt = read_frames(args.prompt, frame_rate=voc.cfg.frame_rate)
    spk = embedder.embed(prompt)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for rid, tokens in rows:
        gen = voc.synthesize(tokens, spk)
        path = out_dir / f"{rid}.ds2f"
        write_frames(path, gen)
        outputs.append(path)
    print(f"synthesized {len(rows)} utterances")
    _write_run_manifest(out_dir / "run-manifest.json", command="synthesize",
                        config={}, seed=None,
                        inputs=[args.config, args.ckpt, args.tokens, args.prompt],
                        outputs=outputs, t0=t0)
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    defaults = {"system": "system"}
    eff = _layer(defaults, args)
    hyp_rows = read_token_file(args.hyp)
    if args.ref_manifest:
        refs_by_id = {r.id: list(r.tgt_text) for r in read_manifest(args.ref_manifest)}
    else:
        refs_by_id = {rid: toks for rid, toks in read_token_file(args.ref)}
    missing = [rid for rid, _ in hyp_rows if rid not in refs_by_id]
    if missing:
        raise ValueError(f"no reference for ids: {', '.join(missing[:5])}"
                         + ("..." if len(missing) > 5 else ""))
    hyps = [toks for _, toks in hyp_rows]
    refs = [refs_by_id[rid] for rid, _ in hyp_rows]
    row = EvalRow(
        system=eff["system"], count=len(hyps),
        bleu=corpus_bleu(hyps, refs),
        meteor=float(np.mean([meteor_lite(h, r) for h, r in zip(hyps, refs)])),
    )
    inputs = [args.config, args.hyp, args.ref, args.ref_manifest]
    if args.gen_frames and args.prompt_frames:
        if not args.embedder_from:
            raise UsageError("--gen-frames needs --embedder-from for the speaker embedder")
        _, embedder = resolve_vocoder(load_checkpoint(args.embedder_from))
        sims = []
        for rid, _ in hyp_rows:
            gen = read_frames(Path(args.gen_frames) / f"{rid}.ds2f")
            prompt = read_frames(Path(args.prompt_frames) / f"{rid}.ds2f")
            sims.append(speaker_similarity(gen, prompt, embedder))
        row.speaker_sim = float(np.mean(sims))
        inputs.append(args.embedder_from)
    report = EvalReport(rows=[row], metadata={"hyp": str(args.hyp)})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.render_text())
    (out_dir / "report.kv").write_text(report.to_kv())
    print(report.render_text(), end="")
    _write_run_manifest(out_dir / "run-manifest.json", command="eval", config=eff,
                        seed=None, inputs=inputs,
                        outputs=[out_dir / "report.txt", out_dir / "report.kv"], t0=t0)
    return 0


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    train_m = read_manifest(args.train)
    val_m = read_manifest(args.val)
    eval_m = read_manifest(args.eval) if args.eval else val_m
    defaults = {**_train_defaults("model"), "max_steps": 0}
    eff = _layer(defaults, args)
    tcfg = TrainConfig(**_pick(eff, TrainConfig))
    tok = tokenizer_from_checkpoint(load_checkpoint(args.tokenizer))
    voc, embedder = resolve_vocoder(load_checkpoint(args.vocoder))
    meta = train_m.metadata
    fps = int(meta.get("frames_per_symbol", 4))
    alignment = token_symbol_alignment(tok, train_m, fps, int(meta.get("tgt_vocab", 20)))
    report, curves = run_ablation(
        args.suite, train_m=train_m, val_m=val_m, eval_m=eval_m,
        tokenizer=tok, vocoder=voc, embedder=embedder, alignment=alignment,
        seed=eff["seed"], train_cfg=tcfg, max_steps=eff["max_steps"] or None,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.render_text())
    (out_dir / "report.kv").write_text(report.to_kv())
    outputs = [out_dir / "report.txt", out_dir / "report.kv"]
    for name, trace in curves.items():
        path = out_dir / f"{name}.curve"
        path.write_text("".join(f"{i + 1} {v}\n" for i, v in enumerate(trace)))
        outputs.append(path)
    print(report.render_text(), end="")
    _write_run_manifest(out_dir / "run-manifest.json", command="ablate", config=eff,
                        seed=eff["seed"],
                        inputs=[args.config, args.train, args.val, args.eval,
                                args.tokenizer, args.vocoder],
                        outputs=outputs, t0=t0)
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    p = _Parser(prog="minis2st", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def new(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        return sp

    sp = new("gen-corpus", cmd_gen_corpus, "generate the synthetic parallel corpus")
    sp.add_argument("--out", required=True, help="manifest path to write")
    sp.add_argument("--val-out", default=None, help="held-out manifest path")
    _add_layered(sp, {**asdict(ToyCorpusConfig()), "val_pairs": 0}, skip=("name", "language_pair"))

    sp = new("filter", cmd_filter, "drop records below the similarity threshold")
    sp.add_argument("--in", dest="infile", required=True, help="input manifest")
    sp.add_argument("--out", required=True, help="output manifest")
    _add_layered(sp, {"threshold": 0.9, "inclusive": False})

    sp = new("train-tokenizer", cmd_train_tokenizer, "train the semantic tokenizer")
    sp.add_argument("--train", required=True, help="training manifest")
    sp.add_argument("--val", required=True, help="validation manifest")
    sp.add_argument("--out", required=True, help="checkpoint path to write")
    sp.add_argument("--log", default=None, help="loss log path (default <out>.log.jsonl)")
    _add_layered(sp, {**asdict(toy_tokenizer_config()), **_train_defaults("tokenizer"),
                      "max_steps": 0, "with_text_to_token": False},
                 skip=_TRAIN_DEFAULTS_SKIP)

    sp = new("tokenize", cmd_tokenize, "emit semantic tokens for a manifest")
    sp.add_argument("--ckpt", required=True, help="tokenizer checkpoint")
    sp.add_argument("--in", dest="infile", required=True, help="input manifest")
    sp.add_argument("--out", required=True, help="token file to write")

    sp = new("train-model", cmd_train_model, "train the translation model")
    sp.add_argument("--train", required=True)
    sp.add_argument("--val", required=True)
    sp.add_argument("--tokenizer", required=True, help="tokenizer checkpoint")
    sp.add_argument("--out", required=True, help="checkpoint path to write")
    sp.add_argument("--log", default=None)
    _add_layered(sp, {**asdict(toy_model_config()), **_train_defaults("model"),
                      "max_steps": 0, "token_source": "speech", "with_vocoder": True},
                 skip=_TRAIN_DEFAULTS_SKIP)

    sp = new("translate", cmd_translate, "speech in, text / tokens / speech out")
    sp.add_argument("--ckpt", required=True, help="model checkpoint")
    sp.add_argument("--in", dest="infile", required=True, help="input manifest")
    sp.add_argument("--out-dir", required=True)
    _add_layered(sp, {"decode_max_steps": 64, "repetition_penalty": 1.2})

    sp = new("synthesize", cmd_synthesize, "vocode token sequences with a prompt")
    sp.add_argument("--ckpt", required=True, help="vocoder or model checkpoint")
    sp.add_argument("--tokens", required=True, help="token file")
    sp.add_argument("--prompt", required=True, help="prompt frame file")
    sp.add_argument("--out-dir", required=True)

    sp = new("eval", cmd_eval, "score hypothesis files against references")
    sp.add_argument("--hyp", required=True, help="hypothesis token file")
    ref = sp.add_mutually_exclusive_group(required=True)
    ref.add_argument("--ref", default=None, help="reference token file")
    ref.add_argument("--ref-manifest", default=None, help="manifest with target text")
    sp.add_argument("--gen-frames", default=None, help="dir of generated frame files")
    sp.add_argument("--prompt-frames", default=None, help="dir of prompt frame files")
    sp.add_argument("--embedder-from", default=None, help="checkpoint supplying the embedder")
    sp.add_argument("--out-dir", required=True)
    _add_layered(sp, {"system": "system"})

    sp = new("ablate", cmd_ablate, "run a comparison suite under one seed")
    sp.add_argument("suite", choices=["projectors", "token_source"])
    sp.add_argument("--train", required=True)
    sp.add_argument("--val", required=True)
    sp.add_argument("--eval", default=None, help="scoring manifest (default: --val)")
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--vocoder", required=True, help="vocoder or model checkpoint")
    sp.add_argument("--out-dir", required=True)
    _add_layered(sp, {**_train_defaults("model"), "max_steps": 0},
                 skip=_TRAIN_DEFAULTS_SKIP)

    return p


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except VersionError as exc:
        print(f"version mismatch: {exc}", file=sys.stderr)
        return 4
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
