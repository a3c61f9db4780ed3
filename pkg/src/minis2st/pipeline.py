"""Staged training glue and the end-to-end toy run.

Each stage wraps the generic training engine with the stage's loss, validation
set, and checkpoint snapshot, and reloads the best checkpoint before handing
the trained object back.  Checkpoints store only trainable tensors plus a
config snapshot; frozen parts (speech encoder, frozen text rows, the speaker
embedder) are regenerated from the recorded seed, which reproduces them bit
for bit.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluation, nn
from .corpus import Manifest, SpeechFrames, ToyCorpusConfig, generate_toy_corpus
from .model import DecodeConfig, ModelConfig, TranslationModel
from .tensor import Tensor, add, mean, mul, no_grad, sub
from .tokenizer import (
    SpeechTokenizer,
    TextToTokenModel,
    TokenizerConfig,
    token_symbol_alignment,
)
from .training import (
    CheckpointState,
    ConfigError,
    TrainConfig,
    TrainResult,
    VersionError,
    expect_kind,
    load_checkpoint,
    train,
)
from .vocoder import SpeakerEmbedder, TimbreVocoder, VocoderConfig


# ------------------------------------------------------------- checkpoint glue


def load_trainable(module: nn.Module, tensors: dict, prefix: str = ""):
    """Copy checkpoint arrays into the module's trainable tensors only; frozen
    tensors are left as constructed (the config seed regenerates them)."""
    for name, t in module.named_tensors():
        if not t.requires_grad:
            continue
        key = prefix + name
        if key not in tensors:
            raise VersionError(f"checkpoint missing tensor {key!r}")
        src = np.asarray(tensors[key], dtype=np.float64)
        if src.shape != t.data.shape:
            raise VersionError(
                f"tensor {key!r}: checkpoint shape {src.shape} != model shape {t.data.shape}"
            )
        t.data = src.copy()


def make_embedder(feat_dim: int, seed: int, spk_dim: int = 16, hidden: int = 32) -> SpeakerEmbedder:
    return SpeakerEmbedder(feat_dim, spk_dim=spk_dim, hidden=hidden, seed=seed)


def embedder_snapshot(e: SpeakerEmbedder, seed: int) -> dict:
    return {"feat_dim": e.feat_dim, "spk_dim": e.spk_dim,
            "hidden": e.w1.shape[1], "seed": seed}


def embedder_from_snapshot(snap: dict) -> SpeakerEmbedder:
    return SpeakerEmbedder(int(snap["feat_dim"]), spk_dim=int(snap["spk_dim"]),
                           hidden=int(snap["hidden"]), seed=int(snap["seed"]))


def tokenizer_from_checkpoint(st: CheckpointState) -> SpeechTokenizer:
    expect_kind(st, "tokenizer")
    tok = SpeechTokenizer(TokenizerConfig(**st.config["cfg"]), int(st.config["seed"]))
    load_trainable(tok, st.tensors)
    return tok


def model_from_checkpoint(st: CheckpointState) -> TranslationModel:
    expect_kind(st, "model")
    model = TranslationModel(ModelConfig(**st.config["cfg"]), int(st.config["seed"]))
    load_trainable(model, st.tensors)
    return model


def vocoder_from_checkpoint(st: CheckpointState):
    expect_kind(st, "vocoder")
    voc = TimbreVocoder(VocoderConfig(**st.config["cfg"]), int(st.config["seed"]))
    load_trainable(voc, st.tensors)
    return voc, embedder_from_snapshot(st.config["embedder"])


def has_text_to_token(st: CheckpointState) -> bool:
    return "text_to_token" in st.config


def bundle_text_to_token(tok_st: CheckpointState, t2t: TextToTokenModel,
                         t2t_config: dict) -> CheckpointState:
    """Fold a trained text-to-token model into a tokenizer checkpoint under
    the tt. tensor prefix so one file carries both."""
    tensors = dict(tok_st.tensors)
    for name, t in t2t.trainable().items():
        tensors[f"tt.{name}"] = t.data.copy()
    config = dict(tok_st.config)
    config["text_to_token"] = t2t_config
    return CheckpointState(kind=tok_st.kind, config=config, step=tok_st.step,
                           tensors=tensors, rng_state=tok_st.rng_state, meta=tok_st.meta)


def text_to_token_from_checkpoint(st: CheckpointState) -> TextToTokenModel:
    expect_kind(st, "tokenizer")
    if not has_text_to_token(st):
        raise VersionError("checkpoint has no bundled text-to-token model")
    c = st.config["text_to_token"]
    t2t = TextToTokenModel(int(c["text_vocab"]), int(c["codebook_size"]),
                           int(c["spk_dim"]), dim=int(c["dim"]), blocks=int(c["blocks"]),
                           heads=int(c["heads"]), seed=int(c["seed"]))
    load_trainable(t2t, st.tensors, prefix="tt.")
    return t2t


def has_vocoder(st: CheckpointState) -> bool:
    return "vocoder" in st.config


def bundle_vocoder(model_st: CheckpointState, voc: TimbreVocoder,
                   voc_config: dict) -> CheckpointState:
    """Fold a trained vocoder into a model checkpoint under the voc. prefix."""
    tensors = dict(model_st.tensors)
    for name, t in voc.trainable().items():
        tensors[f"voc.{name}"] = t.data.copy()
    config = dict(model_st.config)
    config["vocoder"] = voc_config
    return CheckpointState(kind=model_st.kind, config=config, step=model_st.step,
                           tensors=tensors, rng_state=model_st.rng_state, meta=model_st.meta)


def resolve_vocoder(st: CheckpointState):
    """(vocoder, embedder) from either a standalone vocoder checkpoint or a
    model checkpoint carrying a bundled one."""
    if st.kind == "vocoder":
        return vocoder_from_checkpoint(st)
    if st.kind == "model" and has_vocoder(st):
        c = st.config["vocoder"]
        voc = TimbreVocoder(VocoderConfig(**c["cfg"]), int(c["seed"]))
        load_trainable(voc, st.tensors, prefix="voc.")
        return voc, embedder_from_snapshot(c["embedder"])
    raise VersionError(f"checkpoint of kind {st.kind!r} carries no vocoder")


# ------------------------------------------------------------------- presets
# Constructor defaults carry the full-scale settings; these presets shrink
# everything to the synthetic corpus so the whole pipeline fits a CPU budget.


def toy_corpus_config(pairs: int = 550) -> ToyCorpusConfig:
    return ToyCorpusConfig(pairs=pairs)


# codes must resolve symbol x speaker x context clusters, so the toy codebook
# is sized well above the 20-symbol alphabet
def toy_tokenizer_config() -> TokenizerConfig:
    return TokenizerConfig(dim=32, codebook_size=384, enc1_blocks=1, enc2_blocks=1,
                           asr_blocks=1, heads=4)


def toy_model_config(projector: str = "linear") -> ModelConfig:
    # group_size matches the corpus rendering (4 frames per symbol), so one
    # decode step spans exactly one symbol block
    return ModelConfig(audio_vocab=384, d_model=96, blocks=2, heads=4, context=256,
                       group_size=4, projector=projector, proj_hidden=128,
                       qformer_queries=16, qformer_dim=64, enc_dim=64, enc_blocks=1,
                       fixed_input_len=32)


def toy_vocoder_config() -> VocoderConfig:
    return VocoderConfig(audio_vocab=384, token_dim=16, d_model=32, blocks=1, heads=4)


def toy_train_config(stage: str, seed: int = 0) -> TrainConfig:
    if stage == "tokenizer":
        return TrainConfig(lr=2e-3, batch_size=8, warmup_steps=30, decay_gamma=0.97,
                           max_epochs=30, validate_every=100, patience=8, seed=seed)
    if stage == "model":
        return TrainConfig(lr=1e-3, batch_size=8, warmup_steps=50, decay_gamma=0.985,
                           max_epochs=140, validate_every=200, patience=12, seed=seed)
    if stage == "vocoder":
        return TrainConfig(lr=2e-3, batch_size=8, warmup_steps=30, decay_gamma=0.97,
                           max_epochs=12, validate_every=100, patience=4, seed=seed)
    if stage == "text_to_token":
        return TrainConfig(lr=1e-3, batch_size=8, warmup_steps=30, decay_gamma=0.97,
                           max_epochs=15, validate_every=100, patience=4, seed=seed)
    raise ValueError(f"unknown stage {stage!r}")


# ------------------------------------------------------------- manifest utils


def split_manifest(m: Manifest, n_train: int):
    """Leading n_train records for training, the rest held out."""
    records = list(m)
    if not (0 < n_train < len(records)):
        raise ValueError(f"split point {n_train} outside (0, {len(records)})")

    def part(recs):
        meta = dict(m.metadata)
        meta["frame_count"] = int(sum(r.src_frames.length for r in recs))
        return Manifest(records=recs, metadata=meta)

    return part(records[:n_train]), part(records[n_train:])


def same_speaker_prompts(m: Manifest, pool: Manifest | None = None) -> dict:
    """id -> reference record of the same speaker (next one cyclically; a
    speaker with a single utterance prompts with itself)."""
    pool_records = list(pool) if pool is not None else list(m)
    by_spk: dict = {}
    for r in pool_records:
        by_spk.setdefault(r.speaker, []).append(r)
    out = {}
    for r in m:
        group = by_spk.get(r.speaker)
        if not group:
            raise ValueError(f"no prompt candidates for speaker {r.speaker!r}")
        ids = [g.id for g in group]
        if r.id in ids:
            out[r.id] = group[(ids.index(r.id) + 1) % len(group)]
        else:
            out[r.id] = group[0]
    return out


def mismatched_prompts(m: Manifest, pool: Manifest | None = None) -> dict:
    """id -> reference record of a different speaker, spread deterministically."""
    pool_records = list(pool) if pool is not None else list(m)
    out = {}
    for i, r in enumerate(m):
        others = [p for p in pool_records if p.speaker != r.speaker]
        if not others:
            raise ValueError("mismatched prompts need at least two speakers")
        out[r.id] = others[i % len(others)]
    return out


def _mean_scalars(losses):
    total = losses[0]
    for l in losses[1:]:
        total = add(total, l)
    return mul(total, 1.0 / len(losses))


# ------------------------------------------------------------ tokenizer stage


def train_tokenizer_stage(train_m: Manifest, val_m: Manifest,
                          cfg: TokenizerConfig | None = None,
                          tcfg: TrainConfig | None = None, *, seed: int = 0,
                          checkpoint_path=None, log_path=None,
                          resume_from: CheckpointState | None = None,
                          max_steps=None, val_limit=None, loss_trace=None):
    cfg = cfg if cfg is not None else toy_tokenizer_config()
    tcfg = tcfg if tcfg is not None else toy_train_config("tokenizer", seed)
    tok = SpeechTokenizer(cfg, seed)
    records = list(train_m)
    vrecords = list(val_m)[:val_limit] if val_limit else list(val_m)
    if not vrecords:
        raise ConfigError("tokenizer stage needs a non-empty validation set")
    usage = np.zeros(cfg.codebook_size)

    def loss_fn(batch, rng):
        losses = []
        parts_sum = {"loss_asr": 0.0, "loss_codebook": 0.0, "loss_commit": 0.0}
        for r in batch:
            total, parts, tokens = tok.training_losses(r.tgt_frames, r.tgt_text)
            losses.append(total)
            for k in parts_sum:
                parts_sum[k] += parts[k]
            np.add.at(usage, tokens, 1.0)
        loss = _mean_scalars(losses)
        if loss_trace is not None:
            loss_trace.append(float(loss.data))
        return loss, {k: v / len(batch) for k, v in parts_sum.items()}

    def val_fn():
        tot = 0.0
        for r in vrecords:
            t, _, _ = tok.training_losses(r.tgt_frames, r.tgt_text)
            tot += float(t.data)
        return tot / len(vrecords)

    def on_epoch_end(epoch, rng):
        # codes unused for a whole epoch are re-seeded onto fresh encodings
        dead = np.nonzero(usage == 0)[0]
        if dead.size:
            r = records[int(rng.integers(len(records)))]
            with no_grad():
                h = tok.encoder.encode_stage1(r.tgt_frames).data
            rows = rng.integers(0, h.shape[0], size=dead.size)
            tok.codebook.entries.data[dead] = h[rows]
        usage[:] = 0.0

    result = train(
        params=dict(tok.trainable()), examples=records, loss_fn=loss_fn,
        val_fn=val_fn, cfg=tcfg, lengths=[r.tgt_frames.length for r in records],
        state_arrays={"codebook_usage": usage}, on_epoch_end=on_epoch_end,
        checkpoint_path=checkpoint_path, log_path=log_path, resume_from=resume_from,
        kind="tokenizer", config_snapshot={"cfg": asdict(cfg), "seed": seed},
        max_steps=max_steps,
    )
    if checkpoint_path:
        load_trainable(tok, load_checkpoint(checkpoint_path).tensors)
    return tok, result


# -------------------------------------------------------- text-to-token stage


def train_text_to_token_stage(train_m: Manifest, val_m: Manifest,
                              tokenizer: SpeechTokenizer, *, seed: int = 0,
                              embedder: SpeakerEmbedder | None = None,
                              dim: int = 64, blocks: int = 2, heads: int = 4,
                              tcfg: TrainConfig | None = None,
                              checkpoint_path=None, log_path=None,
                              max_steps=None, val_limit=None, loss_trace=None):
    """Train the text-conditioned token generator against speech-derived tokens."""
    tcfg = tcfg if tcfg is not None else toy_train_config("text_to_token", seed)
    cfg = tokenizer.cfg
    feat_dim = cfg.feat_dim
    embedder = embedder if embedder is not None else make_embedder(feat_dim, seed)
    t2t = TextToTokenModel(cfg.text_vocab, cfg.codebook_size, embedder.spk_dim,
                           dim=dim, blocks=blocks, heads=heads, seed=seed)

    def examples_for(m: Manifest, limit=None):
        prompts = same_speaker_prompts(m)
        recs = list(m)[:limit] if limit else list(m)
        out = []
        for r in recs:
            spk = embedder.embed(prompts[r.id].tgt_frames)
            out.append((r.tgt_text, tokenizer.tokenize(r.tgt_frames), spk))
        return out

    train_ex = examples_for(train_m)
    val_ex = examples_for(val_m, val_limit)
    if not val_ex:
        raise ConfigError("text-to-token stage needs a non-empty validation set")

    def loss_fn(batch, rng):
        loss = _mean_scalars([t2t.loss(text, toks, spk) for text, toks, spk in batch])
        if loss_trace is not None:
            loss_trace.append(float(loss.data))
        return loss, {}

    def val_fn():
        return sum(float(t2t.loss(text, toks, spk).data)
                   for text, toks, spk in val_ex) / len(val_ex)

    snapshot = {
        "text_vocab": cfg.text_vocab, "codebook_size": cfg.codebook_size,
        "spk_dim": embedder.spk_dim, "dim": dim, "blocks": blocks, "heads": heads,
        "seed": seed, "embedder": embedder_snapshot(embedder, seed),
    }
    result = train(
        params=dict(t2t.trainable()), examples=train_ex, loss_fn=loss_fn,
        val_fn=val_fn, cfg=tcfg, lengths=[len(t) + len(k) for t, k, _ in train_ex],
        checkpoint_path=checkpoint_path, log_path=log_path,
        kind="text_to_token", config_snapshot=snapshot, max_steps=max_steps,
    )
    if checkpoint_path:
        load_trainable(t2t, load_checkpoint(checkpoint_path).tensors)
    return t2t, result


# ---------------------------------------------------------------- model stage


def build_token_targets(m: Manifest, tokenizer: SpeechTokenizer,
                        token_source: str = "speech", *,
                        text_to_token: TextToTokenModel | None = None,
                        embedder: SpeakerEmbedder | None = None,
                        max_len: int = 64) -> list:
    """(record, semantic tokens) pairs for decoder training.

    speech: tokens come from re-quantizing the target frames.
    text: tokens are generated from the target text by the trained
    text-to-token model, conditioned on a same-speaker prompt embedding.
    """
    if token_source == "speech":
        return [(r, tokenizer.tokenize(r.tgt_frames)) for r in m]
    if token_source == "text":
        if text_to_token is None or embedder is None:
            raise ValueError("text token source needs text_to_token and embedder")
        prompts = same_speaker_prompts(m)
        out = []
        for r in m:
            spk = embedder.embed(prompts[r.id].tgt_frames)
            out.append((r, text_to_token.generate(r.tgt_text, spk, max_len=max_len).tokens))
        return out
    raise ValueError(f"unknown token source {token_source!r}")


def train_model_stage(train_m: Manifest, val_m: Manifest, tokenizer: SpeechTokenizer,
                      cfg: ModelConfig | None = None, tcfg: TrainConfig | None = None,
                      *, seed: int = 0, token_source: str = "speech",
                      text_to_token: TextToTokenModel | None = None,
                      embedder: SpeakerEmbedder | None = None,
                      checkpoint_path=None, log_path=None,
                      resume_from: CheckpointState | None = None,
                      max_steps=None, val_limit=None, loss_trace=None,
                      src_noise: float = 0.1):
    cfg = cfg if cfg is not None else toy_model_config()
    tcfg = tcfg if tcfg is not None else toy_train_config("model", seed)
    if cfg.audio_vocab != tokenizer.cfg.codebook_size:
        raise ConfigError(
            f"model audio vocab {cfg.audio_vocab} != codebook size {tokenizer.cfg.codebook_size}"
        )
    model = TranslationModel(cfg, seed)
    kw = dict(text_to_token=text_to_token, embedder=embedder)
    train_ex = build_token_targets(train_m, tokenizer, token_source, **kw)
    val_ex = build_token_targets(val_m, tokenizer, token_source, **kw)
    if val_limit:
        val_ex = val_ex[:val_limit]
    if not val_ex:
        raise ConfigError("model stage needs a non-empty validation set")

    def loss_fn(batch, rng):
        totals, la, lt = [], 0.0, 0.0
        for r, tokens in batch:
            src = r.src_frames
            if src_noise > 0:
                # fresh jitter per visit: cheap augmentation against memorizing
                # the fixed training renderings (validation stays clean)
                src = SpeechFrames(src.frames + rng.normal(0.0, src_noise, src.frames.shape),
                                   src.frame_rate)
            total, loss_a, loss_t = model.loss_for(
                src, r.tgt_text, tokens,
                lambda_audio=tcfg.lambda_audio, lambda_text=tcfg.lambda_text,
            )
            totals.append(total)
            la += float(loss_a.data)
            lt += float(loss_t.data)
        loss = _mean_scalars(totals)
        if loss_trace is not None:
            loss_trace.append(float(loss.data))
        return loss, {"loss_audio": la / len(batch), "loss_text": lt / len(batch)}

    def val_fn():
        tot = 0.0
        for r, tokens in val_ex:
            total, _, _ = model.loss_for(r.src_frames, r.tgt_text, tokens,
                                         lambda_audio=tcfg.lambda_audio,
                                         lambda_text=tcfg.lambda_text)
            tot += float(total.data)
        return tot / len(val_ex)

    snapshot = {"cfg": asdict(cfg), "seed": seed, "token_source": token_source}
    result = train(
        params=dict(model.trainable()), examples=train_ex, loss_fn=loss_fn,
        val_fn=val_fn, cfg=tcfg, lengths=[len(tokens) for _, tokens in train_ex],
        checkpoint_path=checkpoint_path, log_path=log_path, resume_from=resume_from,
        kind="model", config_snapshot=snapshot, max_steps=max_steps,
    )
    if checkpoint_path:
        load_trainable(model, load_checkpoint(checkpoint_path).tensors)
    return model, result


# -------------------------------------------------------------- vocoder stage


def train_vocoder_stage(train_m: Manifest, val_m: Manifest, tokenizer: SpeechTokenizer,
                        cfg: VocoderConfig | None = None, tcfg: TrainConfig | None = None,
                        *, seed: int = 0, embedder: SpeakerEmbedder | None = None,
                        checkpoint_path=None, log_path=None,
                        resume_from: CheckpointState | None = None,
                        max_steps=None, val_limit=None, loss_trace=None):
    cfg = cfg if cfg is not None else toy_vocoder_config()
    tcfg = tcfg if tcfg is not None else toy_train_config("vocoder", seed)
    if cfg.upsample != 1:
        raise ConfigError(
            "frame-regression vocoder training needs upsample == 1 so output "
            "and target lengths agree (tokens are one per frame)"
        )
    if cfg.audio_vocab != tokenizer.cfg.codebook_size:
        raise ConfigError(
            f"vocoder audio vocab {cfg.audio_vocab} != codebook size {tokenizer.cfg.codebook_size}"
        )
    embedder = embedder if embedder is not None else make_embedder(cfg.feat_dim, seed)
    voc = TimbreVocoder(cfg, seed)

    def examples_for(m: Manifest, limit=None):
        prompts = same_speaker_prompts(m)
        recs = list(m)[:limit] if limit else list(m)
        return [(r, tokenizer.tokenize(r.tgt_frames),
                 embedder.embed(prompts[r.id].tgt_frames)) for r in recs]

    train_ex = examples_for(train_m)
    val_ex = examples_for(val_m, val_limit)
    if not val_ex:
        raise ConfigError("vocoder stage needs a non-empty validation set")

    def mse(r, tokens, spk):
        d = sub(voc.forward_frames(tokens, spk), Tensor(r.tgt_frames.frames))
        return mean(mul(d, d))

    def loss_fn(batch, rng):
        loss = _mean_scalars([mse(r, tokens, spk) for r, tokens, spk in batch])
        if loss_trace is not None:
            loss_trace.append(float(loss.data))
        return loss, {}

    def val_fn():
        return sum(float(mse(r, tokens, spk).data)
                   for r, tokens, spk in val_ex) / len(val_ex)

    snapshot = {"cfg": asdict(cfg), "seed": seed,
                "embedder": embedder_snapshot(embedder, seed)}
    result = train(
        params=dict(voc.trainable()), examples=train_ex, loss_fn=loss_fn,
        val_fn=val_fn, cfg=tcfg, lengths=[len(tokens) for _, tokens, _ in train_ex],
        checkpoint_path=checkpoint_path, log_path=log_path, resume_from=resume_from,
        kind="vocoder", config_snapshot=snapshot, max_steps=max_steps,
    )
    if checkpoint_path:
        load_trainable(voc, load_checkpoint(checkpoint_path).tensors)
    return voc, result, embedder


def synthesize_tokens(voc: TimbreVocoder, embedder: SpeakerEmbedder, tokens,
                      prompt: SpeechFrames) -> SpeechFrames:
    return voc.synthesize(tokens, embedder.embed(prompt))


# ------------------------------------------------------------ end-to-end run


@dataclass
class PipelineRun:
    seed: int
    train_m: Manifest
    val_m: Manifest
    tokenizer: SpeechTokenizer
    model: TranslationModel
    vocoder: TimbreVocoder
    embedder: SpeakerEmbedder
    alignment: np.ndarray
    tokenizer_result: TrainResult
    model_result: TrainResult
    vocoder_result: TrainResult
    report: evaluation.EvalReport
    timings: dict = field(default_factory=dict)


def run_toy_pipeline(out_dir=None, *, seed: int = 0, corpus_cfg: ToyCorpusConfig | None = None,
                     n_train: int = 500, projector: str = "linear",
                     tokenizer_steps=None, model_steps=None, vocoder_steps=None,
                     decode_cfg: DecodeConfig | None = None) -> PipelineRun:
    """Corpus -> tokenizer -> model -> vocoder -> evaluation, one seed throughout.

    With out_dir set, writes the stage checkpoints, loss logs, and the report
    files there; otherwise everything stays in memory.
    """
    from pathlib import Path

    paths = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("tokenizer", "model", "vocoder"):
            paths[name] = str(out / f"{name}.ckpt")
            paths[name + "_log"] = str(out / f"{name}.log.jsonl")

    timings = {}
    t0 = time.perf_counter()
    corpus_cfg = corpus_cfg if corpus_cfg is not None else toy_corpus_config(n_train + 50)
    full = generate_toy_corpus(corpus_cfg, seed)
    train_m, val_m = split_manifest(full, n_train)
    fps = int(full.metadata["frames_per_symbol"])
    timings["corpus"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tok, tok_res = train_tokenizer_stage(
        train_m, val_m, seed=seed, max_steps=tokenizer_steps,
        checkpoint_path=paths.get("tokenizer"), log_path=paths.get("tokenizer_log"),
    )
    alignment = token_symbol_alignment(tok, train_m, fps, corpus_cfg.tgt_vocab)
    timings["tokenizer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model, model_res = train_model_stage(
        train_m, val_m, tok, cfg=toy_model_config(projector), seed=seed,
        max_steps=model_steps,
        checkpoint_path=paths.get("model"), log_path=paths.get("model_log"),
    )
    timings["model"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    voc, voc_res, embedder = train_vocoder_stage(
        train_m, val_m, tok, seed=seed, max_steps=vocoder_steps,
        checkpoint_path=paths.get("vocoder"), log_path=paths.get("vocoder_log"),
    )
    timings["vocoder"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    prompts = same_speaker_prompts(val_m)
    row, _ = evaluation.evaluate_translation(
        model=model, tokenizer=tok, vocoder=voc, embedder=embedder,
        alignment=alignment, records=val_m, prompts=prompts,
        frames_per_symbol=fps, decode_cfg=decode_cfg,
    )
    report = evaluation.EvalReport(
        rows=[row],
        metadata={"seed": seed, "train_pairs": len(train_m), "val_pairs": len(val_m)},
    )
    timings["evaluation"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())

    if out_dir is not None:
        out = Path(out_dir)
        (out / "report.txt").write_text(report.render_text())
        (out / "report.kv").write_text(report.to_kv())

    return PipelineRun(
        seed=seed, train_m=train_m, val_m=val_m, tokenizer=tok, model=model,
        vocoder=voc, embedder=embedder, alignment=alignment,
        tokenizer_result=tok_res, model_result=model_res, vocoder_result=voc_res,
        report=report, timings=timings,
    )
