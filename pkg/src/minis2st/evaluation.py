"""Metrics and experiment reports.

Corpus BLEU (n=1..4, add-one smoothing above unigrams, brevity penalty), a
reduced METEOR over exact unigram alignments, speaker similarity through the
fixed embedder, and the two ablation suites (projector variants, token source)
that train systems under one seed and render comparison reports.

Translated speech is scored by re-quantizing the synthesized frames with the
trained tokenizer and reading symbols off the majority-vote alignment table;
this stands in for an external ASR system at this scale.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Manifest, cosine_similarity


# ---------------------------------------------------------------- text metrics


def _ngrams(seq, n: int):
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def corpus_bleu(hyps, refs) -> float:
    """Corpus-level BLEU in [0, 100].

    Geometric mean of clipped n-gram precisions for n=1..4 with add-one
    smoothing on n >= 2, times the brevity penalty exp(1 - r/c) when c < r.
    Identical corpora score exactly 100.0; zero unigram overlap scores 0.0.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"corpus size mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    if not hyps:
        raise ValueError("corpus_bleu needs a non-empty corpus")
    c = sum(len(h) for h in hyps)
    r = sum(len(rf) for rf in refs)
    log_p = 0.0
    for n in range(1, 5):
        match = 0
        total = 0
        for h, rf in zip(hyps, refs):
            hc = Counter(_ngrams(h, n))
            rc = Counter(_ngrams(rf, n))
            match += sum(min(k, rc[g]) for g, k in hc.items())
            total += max(0, len(h) - n + 1)
        if n >= 2:
            match += 1
            total += 1
        if match == 0 or total == 0:
            return 0.0
        log_p += math.log(match / total)
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return float(100.0 * bp * math.exp(log_p / 4.0))


def meteor_lite(hyp, ref) -> float:
    """Unigram-only METEOR: harmonic mean F (recall-weighted, alpha=0.9) times
    a fragmentation penalty 0.5 * (chunks/matches)^3.

    Alignment is greedy left to right: each hypothesis token takes the first
    unmatched identical reference token.  Zero matches (including empty
    inputs) score 0.0.  Stemming and synonymy are out of scope.
    """
    hyp = list(hyp)
    ref = list(ref)
    taken = [False] * len(ref)
    pairs = []  # (hyp position, ref position)
    for hi, tok in enumerate(hyp):
        for ri, rtok in enumerate(ref):
            if not taken[ri] and rtok == tok:
                taken[ri] = True
                pairs.append((hi, ri))
                break
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(hyp)
    r = m / len(ref)
    f = p * r / (0.9 * p + 0.1 * r)
    chunks = 1
    for (h0, r0), (h1, r1) in zip(pairs, pairs[1:]):
        if h1 != h0 + 1 or r1 != r0 + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return float(f * (1.0 - penalty))


def speaker_similarity(gen, prompt, embedder) -> float:
    """Cosine between speaker embeddings of generated and prompt frames."""
    return cosine_similarity(embedder.embed(gen), embedder.embed(prompt))


# ----------------------------------------------------------- external scorers


class ExternalScorer:
    """Adapter seam for learned metrics (BLEURT/COMET class).

    Implementations provide score(hyps, refs) -> list of floats, one per pair.
    Nothing learned ships here; reports add a column per registered scorer.
    """

    def score(self, hyps, refs):  # pragma: no cover - interface only
        raise NotImplementedError


# -------------------------------------------------------------------- reports


@dataclass
class EvalRow:
    system: str
    count: int
    bleu: float | None = None
    meteor: float | None = None
    speaker_sim: float | None = None
    extras: dict = field(default_factory=dict)
    error: str | None = None

    def validate(self):
        if self.bleu is not None and not (0.0 <= self.bleu <= 100.0):
            raise ValueError(f"BLEU {self.bleu} outside [0, 100]")
        if self.meteor is not None and not (0.0 <= self.meteor <= 1.0):
            raise ValueError(f"METEOR {self.meteor} outside [0, 1]")
        if self.speaker_sim is not None and not (-1.0 <= self.speaker_sim <= 1.0):
            raise ValueError(f"speaker similarity {self.speaker_sim} outside [-1, 1]")


@dataclass
class EvalReport:
    rows: list
    metadata: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def validate(self):
        for row in self.rows:
            row.validate()

    def render_text(self) -> str:
        self.validate()

        def fmt(v, spec):
            return "-" if v is None else format(v, spec)

        header = ["system", "bleu", "meteor", "spk_sim", "n"]
        lines = [[r.system, fmt(r.bleu, ".2f"), fmt(r.meteor, ".4f"),
                  fmt(r.speaker_sim, ".4f"), str(r.count)] for r in self.rows]
        widths = [max(len(header[i]), *(len(row[i]) for row in lines)) if lines else len(header[i])
                  for i in range(len(header))]
        out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        out.append("  ".join("-" * w for w in widths))
        for row in lines:
            out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
        for r in self.rows:
            if r.error:
                out.append(f"{r.system}: FAILED: {r.error}")
        for note in self.notes:
            out.append(note)
        return "\n".join(out) + "\n"

    def to_kv(self) -> str:
        self.validate()
        lines = []
        for k in sorted(self.metadata):
            lines.append(f"meta.{k}={self.metadata[k]}")
        for r in self.rows:
            for name in ("bleu", "meteor", "speaker_sim", "count"):
                v = getattr(r, name)
                if v is not None:
                    lines.append(f"{r.system}.{name}={v}")
            for k in sorted(r.extras):
                lines.append(f"{r.system}.{k}={r.extras[k]}")
            if r.error:
                lines.append(f"{r.system}.error={r.error}")
        for i, note in enumerate(self.notes):
            lines.append(f"note.{i}={note}")
        return "\n".join(lines) + "\n"


# ------------------------------------------------- transcription stand-in


def transcribe_frames(frames, tokenizer, alignment: np.ndarray, frames_per_symbol: int) -> list:
    """Frames -> symbol ids: re-quantize, map tokens through the alignment
    table, then majority-vote each frames_per_symbol block (ties and unseen
    tokens resolve to the lowest symbol id / drop out respectively)."""
    if frames_per_symbol < 1:
        raise ValueError("frames_per_symbol must be >= 1")
    mu = tokenizer.tokenize(frames)
    syms = np.asarray([alignment[t] for t in mu], dtype=np.int64)
    out = []
    for lo in range(0, len(syms), frames_per_symbol):
        block = syms[lo : lo + frames_per_symbol]
        block = block[block >= 0]
        if block.size:
            out.append(int(np.bincount(block).argmax()))
    return out


def evaluate_translation(*, model, tokenizer, vocoder, embedder, alignment,
                         records, prompts, frames_per_symbol: int,
                         decode_cfg=None, system: str = "s2st",
                         external_scorers: dict | None = None):
    """Full-chain scoring: translate, synthesize, transcribe, then metrics.

    prompts maps record id -> same-speaker reference record whose target
    frames condition the vocoder.  Returns (EvalRow, details) where details
    carries per-utterance hypotheses/references/similarities for inspection.
    """
    records = list(records)
    if not records:
        raise ValueError("evaluate_translation needs at least one record")
    hyps, refs, sims, texts = [], [], [], []
    for r in records:
        res = model.translate(r.src_frames, decode_cfg)
        prompt = prompts[r.id].tgt_frames
        gen = vocoder.synthesize(res.tokens, embedder.embed(prompt))
        if gen.length:
            hyps.append(transcribe_frames(gen, tokenizer, alignment, frames_per_symbol))
            sims.append(speaker_similarity(gen, prompt, embedder))
        else:
            hyps.append([])
            sims.append(0.0)
        refs.append(list(r.tgt_text))
        texts.append(list(res.text))
    row = EvalRow(
        system=system,
        count=len(records),
        bleu=corpus_bleu(hyps, refs),
        meteor=float(np.mean([meteor_lite(h, rf) for h, rf in zip(hyps, refs)])),
        speaker_sim=float(np.mean(sims)),
        extras={"text_bleu": corpus_bleu(texts, refs)},
    )
    for name, scorer in (external_scorers or {}).items():
        row.extras[name] = float(np.mean(scorer.score(hyps, refs)))
    row.validate()
    return row, {"hyps": hyps, "refs": refs, "sims": sims, "texts": texts}


def timbre_separation(*, vocoder, embedder, tokenizer, records, matched, mismatched) -> float:
    """Fraction of records where synthesis conditioned on the matched speaker
    lands closer (cosine) to that speaker's prompt than to a mismatched one."""
    records = list(records)
    if not records:
        raise ValueError("timbre_separation needs at least one record")
    wins = 0
    for r in records:
        mu = tokenizer.tokenize(r.tgt_frames)
        e_m = embedder.embed(matched[r.id].tgt_frames)
        e_x = embedder.embed(mismatched[r.id].tgt_frames)
        e_g = embedder.embed(vocoder.synthesize(mu, e_m))
        wins += int(cosine_similarity(e_g, e_m) > cosine_similarity(e_g, e_x))
    return wins / len(records)


# ------------------------------------------------------------------ ablations


def steps_to_half_loss(trace, window: int = 10):
    """First step (1-based) where the windowed mean loss falls to half the
    initial windowed mean; None when the trace never gets there."""
    if not trace:
        return None
    w = min(window, len(trace))
    start = float(np.mean(trace[:w]))
    target = start / 2.0
    for i in range(len(trace)):
        lo = max(0, i - w + 1)
        if float(np.mean(trace[lo : i + 1])) <= target:
            return i + 1
    return None


def _ablation_row(name: str, *, model, tokenizer, vocoder, embedder, alignment,
                  eval_records, prompts, frames_per_symbol, trace) -> EvalRow:
    row, _ = evaluate_translation(
        model=model, tokenizer=tokenizer, vocoder=vocoder, embedder=embedder,
        alignment=alignment, records=eval_records, prompts=prompts,
        frames_per_symbol=frames_per_symbol, system=name,
    )
    row.extras["final_train_loss"] = float(trace[-1]) if trace else None
    half = steps_to_half_loss(trace)
    if half is not None:
        row.extras["steps_to_half_loss"] = half
    return row


def run_ablation(suite: str, *, train_m: Manifest, val_m: Manifest, eval_m: Manifest,
                 tokenizer, vocoder, embedder, alignment, seed: int = 0,
                 model_cfg=None, train_cfg=None, max_steps=None, val_limit=None):
    """Train and score the configured variants under one seed and data split.

    suite "projectors": linear / conv1d-linear / qformer-2 / qformer-4.
    suite "token_source": decoder targets from speech-derived vs text-derived
    semantic tokens.  A variant that raises is reported as failed while the
    rest proceed.  Returns (EvalReport, {variant: per-step loss trace}).
    """
    from . import pipeline  # late import: pipeline builds on this module

    fps = int(train_m.metadata.get("frames_per_symbol", 4))
    eval_prompts = pipeline.same_speaker_prompts(eval_m)
    base_cfg = model_cfg if model_cfg is not None else pipeline.toy_model_config()
    rows, curves, notes = [], {}, []

    if suite == "projectors":
        variants = [
            ("linear", {"projector": "linear"}),
            ("conv1d-linear", {"projector": "conv1d"}),
            ("qformer-2", {"projector": "qformer", "qformer_blocks": 2}),
            ("qformer-4", {"projector": "qformer", "qformer_blocks": 4}),
        ]
        for name, over in variants:
            trace: list = []
            try:
                model, _ = pipeline.train_model_stage(
                    train_m, val_m, tokenizer,
                    cfg=replace(base_cfg, **over), tcfg=train_cfg, seed=seed,
                    max_steps=max_steps, val_limit=val_limit, loss_trace=trace,
                )
                rows.append(_ablation_row(
                    name, model=model, tokenizer=tokenizer, vocoder=vocoder,
                    embedder=embedder, alignment=alignment, eval_records=eval_m,
                    prompts=eval_prompts, frames_per_symbol=fps, trace=trace))
            except Exception as exc:  # isolate the failing variant
                rows.append(EvalRow(system=name, count=0, error=str(exc)))
            curves[name] = trace
        halves = {r.system: r.extras.get("steps_to_half_loss") for r in rows if not r.error}
        lin = halves.get("linear")
        qf = [halves.get(k) for k in ("qformer-2", "qformer-4")]
        if lin is None or any(v is None for v in qf):
            notes.append("faster convergence for higher-capacity projectors: inconclusive")
        else:
            verdict = "observed" if min(qf) < lin else "not observed"
            notes.append(f"faster convergence for higher-capacity projectors: {verdict}")
    elif suite == "token_source":
        t2t = None
        for name, source in (("speech-tokens", "speech"), ("text-tokens", "text")):
            trace = []
            try:
                if source == "text" and t2t is None:
                    t2t, _ = pipeline.train_text_to_token_stage(
                        train_m, val_m, tokenizer, seed=seed, embedder=embedder,
                        max_steps=max_steps, val_limit=val_limit,
                    )
                model, _ = pipeline.train_model_stage(
                    train_m, val_m, tokenizer,
                    cfg=base_cfg, tcfg=train_cfg, seed=seed,
                    token_source=source, text_to_token=t2t, embedder=embedder,
                    max_steps=max_steps, val_limit=val_limit, loss_trace=trace,
                )
                rows.append(_ablation_row(
                    name, model=model, tokenizer=tokenizer, vocoder=vocoder,
                    embedder=embedder, alignment=alignment, eval_records=eval_m,
                    prompts=eval_prompts, frames_per_symbol=fps, trace=trace))
            except Exception as exc:
                rows.append(EvalRow(system=name, count=0, error=str(exc)))
            curves[name] = trace
        by_name = {r.system: r for r in rows}
        sp, tx = by_name.get("speech-tokens"), by_name.get("text-tokens")
        if sp and tx and not sp.error and not tx.error and sp.bleu and sp.bleu > 0:
            delta = (sp.bleu - tx.bleu) / sp.bleu * 100.0
            notes.append(f"relative BLEU degradation of {delta:.2f}% with text-derived tokens")
        else:
            notes.append("relative BLEU degradation: undefined (missing or zero baseline)")
    else:
        raise ValueError(f"unknown ablation suite {suite!r}")

    report = EvalReport(
        rows=rows,
        metadata={
            "suite": suite,
            "seed": seed,
            "train_pairs": len(train_m),
            "eval_pairs": len(eval_m),
            "max_steps": max_steps,
        },
        notes=notes,
    )
    report.validate()
    return report, curves
