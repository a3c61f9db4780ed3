"""Semantic speech tokenizer: split encoder around a vector-quantization bottleneck.

Stage-1 encoder turns frames into per-frame continuous vectors, the codebook
snaps each vector to its nearest entry (the semantic token), and the stage-2
encoder re-contextualizes the quantized sequence for an attached text decoder
whose cross-entropy supervises the whole stack.  Token sequences are
length-preserving: one token per input frame, no temporal downsampling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .corpus import Manifest, SpeechFrames
from .tensor import (
    Tensor,
    add,
    embedding_lookup,
    mean,
    mul,
    no_grad,
    rng_for,
    softmax_cross_entropy,
    sub,
)


@dataclass
class TokenizerConfig:
    feat_dim: int = 8
    text_vocab: int = 20
    dim: int = 64
    codebook_size: int = 4096
    enc1_blocks: int = 2
    enc2_blocks: int = 2
    asr_blocks: int = 2
    heads: int = 4
    commitment_beta: float = 0.25

    def validate(self):
        if min(self.feat_dim, self.text_vocab, self.dim, self.codebook_size) < 1:
            raise ValueError("tokenizer config sizes must be >= 1")
        if min(self.enc1_blocks, self.enc2_blocks, self.asr_blocks, self.heads) < 1:
            raise ValueError("tokenizer block/head counts must be >= 1")
        if self.commitment_beta < 0:
            raise ValueError("commitment_beta must be >= 0")


class Codebook(nn.Module):
    """Learnable table of discrete code vectors."""

    def __init__(self, size: int, dim: int, rng: np.random.Generator):
        self.entries = Tensor(rng.normal(0.0, 1.0, size=(size, dim)), requires_grad=True)

    @property
    def size(self) -> int:
        return self.entries.data.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.data.shape[1]


def quantize(h, codebook: Codebook) -> list:
    """Nearest codebook entry per row, squared-L2, ties to the lowest index."""
    hd = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    if hd.ndim != 2:
        raise ValueError(f"quantize expects (T, d) input, got shape {hd.shape}")
    if hd.shape[1] != codebook.dim:
        raise ValueError(
            f"quantize: input dim {hd.shape[1]} != codebook dim {codebook.dim}"
        )
    e = codebook.entries.data
    out = []
    # row chunks keep the (chunk, |C|, d) distance tensor small at paper-scale codebooks
    for lo in range(0, hd.shape[0], 64):
        chunk = hd[lo : lo + 64]
        d2 = ((chunk[:, None, :] - e[None, :, :]) ** 2).sum(axis=2)
        out.extend(int(i) for i in np.argmin(d2, axis=1))
    return out


def dequantize(tokens, codebook: Codebook) -> Tensor:
    """Token indices back to their code vectors, shape (len(tokens), d)."""
    if len(tokens) == 0:
        return Tensor(np.zeros((0, codebook.dim)))
    return embedding_lookup(codebook.entries, list(tokens))


class SplitEncoder(nn.Module):
    """Two encoder stacks with the quantizer sitting between them."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator):
        d = cfg.dim
        self.in_proj = nn.Linear(cfg.feat_dim, d, rng)
        self.enc1 = [nn.TransformerBlock(d, cfg.heads, rng) for _ in range(cfg.enc1_blocks)]
        self.ln_mid = nn.LayerNorm(d)
        self.enc2 = [nn.TransformerBlock(d, cfg.heads, rng) for _ in range(cfg.enc2_blocks)]
        self.ln_out = nn.LayerNorm(d)

    def encode_stage1(self, frames) -> Tensor:
        f = frames.frames if isinstance(frames, SpeechFrames) else np.asarray(frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError(f"encode_stage1 needs at least one frame, got shape {f.shape}")
        x = nn.add_positions(self.in_proj(Tensor(f)))
        for blk in self.enc1:
            x = blk(x)
        return self.ln_mid(x)

    def encode_stage2(self, h_bar: Tensor) -> Tensor:
        x = nn.add_positions(h_bar)
        for blk in self.enc2:
            x = blk(x)
        return self.ln_out(x)


class AsrDecoder(nn.Module):
    """Causal text decoder cross-attending to stage-2 encodings."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator):
        d = cfg.dim
        self.vocab = cfg.text_vocab
        self.bos = cfg.text_vocab
        self.eos = cfg.text_vocab + 1
        self.embed = nn.param(rng, (cfg.text_vocab + 2, d), scale=0.02)
        self.blocks = [
            nn.TransformerBlock(d, cfg.heads, rng, cross=True) for _ in range(cfg.asr_blocks)
        ]
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Linear(d, cfg.text_vocab + 2, rng)

    def logits(self, h_tilde: Tensor, y_in) -> Tensor:
        if len(y_in) == 0:
            raise ValueError("asr decoder needs a non-empty input sequence")
        x = nn.add_positions(embedding_lookup(self.embed, list(y_in)))
        mask = nn.causal_mask(len(y_in))
        for blk in self.blocks:
            x = blk(x, memory=h_tilde, mask=mask)
        return self.head(self.ln_f(x))


class SpeechTokenizer(nn.Module):
    def __init__(self, cfg: TokenizerConfig, seed: int = 0):
        cfg.validate()
        self.encoder = SplitEncoder(cfg, rng_for(seed, "tokenizer.encoder"))
        self.codebook = Codebook(cfg.codebook_size, cfg.dim, rng_for(seed, "tokenizer.codebook"))
        self.asr = AsrDecoder(cfg, rng_for(seed, "tokenizer.asr"))
        self.cfg = cfg

    def tokenize(self, frames) -> list:
        """Frames -> semantic token indices (one per frame)."""
        with no_grad():
            h = self.encoder.encode_stage1(frames)
        return quantize(h, self.codebook)

    def training_losses(self, frames, text):
        """Joint objective for one utterance.

        Returns (total, parts, tokens) where total = asr + codebook + beta*commit;
        the quantization bypass is a straight-through estimator so the text loss
        reaches stage-1 weights, while the codebook/commitment pair pulls codes
        and encodings toward each other.
        """
        h = self.encoder.encode_stage1(frames)
        tokens = quantize(h, self.codebook)
        q = embedding_lookup(self.codebook.entries, tokens)
        diff_cb = sub(q, h.detach())
        codebook_loss = mean(mul(diff_cb, diff_cb))
        diff_cm = sub(h, q.detach())
        commit_loss = mul(mean(mul(diff_cm, diff_cm)), self.cfg.commitment_beta)
        h_bar = add(h, Tensor(q.data - h.data))  # forward: q, gradient: identity to h
        h_tilde = self.encoder.encode_stage2(h_bar)
        y_in = [self.asr.bos] + list(text)
        y_tgt = list(text) + [self.asr.eos]
        asr_loss = softmax_cross_entropy(self.asr.logits(h_tilde, y_in), y_tgt)
        total = add(add(asr_loss, codebook_loss), commit_loss)
        parts = {
            "loss_asr": float(asr_loss.data),
            "loss_codebook": float(codebook_loss.data),
            "loss_commit": float(commit_loss.data),
        }
        return total, parts, tokens


# --------------------------------------------------- token/symbol alignment


def token_symbol_alignment(tok: SpeechTokenizer, manifest: Manifest, frames_per_symbol: int,
                           n_symbols: int) -> np.ndarray:
    """Majority-vote table token -> symbol (-1 where a token never occurs).

    Each target symbol spans frames_per_symbol frames, and the tokenizer is
    length-preserving, so frame i carries symbol text[i // frames_per_symbol].
    """
    counts = np.zeros((tok.codebook.size, n_symbols), dtype=np.int64)
    for r in manifest:
        mu = tok.tokenize(r.tgt_frames)
        for i, t in enumerate(mu):
            s = r.tgt_text[min(i // frames_per_symbol, len(r.tgt_text) - 1)]
            counts[t, s] += 1
    table = np.full(tok.codebook.size, -1, dtype=np.int64)
    used = counts.sum(axis=1) > 0
    table[used] = counts[used].argmax(axis=1)
    return table


def token_purity(tok: SpeechTokenizer, manifest: Manifest, frames_per_symbol: int,
                 n_symbols: int) -> float:
    """Fraction of frames whose token maps back to the true symbol."""
    table = token_symbol_alignment(tok, manifest, frames_per_symbol, n_symbols)
    hit = total = 0
    for r in manifest:
        mu = tok.tokenize(r.tgt_frames)
        for i, t in enumerate(mu):
            s = r.tgt_text[min(i // frames_per_symbol, len(r.tgt_text) - 1)]
            hit += int(table[t] == s)
            total += 1
    return hit / total if total else 0.0


# ------------------------------------------------------ text-to-token model


@dataclass
class TokenGenResult:
    tokens: list
    truncated: bool


class TextToTokenModel(nn.Module):
    """Decoder-only LM mapping target text (plus a speaker slot) to semantic tokens.

    Vocabulary: text symbols, then codebook indices, then BOS/EOS.  The speaker
    embedding enters as a projected soft position at the sequence head.
    Generation is greedy and recomputes the full forward pass every step (no
    attention caching).
    """

    def __init__(self, text_vocab: int, codebook_size: int, spk_dim: int,
                 dim: int = 64, blocks: int = 2, heads: int = 4, seed: int = 0):
        rng = rng_for(seed, "text_to_token")
        self.text_vocab = text_vocab
        self.codebook_size = codebook_size
        self.bos = text_vocab + codebook_size
        self.eos = text_vocab + codebook_size + 1
        total = text_vocab + codebook_size + 2
        self.embed = nn.param(rng, (total, dim), scale=0.02)
        self.spk_proj = nn.Linear(spk_dim, dim, rng)
        self.blocks = [nn.TransformerBlock(dim, heads, rng) for _ in range(blocks)]
        self.ln_f = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, total, rng)

    def _forward(self, ids, spk_emb) -> Tensor:
        spk = self.spk_proj(Tensor(np.asarray(spk_emb, dtype=np.float64)[None, :]))
        toks = embedding_lookup(self.embed, list(ids))
        x = nn.add_positions(nn.concat_rows([spk, toks]))
        mask = nn.causal_mask(x.shape[0])
        for blk in self.blocks:
            x = blk(x, mask=mask)
        return self.head(self.ln_f(x))

    def loss(self, text, tokens, spk_emb) -> Tensor:
        if len(text) == 0:
            raise ValueError("text_to_token loss needs non-empty text")
        ids = [self.bos] + list(text) + [t + self.text_vocab for t in tokens]
        logits = self._forward(ids, spk_emb)
        # position of the last text symbol predicts the first token; the last
        # token position predicts EOS.  +1 offsets for the speaker slot.
        lo = 1 + len(text)
        rows = embedding_lookup(logits, list(range(lo, lo + len(tokens) + 1)))
        targets = [t + self.text_vocab for t in tokens] + [self.eos]
        return softmax_cross_entropy(rows, targets)

    def generate(self, text, spk_emb, max_len: int = 256) -> TokenGenResult:
        if len(text) == 0:
            raise ValueError("text_to_tokens needs non-empty text")
        banned = np.zeros(self.text_vocab + self.codebook_size + 2)
        banned[: self.text_vocab] = -1e30  # only codebook ids and EOS may be emitted
        banned[self.bos] = -1e30
        out = []
        with no_grad():
            for _ in range(max_len):
                ids = [self.bos] + list(text) + [t + self.text_vocab for t in out]
                logits = self._forward(ids, spk_emb).data[-1] + banned
                nxt = int(np.argmax(logits))
                if nxt == self.eos:
                    return TokenGenResult(out, truncated=False)
                out.append(nxt - self.text_vocab)
        return TokenGenResult(out, truncated=True)


def text_to_tokens(model: TextToTokenModel, text, spk_emb, max_len: int = 256) -> TokenGenResult:
    return model.generate(text, spk_emb, max_len=max_len)
