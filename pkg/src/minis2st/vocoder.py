"""Token-to-frames synthesis with speaker-timbre conditioning.

The speaker embedder is a fixed seeded network (per-frame projection, mean+std
pooling, unit-norm output) and is never trained.  The vocoder proper is a
conditioned regression decoder: the speaker embedding is concatenated to every
token embedding, a small non-causal transformer contextualizes the sequence,
and an output head paints `upsample` frames per token.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .corpus import SpeechFrames
from .tensor import Tensor, embedding_lookup, no_grad, reshape, rng_for


@dataclass
class VocoderConfig:
    feat_dim: int = 8
    audio_vocab: int = 64
    token_dim: int = 32
    d_model: int = 64
    blocks: int = 2
    heads: int = 4
    upsample: int = 1   # frames emitted per token
    spk_dim: int = 16
    frame_rate: int = 50

    def validate(self):
        if min(self.feat_dim, self.audio_vocab, self.token_dim, self.d_model,
               self.blocks, self.heads, self.upsample, self.spk_dim) < 1:
            raise ValueError("vocoder config sizes must be >= 1")


class SpeakerEmbedder:
    """Deterministic frames -> unit-norm speaker vector. Fixed weights, no grads."""

    def __init__(self, feat_dim: int, spk_dim: int = 16, hidden: int = 32, seed: int = 0):
        rng = rng_for(seed, "speaker_embedder")
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(feat_dim), size=(feat_dim, hidden))
        self.b1 = rng.normal(0.0, 0.1, size=hidden)
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(2 * hidden), size=(2 * hidden, spk_dim))
        self.spk_dim = spk_dim
        self.feat_dim = feat_dim

    def embed(self, frames) -> np.ndarray:
        f = frames.frames if isinstance(frames, SpeechFrames) else np.asarray(frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError(f"speaker embedding needs at least one frame, got shape {f.shape}")
        if f.shape[1] != self.feat_dim:
            raise ValueError(f"feature dim {f.shape[1]} != embedder dim {self.feat_dim}")
        a = np.tanh(f @ self.w1 + self.b1)
        pooled = np.concatenate([a.mean(axis=0), a.std(axis=0)])
        v = pooled @ self.w2
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ValueError("degenerate speaker embedding (zero norm)")
        return v / n


class TimbreVocoder(nn.Module):
    def __init__(self, cfg: VocoderConfig, seed: int = 0):
        cfg.validate()
        rng = rng_for(seed, "vocoder")
        self.token_embed = nn.param(rng, (cfg.audio_vocab, cfg.token_dim), scale=0.02)
        self.in_proj = nn.Linear(cfg.token_dim + cfg.spk_dim, cfg.d_model, rng)
        self.blocks = [nn.TransformerBlock(cfg.d_model, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.ln = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.upsample * cfg.feat_dim, rng)
        self.cfg = cfg

    def forward_frames(self, tokens, spk: np.ndarray) -> Tensor:
        """Differentiable synthesis; output shape (upsample * len(tokens), feat_dim)."""
        cfg = self.cfg
        spk = np.asarray(spk, dtype=np.float64)
        if spk.shape != (cfg.spk_dim,):
            raise ValueError(f"speaker embedding shape {spk.shape} != ({cfg.spk_dim},)")
        if abs(np.linalg.norm(spk) - 1.0) > 1e-6:
            raise ValueError("speaker embedding must be unit-norm")
        toks = list(tokens)
        for t in toks:
            if not (0 <= t < cfg.audio_vocab):
                raise IndexError(f"token {t} outside codebook of size {cfg.audio_vocab}")
        if not toks:
            return Tensor(np.zeros((0, cfg.feat_dim)))
        emb = embedding_lookup(self.token_embed, toks)
        cond = Tensor(np.broadcast_to(spk, (len(toks), cfg.spk_dim)).copy())
        x = nn.add_positions(self.in_proj(nn.concat_features(emb, cond)))
        for blk in self.blocks:
            x = blk(x)
        out = self.head(self.ln(x))  # (T, U*F)
        return reshape(out, (len(toks) * cfg.upsample, cfg.feat_dim))

    def synthesize(self, tokens, spk: np.ndarray) -> SpeechFrames:
        with no_grad():
            frames = self.forward_frames(tokens, spk)
        return SpeechFrames(frames.data, self.cfg.frame_rate)
