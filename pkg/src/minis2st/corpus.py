"""Bilingual utterance corpus: types, toy generator, similarity filter, disk formats.

A manifest is line-delimited JSON (first line metadata, one utterance per
following line) with per-utterance frame matrices in binary sidecar files.
Frame files hold raw float64 little-endian data so round-trips are bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import rng_for

FRAME_MAGIC = b"DS2F"
FRAME_VERSION = 1


class ParseError(ValueError):
    """Malformed manifest or frame file; message carries file and line."""


@dataclass
class SpeechFrames:
    """A (T, F) float64 feature matrix at a nominal frame rate (default 50 Hz)."""

    frames: np.ndarray
    frame_rate: int = 50

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-d (T, F), got shape {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("frames contain non-finite values")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SpeechFrames):
            return NotImplemented
        return self.frame_rate == other.frame_rate and np.array_equal(self.frames, other.frames)


@dataclass
class UtterancePair:
    id: str
    src_text: list
    tgt_text: list
    src_frames: SpeechFrames
    tgt_frames: SpeechFrames
    speaker: str
    similarity: float

    def __eq__(self, other):
        if not isinstance(other, UtterancePair):
            return NotImplemented
        return (
            self.id == other.id
            and self.src_text == other.src_text
            and self.tgt_text == other.tgt_text
            and self.src_frames == other.src_frames
            and self.tgt_frames == other.tgt_frames
            and self.speaker == other.speaker
            and self.similarity == other.similarity
        )


@dataclass
class Manifest:
    records: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        if not isinstance(other, Manifest):
            return NotImplemented
        return self.metadata == other.metadata and self.records == other.records

    def ids(self):
        return [r.id for r in self.records]


# ------------------------------------------------------------------ metrics


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|), clamped to [-1, 1].

    Both vectors zero is undefined and raises; exactly one zero returns 0.0
    (orthogonality convention).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"cosine_similarity: shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        raise ValueError("cosine_similarity undefined: both vectors are zero")
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def filter_by_similarity(m: Manifest, threshold: float = 0.9, inclusive: bool = False) -> Manifest:
    """Keep records with similarity above the threshold (strictly, by default).

    Order-preserving, never mutates records, idempotent at a fixed threshold.
    """
    if inclusive:
        kept = [r for r in m.records if r.similarity >= threshold]
    else:
        kept = [r for r in m.records if r.similarity > threshold]
    meta = dict(m.metadata)
    meta["frame_count"] = int(sum(r.src_frames.length for r in kept))
    return Manifest(records=kept, metadata=meta)


# ------------------------------------------------------------- toy corpus


@dataclass
class ToyCorpusConfig:
    src_vocab: int = 20
    tgt_vocab: int = 20
    len_min: int = 3
    len_max: int = 8
    pairs: int = 500
    speakers: int = 4
    feat_dim: int = 8
    frames_per_symbol: int = 4
    noise_std: float = 0.05
    speaker_offset_std: float = 0.3
    frame_rate: int = 50
    name: str = "toy"
    language_pair: str = "src-tgt"

    def validate(self):
        if self.src_vocab < 1 or self.tgt_vocab < 1:
            raise ValueError("vocab sizes must be >= 1")
        if self.tgt_vocab < self.src_vocab:
            raise ValueError(
                f"invertible symbol map needs tgt_vocab >= src_vocab "
                f"({self.tgt_vocab} < {self.src_vocab})"
            )
        if not (1 <= self.len_min <= self.len_max):
            raise ValueError(f"bad length range [{self.len_min}, {self.len_max}]")
        if self.pairs < 0 or self.speakers < 1 or self.feat_dim < 1:
            raise ValueError("pairs must be >= 0, speakers and feat_dim >= 1")
        if self.frames_per_symbol < 1:
            raise ValueError("frames_per_symbol must be >= 1")


def toy_symbol_map(cfg: ToyCorpusConfig, seed: int) -> list:
    """The published source->target symbol map: an injective seeded draw."""
    rng = rng_for(seed, "toy.symbol_map")
    return [int(v) for v in rng.permutation(cfg.tgt_vocab)[: cfg.src_vocab]]


def toy_templates(cfg: ToyCorpusConfig, seed: int, side: str) -> np.ndarray:
    """Per-symbol frame templates, shape (vocab, frames_per_symbol, feat_dim)."""
    vocab = cfg.src_vocab if side == "src" else cfg.tgt_vocab
    rng = rng_for(seed, f"toy.templates.{side}")
    return rng.normal(0.0, 1.0, size=(vocab, cfg.frames_per_symbol, cfg.feat_dim))


def render_symbols(symbols, templates, noise_std, rng, offset=None) -> np.ndarray:
    blocks = [templates[s] for s in symbols]
    frames = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, templates.shape[2]))
    if offset is not None:
        frames = frames + offset
    if noise_std > 0 and frames.size:
        frames = frames + rng.normal(0.0, noise_std, size=frames.shape)
    return frames


def generate_toy_corpus(cfg: ToyCorpusConfig, seed: int) -> Manifest:
    """Deterministic synthetic bilingual corpus.

    Target text is the symbol map applied to the reversed source sentence;
    frames render one fixed template block per symbol plus isotropic noise,
    and target frames additionally carry a per-speaker constant offset.
    """
    cfg.validate()
    sym_map = toy_symbol_map(cfg, seed)
    src_tpl = toy_templates(cfg, seed, "src")
    tgt_tpl = toy_templates(cfg, seed, "tgt")
    spk_rng = rng_for(seed, "toy.speakers")
    offsets = spk_rng.normal(0.0, cfg.speaker_offset_std, size=(cfg.speakers, cfg.feat_dim))
    rng = rng_for(seed, "toy.pairs")

    records = []
    for i in range(cfg.pairs):
        n = int(rng.integers(cfg.len_min, cfg.len_max + 1))
        src = [int(s) for s in rng.integers(0, cfg.src_vocab, size=n)]
        tgt = [sym_map[s] for s in reversed(src)]
        spk = int(rng.integers(0, cfg.speakers))
        src_frames = render_symbols(src, src_tpl, cfg.noise_std, rng)
        tgt_frames = render_symbols(tgt, tgt_tpl, cfg.noise_std, rng, offset=offsets[spk])
        records.append(
            UtterancePair(
                id=f"utt{i:05d}",
                src_text=src,
                tgt_text=tgt,
                src_frames=SpeechFrames(src_frames, cfg.frame_rate),
                tgt_frames=SpeechFrames(tgt_frames, cfg.frame_rate),
                speaker=f"spk{spk}",
                similarity=1.0,
            )
        )

    metadata = {
        "name": cfg.name,
        "language_pair": cfg.language_pair,
        "frame_rate": cfg.frame_rate,
        "frame_count": int(sum(r.src_frames.length for r in records)),
        "src_vocab": cfg.src_vocab,
        "tgt_vocab": cfg.tgt_vocab,
        "feat_dim": cfg.feat_dim,
        "frames_per_symbol": cfg.frames_per_symbol,
        "speakers": cfg.speakers,
        "symbol_map": sym_map,
        "seed": seed,
    }
    return Manifest(records=records, metadata=metadata)


# ----------------------------------------------------------------- disk I/O


def write_frames(path, sf: SpeechFrames):
    data = np.ascontiguousarray(sf.frames, dtype="<f8")
    t, f = data.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<III", FRAME_VERSION, t, f))
        fh.write(data.tobytes())


def read_frames(path, frame_rate: int = 50) -> SpeechFrames:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FRAME_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {FRAME_MAGIC!r}")
        version, t, f = struct.unpack("<III", fh.read(12))
        if version != FRAME_VERSION:
            raise ParseError(f"{path}: unsupported frame-file version {version}")
        payload = fh.read(8 * t * f)
        if len(payload) != 8 * t * f:
            raise ParseError(f"{path}: truncated payload ({len(payload)} of {8 * t * f} bytes)")
    frames = np.frombuffer(payload, dtype="<f8").reshape(t, f).astype(np.float64)
    return SpeechFrames(frames, frame_rate)


def _frames_dir(manifest_path: Path) -> Path:
    return manifest_path.parent / f"{manifest_path.stem}.frames"


def write_manifest(m: Manifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fdir = _frames_dir(path)
    fdir.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"manifest": m.metadata}, sort_keys=True)]
    for r in m.records:
        src_rel = f"{fdir.name}/{r.id}.src.ds2f"
        tgt_rel = f"{fdir.name}/{r.id}.tgt.ds2f"
        write_frames(path.parent / src_rel, r.src_frames)
        write_frames(path.parent / tgt_rel, r.tgt_frames)
        lines.append(
            json.dumps(
                {
                    "id": r.id,
                    "speaker": r.speaker,
                    "similarity": r.similarity,
                    "src_text": list(r.src_text),
                    "tgt_text": list(r.tgt_text),
                    "src_frames": src_rel,
                    "tgt_frames": tgt_rel,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    metadata = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: invalid record: {e}") from e
            if lineno == 1 and "manifest" in obj:
                metadata = obj["manifest"]
                continue
            try:
                rate = int(metadata.get("frame_rate", 50))
                records.append(
                    UtterancePair(
                        id=obj["id"],
                        src_text=list(obj["src_text"]),
                        tgt_text=list(obj["tgt_text"]),
                        src_frames=read_frames(path.parent / obj["src_frames"], rate),
                        tgt_frames=read_frames(path.parent / obj["tgt_frames"], rate),
                        speaker=obj["speaker"],
                        similarity=float(obj["similarity"]),
                    )
                )
            except KeyError as e:
                raise ParseError(f"{path}:{lineno}: missing field {e}") from e
    return Manifest(records=records, metadata=metadata)


# -------------------------------------------------------------------- stats


def human_count(n: int) -> str:
    if n >= 1_000_000:
        return f"{n / 1_000_000:g}M"
    if n >= 1_000:
        return f"{n / 1_000:g}K"
    return str(n)


@dataclass
class StatsReport:
    records: int
    src_frames: int
    tgt_frames: int
    frame_rate: int
    per_speaker: dict

    @property
    def duration_s(self) -> float:
        """Duration proxy: source frames over the nominal frame rate."""
        return self.src_frames / self.frame_rate

    @property
    def duration_h(self) -> float:
        return self.duration_s / 3600.0

    def render_text(self) -> str:
        rows = [
            ("records", f"{self.records} ({human_count(self.records)})"),
            ("source frames", f"{self.src_frames} ({human_count(self.src_frames)})"),
            ("target frames", f"{self.tgt_frames} ({human_count(self.tgt_frames)})"),
            ("duration proxy", f"{self.duration_s:.1f} s ({self.duration_h:.1f} h)"),
        ]
        for spk in sorted(self.per_speaker):
            rows.append((f"speaker {spk}", str(self.per_speaker[spk])))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"

    def to_kv(self) -> str:
        lines = [
            f"records={self.records}",
            f"src_frames={self.src_frames}",
            f"tgt_frames={self.tgt_frames}",
            f"frame_rate={self.frame_rate}",
            f"duration_s={self.duration_s!r}",
            f"duration_h={self.duration_h!r}",
        ]
        for spk in sorted(self.per_speaker):
            lines.append(f"speaker.{spk}={self.per_speaker[spk]}")
        return "\n".join(lines) + "\n"


def corpus_stats(m: Manifest) -> StatsReport:
    per_speaker = {}
    for r in m.records:
        per_speaker[r.speaker] = per_speaker.get(r.speaker, 0) + 1
    return StatsReport(
        records=len(m.records),
        src_frames=int(sum(r.src_frames.length for r in m.records)),
        tgt_frames=int(sum(r.tgt_frames.length for r in m.records)),
        frame_rate=int(m.metadata.get("frame_rate", 50)),
        per_speaker=per_speaker,
    )
