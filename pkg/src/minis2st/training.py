"""Training engine: Adam, warmup/decay schedule, early stopping, checkpoints.

The loop is deterministic given (config, seed): batch order is a seeded
per-epoch shuffle bucketed by example length, and all in-loop randomness flows
through one checkpointed generator.  Checkpoints carry parameters, optimizer
moments, auxiliary state arrays, the RNG state, and validation bookkeeping, so
resuming reproduces an uninterrupted run bit for bit.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import ParseError
from .tensor import Tape, backward, rng_for, seed_for


class NumericError(RuntimeError):
    """Loss or validation diverged (NaN/inf)."""


class VersionError(RuntimeError):
    """Checkpoint version or kind does not match what the reader expects."""


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    warmup_steps: int = 50
    decay_gamma: float = 0.85
    max_epochs: int = 4
    validate_every: int = 200
    lambda_audio: float = 1.0
    lambda_text: float = 1.0
    patience: int = 3
    min_delta: float = 1e-4
    decay_granularity: str = "epoch"  # or "validation"
    seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.warmup_steps, self.max_epochs,
               self.validate_every, self.patience) <= 0:
            raise ConfigError("lr, batch_size, warmup_steps, max_epochs, "
                              "validate_every and patience must all be positive")
        if not (0.0 < self.decay_gamma <= 1.0):
            raise ConfigError(f"decay_gamma must be in (0, 1], got {self.decay_gamma}")
        if self.lambda_audio < 0 or self.lambda_text < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if self.decay_granularity not in ("epoch", "validation"):
            raise ConfigError(f"unknown decay granularity {self.decay_granularity!r}")


def lr_schedule(step: int, post_warmup_units: int, cfg: TrainConfig) -> float:
    """Linear warmup to base lr, then stepwise gamma decay.

    `post_warmup_units` counts completed decay units (epochs by default) since
    the unit in which warmup finished; the boundary is continuous because unit
    zero applies gamma^0.
    """
    if step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    return cfg.lr * cfg.decay_gamma ** post_warmup_units


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = dict(sorted(params.items()))
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[name] / c1
            vhat = self.v[name] / c2
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# -------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DS2C"
CKPT_VERSION = 1


@dataclass
class CheckpointState:
    kind: str
    config: dict
    step: int
    tensors: dict
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, st: CheckpointState):
    names = sorted(st.tensors)
    header = {
        "kind": st.kind,
        "config": st.config,
        "step": st.step,
        "rng_state": st.rng_state,
        "meta": st.meta,
        "tensors": [{"name": n, "shape": list(np.asarray(st.tensors[n]).shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(st.tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise ParseError(f"{path}: not a checkpoint file (magic {magic!r})")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CKPT_VERSION:
            raise VersionError(
                f"{path}: checkpoint version {version}, this build reads {CKPT_VERSION}"
            )
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise ParseError(f"{path}: truncated tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return CheckpointState(
        kind=header["kind"],
        config=header["config"],
        step=header["step"],
        tensors=tensors,
        rng_state=header.get("rng_state"),
        meta=header.get("meta", {}),
    )


def expect_kind(st: CheckpointState, kind: str) -> CheckpointState:
    if st.kind != kind:
        raise VersionError(f"checkpoint holds a {st.kind!r} model, expected {kind!r}")
    return st


# ------------------------------------------------------------ train engine


@dataclass
class TrainResult:
    steps: int
    best_val: float
    val_history: list
    stopped_early: bool
    best_step: int


def _epoch_batches(n: int, batch_size: int, epoch: int, seed: int, lengths=None):
    """Seeded shuffle, stable length bucketing, then shuffled batch order."""
    rng = rng_for(seed, f"train.order.epoch{epoch}")
    idx = list(rng.permutation(n))
    if lengths is not None:
        idx.sort(key=lambda i: lengths[i])  # stable: same-length items stay shuffled
    batches = [idx[i : i + batch_size] for i in range(0, n, batch_size)]
    order = rng.permutation(len(batches))
    return [batches[j] for j in order]


def train(*, params: dict, examples, loss_fn, val_fn, cfg: TrainConfig,
          lengths=None, state_arrays=None, on_epoch_end=None,
          checkpoint_path=None, log_path=None, resume_from: CheckpointState | None = None,
          kind: str = "model", config_snapshot: dict | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Generic loop: batches -> loss_fn -> backward -> Adam, validating on schedule.

    loss_fn(batch, rng) returns (scalar loss Tensor, {name: float} extras);
    val_fn() returns a float.  Improvements (by >= min_delta) refresh the best
    checkpoint; `patience` flat validations stop the run; a non-finite loss
    aborts with NumericError after the best checkpoint is already on disk.
    """
    n = len(examples)
    if n == 0:
        raise ConfigError("empty training set")
    state_arrays = state_arrays or {}
    bpe = math.ceil(n / cfg.batch_size)
    adam = Adam(params)
    rng = np.random.default_rng(seed_for(cfg.seed, "train.rng"))
    step = 0
    best_val = math.inf
    best_step = 0
    bad = 0
    val_history = []
    epochs_done = 0  # completed on_epoch_end callbacks

    if resume_from is not None:
        st = resume_from
        for name, p in params.items():
            if name not in st.tensors:
                raise VersionError(f"checkpoint missing parameter {name!r}")
            p.data = st.tensors[name].copy()
            adam.m[name] = st.tensors[f"opt.m.{name}"].copy()
            adam.v[name] = st.tensors[f"opt.v.{name}"].copy()
        for key, arr in state_arrays.items():
            skey = f"state.{key}"
            if skey not in st.tensors:
                raise VersionError(f"checkpoint missing state array {skey!r}")
            arr[...] = st.tensors[skey]
        adam.t = int(st.meta["adam_t"])
        step = st.step
        best_val = float(st.meta["best_val"])
        best_step = int(st.meta.get("best_step", 0))
        bad = int(st.meta["bad"])
        val_history = [tuple(v) for v in st.meta["val_history"]]
        epochs_done = int(st.meta.get("epochs_done", step // bpe))
        if st.rng_state is not None:
            rng.bit_generator.state = st.rng_state

    def snapshot() -> CheckpointState:
        tensors = {name: p.data.copy() for name, p in params.items()}
        for name in params:
            tensors[f"opt.m.{name}"] = adam.m[name].copy()
            tensors[f"opt.v.{name}"] = adam.v[name].copy()
        for key, arr in state_arrays.items():
            tensors[f"state.{key}"] = np.asarray(arr, dtype=np.float64).copy()
        return CheckpointState(
            kind=kind,
            config=config_snapshot or {},
            step=step,
            tensors=tensors,
            rng_state=rng.bit_generator.state,
            meta={
                "adam_t": adam.t,
                "best_val": best_val,
                "best_step": best_step,
                "bad": bad,
                "val_history": [list(v) for v in val_history],
                "epochs_done": epochs_done,
            },
        )

    def current_lr() -> float:
        if step <= cfg.warmup_steps:
            return lr_schedule(step, 0, cfg)
        if cfg.decay_granularity == "epoch":
            units = (step - 1) // bpe - cfg.warmup_steps // bpe
        else:
            units = (step - 1) // cfg.validate_every - cfg.warmup_steps // cfg.validate_every
        return lr_schedule(step, max(0, units), cfg)

    log_fh = open(log_path, "a" if resume_from is not None else "w") if log_path else None
    saved_any = False
    early = False
    capped = False
    try:
        start_epoch = step // bpe
        # a checkpoint written at an epoch's last step predates that epoch's
        # callback; replay it so resumed and uninterrupted runs agree
        if (on_epoch_end is not None and step == start_epoch * bpe
                and 0 < start_epoch and epochs_done < start_epoch):
            on_epoch_end(start_epoch - 1, rng)
            epochs_done = start_epoch
        for epoch in range(start_epoch, cfg.max_epochs):
            batches = _epoch_batches(n, cfg.batch_size, epoch, cfg.seed, lengths)
            for batch in batches[step - epoch * bpe :]:
                if max_steps is not None and step >= max_steps:
                    capped = True
                    break
                step += 1
                lr = current_lr()
                with Tape():
                    loss, extras = loss_fn([examples[i] for i in batch], rng)
                lval = float(loss.data)
                if not np.isfinite(lval):
                    raise NumericError(
                        f"non-finite training loss at step {step}; "
                        f"best checkpoint (step {best_step}) retained"
                    )
                backward(loss)
                adam.step(lr)
                adam.zero_grad()
                if log_fh:
                    rec = {"step": step, "loss": lval}
                    rec.update({k: float(v) for k, v in sorted(extras.items())})
                    rec["lr"] = lr
                    log_fh.write(json.dumps(rec) + "\n")
                if step % cfg.validate_every == 0:
                    val = float(val_fn())
                    if not np.isfinite(val):
                        raise NumericError(
                            f"non-finite validation loss at step {step}; "
                            f"best checkpoint (step {best_step}) retained"
                        )
                    val_history.append((step, val))
                    if val <= best_val - cfg.min_delta:
                        best_val = val
                        best_step = step
                        bad = 0
                        if checkpoint_path:
                            save_checkpoint(checkpoint_path, snapshot())
                            saved_any = True
                    else:
                        bad += 1
                        if bad >= cfg.patience:
                            early = True
                            break
            if early or capped:
                break
            if on_epoch_end is not None and step == (epoch + 1) * bpe:
                on_epoch_end(epoch, rng)
                epochs_done = epoch + 1
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path and not saved_any and resume_from is None:
        save_checkpoint(checkpoint_path, snapshot())
    return TrainResult(
        steps=step,
        best_val=best_val,
        val_history=val_history,
        stopped_early=early,
        best_step=best_step,
    )
