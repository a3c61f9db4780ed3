import json
import math

import numpy as np
import pytest

from minis2st.tensor import Tensor, mean, mul, sub
from minis2st.training import (
    Adam,
    CheckpointState,
    ConfigError,
    NumericError,
    ParseError,
    TrainConfig,
    VersionError,
    _epoch_batches,
    expect_kind,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
    train,
)


# ------------------------------------------------------------- lr schedule


def test_warmup_is_linear_in_step():
    cfg = TrainConfig(lr=1e-4, warmup_steps=50)
    assert lr_schedule(1, 0, cfg) == pytest.approx(2e-6)
    assert lr_schedule(25, 0, cfg) == pytest.approx(5e-5)
    assert lr_schedule(50, 0, cfg) == pytest.approx(1e-4)


def test_decay_applies_gamma_per_unit():
    cfg = TrainConfig(lr=1e-4, warmup_steps=50, decay_gamma=0.85)
    assert lr_schedule(51, 0, cfg) == pytest.approx(1e-4)
    assert lr_schedule(400, 1, cfg) == pytest.approx(8.5e-5)
    assert lr_schedule(900, 2, cfg) == pytest.approx(7.225e-5)


def test_schedule_is_continuous_at_warmup_boundary():
    cfg = TrainConfig(lr=3e-3, warmup_steps=7)
    # unit zero applies gamma^0, so the first post-warmup lr equals the peak
    assert lr_schedule(7, 0, cfg) == lr_schedule(8, 0, cfg) == 3e-3


@pytest.mark.parametrize("kw", [
    {"lr": 0.0},
    {"lr": -1e-4},
    {"batch_size": 0},
    {"warmup_steps": 0},
    {"max_epochs": 0},
    {"validate_every": 0},
    {"patience": 0},
    {"decay_gamma": 0.0},
    {"decay_gamma": 1.2},
    {"lambda_audio": -0.5},
    {"lambda_text": -1.0},
    {"min_delta": -1e-9},
    {"decay_granularity": "steps"},
])
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_config_accepts_gamma_of_one():
    assert TrainConfig(decay_gamma=1.0).decay_gamma == 1.0


# -------------------------------------------------------------------- adam


def _reference_adam_step(data, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return data - lr * mhat / (np.sqrt(vhat) + eps), m, v


def test_adam_matches_hand_stepped_oracle():
    rng = np.random.default_rng(7)
    w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    adam = Adam({"w": w, "b": b})
    ref = {
        "w": (w.data.copy(), np.zeros_like(w.data), np.zeros_like(w.data)),
        "b": (b.data.copy(), np.zeros_like(b.data), np.zeros_like(b.data)),
    }
    for t in range(1, 6):
        gw = rng.standard_normal(w.data.shape)
        gb = rng.standard_normal(b.data.shape)
        w.grad, b.grad = gw, gb
        adam.step(1e-2)
        for name, g in (("w", gw), ("b", gb)):
            d, m, v = ref[name]
            ref[name] = _reference_adam_step(d, g, m, v, t, 1e-2)
    np.testing.assert_allclose(w.data, ref["w"][0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(b.data, ref["b"][0], rtol=0, atol=1e-15)
    assert adam.t == 5


def test_adam_treats_missing_grad_as_zero():
    w = Tensor(np.ones(3), requires_grad=True)
    before = w.data.copy()
    adam = Adam({"w": w})
    w.grad = None
    adam.step(0.1)
    np.testing.assert_array_equal(w.data, before)


def test_zero_grad_clears_all_params():
    w = Tensor(np.ones(2), requires_grad=True)
    adam = Adam({"w": w})
    w.grad = np.ones(2)
    adam.zero_grad()
    assert w.grad is None


# ------------------------------------------------------------- checkpoints


def _sample_state(rng_state=None):
    return CheckpointState(
        kind="model",
        config={"d_model": 8, "name": "toy"},
        step=17,
        tensors={
            "b.bias": np.arange(5, dtype=np.float64),
            "a.w": np.linspace(-1, 1, 12).reshape(3, 4),
            "scalarish": np.array(2.5),
        },
        rng_state=rng_state,
        meta={"best_val": 0.25, "adam_t": 17},
    )


def test_checkpoint_roundtrip_preserves_everything(tmp_path):
    gen = np.random.default_rng(3)
    st = _sample_state(rng_state=gen.bit_generator.state)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, st)
    back = load_checkpoint(path)
    assert back.kind == st.kind
    assert back.config == st.config
    assert back.step == st.step
    assert back.meta == st.meta
    assert back.rng_state == st.rng_state
    assert sorted(back.tensors) == sorted(st.tensors)
    for name in st.tensors:
        np.testing.assert_array_equal(back.tensors[name], st.tensors[name])
        assert back.tensors[name].shape == np.asarray(st.tensors[name]).shape


def test_checkpoint_resave_is_byte_identical(tmp_path):
    st = _sample_state()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, st)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ParseError):
        load_checkpoint(path)


def test_load_rejects_truncated_tensor(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, _sample_state())
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ParseError, match="truncated"):
        load_checkpoint(path)


def test_load_rejects_future_version(tmp_path):
    import struct

    path = tmp_path / "model.ckpt"
    save_checkpoint(path, _sample_state())
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_expect_kind_gates_on_kind(tmp_path):
    st = _sample_state()
    assert expect_kind(st, "model") is st
    with pytest.raises(VersionError):
        expect_kind(st, "vocoder")


# ------------------------------------------------------------- batch order


def test_epoch_batches_cover_every_index_once():
    for n, bs in [(1, 1), (7, 3), (16, 4), (23, 8)]:
        batches = _epoch_batches(n, bs, epoch=0, seed=5)
        flat = sorted(i for b in batches for i in b)
        assert flat == list(range(n))
        assert all(len(b) <= bs for b in batches)


def test_epoch_batches_deterministic_but_epoch_sensitive():
    a = _epoch_batches(32, 4, epoch=2, seed=9)
    b = _epoch_batches(32, 4, epoch=2, seed=9)
    c = _epoch_batches(32, 4, epoch=3, seed=9)
    assert a == b
    assert a != c


def test_epoch_batches_bucket_by_length():
    n, bs = 20, 4
    rng = np.random.default_rng(0)
    lengths = list(rng.permutation(n))  # distinct lengths: bucketing is unambiguous
    batches = _epoch_batches(n, bs, epoch=1, seed=3, lengths=lengths)
    order = sorted(range(n), key=lambda i: lengths[i])
    expected = {frozenset(order[i : i + bs]) for i in range(0, n, bs)}
    assert {frozenset(b) for b in batches} == expected


# ------------------------------------------------------------- train loop


def _make_problem(seed=0, n=8, dim=4, noisy=False):
    """Quadratic fit: params pulled toward a fixed target, optional rng noise."""
    gen = np.random.default_rng(seed)
    w = Tensor(gen.standard_normal(dim), requires_grad=True)
    target = gen.standard_normal(dim)

    def loss_fn(batch, rng):
        t = target + (rng.standard_normal(dim) * 0.1 if noisy else 0.0)
        diff = sub(w, Tensor(t))
        return mean(mul(diff, diff)), {"batch_n": float(len(batch))}

    def val_fn():
        return float(np.mean((w.data - target) ** 2))

    return {"w": w}, list(range(n)), loss_fn, val_fn


def test_train_happy_path_logs_and_converges(tmp_path):
    params, examples, loss_fn, val_fn = _make_problem()
    cfg = TrainConfig(lr=0.05, batch_size=4, warmup_steps=2, max_epochs=6,
                      validate_every=4, patience=10, seed=1)
    log = tmp_path / "train.log.jsonl"
    res = train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
                cfg=cfg, log_path=str(log))
    assert res.steps == 12  # 8 examples / batch 4 = 2 steps x 6 epochs
    assert not res.stopped_early
    assert [s for s, _ in res.val_history] == [4, 8, 12]
    assert res.best_val == min(v for _, v in res.val_history)
    assert res.best_step in (4, 8, 12)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["step"] for r in rows] == list(range(1, 13))
    assert all(set(r) == {"step", "loss", "batch_n", "lr"} for r in rows)
    assert rows[0]["lr"] == pytest.approx(0.05 / 2)
    assert rows[-1]["loss"] < rows[0]["loss"]


def test_train_rejects_empty_example_list():
    params, _, loss_fn, val_fn = _make_problem()
    with pytest.raises(ConfigError):
        train(params=params, examples=[], loss_fn=loss_fn, val_fn=val_fn,
              cfg=TrainConfig())


def test_early_stopping_counts_flat_validations(tmp_path):
    params, examples, loss_fn, _ = _make_problem()
    cfg = TrainConfig(lr=1e-3, batch_size=4, warmup_steps=1, max_epochs=50,
                      validate_every=2, patience=3, seed=2)
    res = train(params=params, examples=examples, loss_fn=loss_fn,
                val_fn=lambda: 1.0, cfg=cfg)
    # first validation improves on inf, then `patience` flat ones end the run
    assert res.stopped_early
    assert len(res.val_history) == 1 + cfg.patience
    assert res.steps == 2 * (1 + cfg.patience)
    assert res.best_step == 2


def test_max_steps_caps_without_early_stop_flag():
    params, examples, loss_fn, val_fn = _make_problem()
    cfg = TrainConfig(lr=1e-3, batch_size=4, warmup_steps=1, max_epochs=50,
                      validate_every=100, patience=3)
    res = train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
                cfg=cfg, max_steps=3)
    assert res.steps == 3
    assert not res.stopped_early


def test_nan_loss_raises_and_keeps_best_checkpoint(tmp_path):
    params, examples, good_loss, _ = _make_problem()
    calls = {"n": 0}

    def loss_fn(batch, rng):
        calls["n"] += 1
        if calls["n"] == 5:
            # the finite check fires before backward, so no tape link needed
            return Tensor(np.array(math.nan)), {}
        return good_loss(batch, rng)

    cfg = TrainConfig(lr=1e-3, batch_size=4, warmup_steps=1, max_epochs=50,
                      validate_every=2, patience=10, seed=3)
    ckpt = tmp_path / "best.ckpt"
    with pytest.raises(NumericError, match="step 5"):
        train(params=params, examples=examples, loss_fn=loss_fn,
              val_fn=lambda: 1.0, cfg=cfg, checkpoint_path=str(ckpt))
    # the improvement at step 2 was flushed to disk before the blow-up
    assert ckpt.exists()
    assert load_checkpoint(ckpt).step == 2


def test_nan_validation_raises_numeric_error():
    params, examples, loss_fn, _ = _make_problem()
    cfg = TrainConfig(lr=1e-3, batch_size=4, warmup_steps=1, max_epochs=2,
                      validate_every=2, patience=10)
    with pytest.raises(NumericError, match="validation"):
        train(params=params, examples=examples, loss_fn=loss_fn,
              val_fn=lambda: math.inf, cfg=cfg)


def test_fallback_checkpoint_written_when_no_validation_ran(tmp_path):
    params, examples, loss_fn, val_fn = _make_problem()
    cfg = TrainConfig(lr=1e-3, batch_size=4, warmup_steps=1, max_epochs=1,
                      validate_every=100, patience=3)
    ckpt = tmp_path / "last.ckpt"
    train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
          cfg=cfg, checkpoint_path=str(ckpt), kind="tokenizer",
          config_snapshot={"note": 1})
    st = load_checkpoint(ckpt)
    assert st.kind == "tokenizer"
    assert st.config == {"note": 1}
    assert st.step == 2


def test_resume_missing_parameter_or_state_is_version_error(tmp_path):
    params, examples, loss_fn, val_fn = _make_problem()
    cfg = TrainConfig(lr=1e-2, batch_size=4, warmup_steps=1, max_epochs=4,
                      validate_every=2, patience=10, seed=4)
    ckpt = tmp_path / "run.ckpt"
    train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
          cfg=cfg, checkpoint_path=str(ckpt), max_steps=2)
    st = load_checkpoint(ckpt)

    extra = dict(params)
    extra["stray"] = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(VersionError, match="parameter"):
        train(params=extra, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
              cfg=cfg, resume_from=st)
    with pytest.raises(VersionError, match="state array"):
        train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
              cfg=cfg, resume_from=st, state_arrays={"ctr": np.zeros(1)})


def test_resume_reproduces_uninterrupted_run_bit_for_bit(tmp_path):
    cfg = TrainConfig(lr=0.02, batch_size=4, warmup_steps=2, max_epochs=10,
                      validate_every=5, patience=50, seed=11)

    def run(tag, max_steps, resume=None):
        # resume restores parameter data, so a fresh problem instance is fine
        params, examples, loss_fn, val_fn = _make_problem(seed=5, noisy=True)
        return params, train(
            params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
            cfg=cfg, checkpoint_path=str(tmp_path / f"{tag}.ckpt"),
            log_path=str(tmp_path / f"{tag}.log"), resume_from=resume,
            max_steps=max_steps)

    straight_params, straight = run("straight", max_steps=10)

    _, half = run("resumed", max_steps=5)
    assert half.steps == 5
    st = load_checkpoint(tmp_path / "resumed.ckpt")
    assert st.step == 5
    resumed_params, resumed = run("resumed", max_steps=10, resume=st)

    np.testing.assert_array_equal(straight_params["w"].data,
                                  resumed_params["w"].data)
    assert resumed.steps == straight.steps == 10
    assert resumed.val_history == straight.val_history
    assert resumed.best_val == straight.best_val
    # interrupted log + appended continuation equals the one-shot log
    assert (tmp_path / "resumed.log").read_bytes() == \
        (tmp_path / "straight.log").read_bytes()


def test_resume_replays_pending_epoch_callback(tmp_path):
    # a checkpoint written at an epoch's final step predates that epoch's
    # callback; resuming must run the callback before continuing
    def build():
        params, examples, loss_fn, val_fn = _make_problem(seed=8)
        ctr = np.zeros(1)
        return params, examples, loss_fn, val_fn, ctr

    cfg = TrainConfig(lr=0.01, batch_size=4, warmup_steps=1, max_epochs=3,
                      validate_every=2, patience=50, seed=6)

    def bump(epoch, rng):
        state["ctr"][0] += 1

    params, examples, loss_fn, val_fn, ctr = build()
    state = {"ctr": ctr}
    straight = train(params=params, examples=examples, loss_fn=loss_fn,
                     val_fn=val_fn, cfg=cfg, state_arrays=state,
                     on_epoch_end=bump)
    straight_w = params["w"].data.copy()
    assert ctr[0] == 3.0

    params, examples, loss_fn, val_fn, ctr = build()
    state = {"ctr": ctr}
    ckpt = tmp_path / "mid.ckpt"
    train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
          cfg=cfg, state_arrays=state, on_epoch_end=bump,
          checkpoint_path=str(ckpt), max_steps=2)
    st = load_checkpoint(ckpt)
    assert st.step == 2
    assert st.tensors["state.ctr"][0] == 0.0  # saved before epoch 0's callback
    assert st.meta["epochs_done"] == 0

    ctr[...] = 0.0
    res = train(params=params, examples=examples, loss_fn=loss_fn, val_fn=val_fn,
                cfg=cfg, state_arrays=state, on_epoch_end=bump, resume_from=st)
    assert ctr[0] == 3.0
    assert res.steps == 6
    np.testing.assert_array_equal(params["w"].data, straight_w)
