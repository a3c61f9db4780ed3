"""Independent reference implementations the test suite checks against.

Everything here is deliberately written from the documented definitions, not
by calling back into the package, so a bug in the library cannot hide in its
own test oracle.  Finite-difference gradient checking lives here too.
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np

from minis2st.model import ModelConfig
from minis2st.tensor import Tape, Tensor, backward, mean, mul, no_grad, sub, zero_grad

# ------------------------------------------------------- finite differences

FD_H = 1e-5
FD_RTOL = 1e-4
# relative error denominator floor: below this magnitude the check is
# effectively absolute at FD_RTOL * FD_FLOOR, which still catches sign and
# scale bugs while staying above central-difference noise (~1e-10)
FD_FLOOR = 1e-3


def fd_gradcheck(build_loss, tensors, rng, probes: int = 2,
                 h: float = FD_H, floor: float = FD_FLOOR) -> float:
    """Max relative error between tape gradients and central differences.

    build_loss must rebuild the graph from scratch on every call (the probed
    tensors are mutated in place between calls).
    """
    tensors = [t for t in tensors if t.requires_grad]
    zero_grad(tensors)
    with Tape():
        loss = build_loss()
    backward(loss)
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        grad = np.zeros(flat.size) if t.grad is None else t.grad.reshape(-1)
        k = min(probes, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            with no_grad():
                fp = float(build_loss().data)
            flat[idx] = orig - h
            with no_grad():
                fm = float(build_loss().data)
            flat[idx] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), floor)
            worst = max(worst, err)
    return worst


def _away_from_kink(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values near 0 outside [-margin, margin] so relu stays smooth
    across the finite-difference stencil."""
    near = np.abs(x) < margin
    x = x.copy()
    x[near] = np.sign(x[near] + 1e-12) * (margin + np.abs(x[near]))
    return x


def run_op_gradient_trials(trials: int, seed: int = 0):
    """Finite-difference every differentiable tensor op. Returns a list of
    (op name, worst relative error) pairs, one per op."""
    from minis2st.tensor import (add, concat, embedding_lookup, layernorm, matmul,
                                 relu, reshape, softmax, softmax_cross_entropy,
                                 sum_, transpose)
    from minis2st.tensor import mean as t_mean
    from minis2st.tensor import mul as t_mul
    from minis2st.tensor import sub as t_sub

    rng = np.random.default_rng(seed)

    def t(*shape):
        return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)

    results = []

    def run(name, make_case):
        worst = 0.0
        for _ in range(trials):
            build, tensors = make_case()
            worst = max(worst, fd_gradcheck(build, tensors, rng))
        results.append((name, worst))

    def case_binary(op, broadcast=False):
        def make():
            if broadcast:
                a, b = t(4, 5), t(5)
            else:
                a, b = t(4, 5), t(4, 5)
            w = Tensor(rng.normal(size=(4, 5)))
            return (lambda: t_mean(t_mul(op(a, b), w))), [a, b]
        return make

    run("add", case_binary(add))
    run("add_broadcast", case_binary(add, broadcast=True))
    run("sub", case_binary(t_sub))
    run("sub_broadcast", case_binary(t_sub, broadcast=True))
    run("mul", case_binary(t_mul))
    run("mul_broadcast", case_binary(t_mul, broadcast=True))

    def case_mul_scalar():
        a = t(3, 4)
        s = float(rng.normal())
        return (lambda: t_mean(t_mul(a, s))), [a]
    run("mul_scalar", case_mul_scalar)

    def case_matmul():
        a, b = t(3, 4), t(4, 2)
        w = Tensor(rng.normal(size=(3, 2)))
        return (lambda: t_mean(t_mul(matmul(a, b), w))), [a, b]
    run("matmul", case_matmul)

    def case_relu():
        a = Tensor(_away_from_kink(rng.normal(size=(4, 5))), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 5)))
        return (lambda: t_mean(t_mul(relu(a), w))), [a]
    run("relu", case_relu)

    def case_reshape():
        a = t(3, 4)
        w = Tensor(rng.normal(size=(2, 6)))
        return (lambda: t_mean(t_mul(reshape(a, (2, 6)), w))), [a]
    run("reshape", case_reshape)

    def case_transpose():
        a = t(3, 4)
        w = Tensor(rng.normal(size=(4, 3)))
        return (lambda: t_mean(t_mul(transpose(a, (1, 0)), w))), [a]
    run("transpose", case_transpose)

    def case_concat():
        axis = int(rng.integers(0, 2))
        a, b = t(3, 4), (t(2, 4) if axis == 0 else t(3, 2))
        out_shape = (5, 4) if axis == 0 else (3, 6)
        w = Tensor(rng.normal(size=out_shape))
        return (lambda: t_mean(t_mul(concat([a, b], axis=axis), w))), [a, b]
    run("concat", case_concat)

    def case_embedding():
        table = t(6, 4)
        idx = rng.integers(0, 6, size=5)  # repeats exercise accumulation
        w = Tensor(rng.normal(size=(5, 4)))
        return (lambda: t_mean(t_mul(embedding_lookup(table, idx), w))), [table]
    run("embedding_lookup", case_embedding)

    def case_mean():
        a = t(4, 5)
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        if axis is None:
            return (lambda: t_mean(a)), [a]
        w_shape = (5,) if axis == 0 else (4,)
        w = Tensor(rng.normal(size=w_shape))
        return (lambda: t_mean(t_mul(t_mean(a, axis=axis), w))), [a]
    run("mean", case_mean)

    def case_sum():
        a = t(4, 5)
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        if axis is None:
            return (lambda: sum_(a)), [a]
        w_shape = (5,) if axis == 0 else (4,)
        w = Tensor(rng.normal(size=w_shape))
        return (lambda: t_mean(t_mul(sum_(a, axis=axis), w))), [a]
    run("sum", case_sum)

    def case_softmax():
        a = t(3, 6)
        w = Tensor(rng.normal(size=(3, 6)))
        return (lambda: t_mean(t_mul(softmax(a), w))), [a]
    run("softmax", case_softmax)

    def case_layernorm():
        a, gain, bias = t(4, 6), t(6), t(6)
        w = Tensor(rng.normal(size=(4, 6)))
        return (lambda: t_mean(t_mul(layernorm(a, gain, bias), w))), [a, gain, bias]
    run("layernorm", case_layernorm)

    def case_ce():
        logits = t(5, 7)
        targets = rng.integers(0, 7, size=5)
        return (lambda: softmax_cross_entropy(logits, targets)), [logits]
    run("softmax_cross_entropy", case_ce)

    return results


def _tiny_model_cfg(projector: str) -> ModelConfig:
    return ModelConfig(feat_dim=4, text_vocab=5, audio_vocab=7, d_model=12,
                       blocks=1, heads=2, context=64, group_size=3, prompt_len=2,
                       projector=projector, group_frames=2, proj_hidden=10,
                       qformer_queries=3, qformer_dim=12, qformer_blocks=1,
                       enc_dim=6, enc_blocks=1, enc_heads=2, fixed_input_len=8)


def run_module_gradient_trials(trials: int, seed: int = 0):
    """Finite-difference whole modules end to end: each projector variant, the
    teacher-forced decoder with its joint loss, and the vocoder regression."""
    from minis2st.model import (DecoderLM, compute_loss, group_tokens,
                                make_projector)
    from minis2st.vocoder import TimbreVocoder, VocoderConfig

    rng = np.random.default_rng(seed)
    results = []

    def probe_some(build, params, n=2):
        picks = [params[i] for i in rng.choice(len(params), size=min(n, len(params)),
                                               replace=False)]
        return fd_gradcheck(build, picks, rng, probes=1)

    variants = ["linear", "conv1d", "qformer"]
    worst = 0.0
    for i in range(trials):
        kind = variants[i % len(variants)]
        cfg = _tiny_model_cfg(kind)
        proj = make_projector(cfg, seed=int(rng.integers(1 << 30)))
        a_f = Tensor(rng.normal(size=(6, cfg.enc_dim)), requires_grad=True)

        def build():
            p = proj.project(a_f)
            return mean(mul(p, p))

        worst = max(worst, probe_some(build, [a_f] + list(proj.trainable().values())))
    results.append(("projectors", worst))

    worst = 0.0
    for i in range(trials):
        cfg = _tiny_model_cfg("linear")
        dec = DecoderLM(cfg, seed=int(rng.integers(1 << 30)))
        v = dec.vocab
        a_p = Tensor(rng.normal(0.0, 0.3, size=(3, cfg.d_model)), requires_grad=True)
        n_text = int(rng.integers(1, 4))
        n_audio = int(rng.integers(1, 6))
        text_targets = [int(x) for x in rng.integers(0, v.text_size, size=n_text)]
        text_targets.append(v.text_eos_local)
        tokens = [int(x) for x in rng.integers(0, v.audio_size, size=n_audio)]
        grouped = group_tokens(tokens + [v.audio_eos_local], cfg.group_size,
                               v.audio_pad_local)
        s = max(len(text_targets), len(grouped.groups))
        at = [list(g) for g in grouped.groups]
        at += [[v.audio_pad_local] * cfg.group_size] * (s - len(at))
        tt = text_targets + [v.text_pad_local] * (s - len(text_targets))

        def build():
            al, tl = dec.forward_teacher_forced(a_p, text_targets, grouped)
            total, _, _ = compute_loss(al, tl, at, tt, v,
                                       lambda_audio=1.0, lambda_text=1.0)
            return total

        worst = max(worst, probe_some(build, [a_p] + list(dec.trainable().values())))
    results.append(("decoder", worst))

    worst = 0.0
    for i in range(trials):
        cfg = VocoderConfig(feat_dim=4, audio_vocab=6, token_dim=5, d_model=8,
                            blocks=1, heads=2, spk_dim=3)
        voc = TimbreVocoder(cfg, seed=int(rng.integers(1 << 30)))
        n = int(rng.integers(1, 6))
        tokens = [int(x) for x in rng.integers(0, cfg.audio_vocab, size=n)]
        spk = rng.normal(size=cfg.spk_dim)
        spk = spk / np.linalg.norm(spk)
        target = Tensor(rng.normal(size=(n, cfg.feat_dim)))

        def build():
            d = sub(voc.forward_frames(tokens, spk), target)
            return mean(mul(d, d))

        worst = max(worst, probe_some(build, list(voc.trainable().values())))
    results.append(("vocoder", worst))

    return results


# ------------------------------------------------------------- VQ brute force


def nearest_code_bruteforce(h_row: np.ndarray, codebook: np.ndarray) -> int:
    """Exhaustive argmin of squared L2 distance, lowest index on ties."""
    best, best_d = 0, float("inf")
    for i in range(codebook.shape[0]):
        d = float(np.sum((h_row - codebook[i]) ** 2))
        if d < best_d:
            best, best_d = i, d
    return best


# --------------------------------------------------------------- text metrics


def bleu_bruteforce(hyps, refs) -> float:
    """Corpus BLEU from the documented formula: clipped n-gram precisions for
    n=1..4, add-one smoothing for n>=2, brevity penalty exp(1-r/c) for c<=r."""
    def grams(seq, n):
        return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]

    c = sum(len(h) for h in hyps)
    r = sum(len(rf) for rf in refs)
    logs = []
    for n in range(1, 5):
        match = total = 0
        for h, rf in zip(hyps, refs):
            hc, rc = Counter(grams(h, n)), Counter(grams(rf, n))
            match += sum(min(k, rc[g]) for g, k in hc.items())
            total += max(0, len(h) - n + 1)
        if n >= 2:
            match, total = match + 1, total + 1
        if match == 0 or total == 0:
            return 0.0
        logs.append(math.log(match / total))
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(sum(logs) / 4.0)


def meteor_bruteforce(hyp, ref) -> float:
    """Unigram METEOR by the documented hand formula: greedy first-unmatched
    alignment, F = PR / (0.9P + 0.1R), penalty 0.5 * (chunks/m)^3."""
    taken = [False] * len(ref)
    pairs = []
    for hi, tok in enumerate(hyp):
        for ri in range(len(ref)):
            if not taken[ri] and ref[ri] == tok:
                taken[ri] = True
                pairs.append((hi, ri))
                break
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    f = p * r / (0.9 * p + 0.1 * r)
    chunks = 1 + sum(
        1 for (h0, r0), (h1, r1) in zip(pairs, pairs[1:])
        if h1 != h0 + 1 or r1 != r0 + 1
    )
    return f * (1.0 - 0.5 * (chunks / m) ** 3)


def random_corpus(rng, n_pairs, vocab=8, max_len=7):
    """Small random (hyps, refs) with overlapping vocabulary."""
    hyps, refs = [], []
    for _ in range(n_pairs):
        hyps.append([int(x) for x in rng.integers(0, vocab, size=rng.integers(0, max_len + 1))])
        refs.append([int(x) for x in rng.integers(0, vocab, size=rng.integers(1, max_len + 1))])
    return hyps, refs
