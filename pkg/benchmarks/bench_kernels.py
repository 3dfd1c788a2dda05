#!/usr/bin/env python3
"""Benchmark the numba kernel lane against the pure-numpy fallback.

Times every dispatched kernel at training-realistic shapes plus one
end-to-end batch-loss forward/backward, and prints a speedup table.

Usage:
    python benchmarks/bench_kernels.py [--iters N] [--d-model D] [--seq-len L]
"""

import argparse
import time

import numpy as np


def time_call(fn, args, iters):
    fn(*args)  # warm-up (and numba compilation)
    t0 = time.perf_counter()
    for _ in range(iters):
        fn(*args)
    return (time.perf_counter() - t0) / iters


def bench_kernels(iters, d_model, seq_len, dtype):
    from convqg.kernels import numpy_impl

    try:
        from convqg.kernels import numba_impl
    except ImportError:
        print("numba is not installed; nothing to compare")
        return []

    rng = np.random.default_rng(0)
    heads = 4
    d_ff = 4 * d_model
    x = rng.standard_normal((seq_len, d_model)).astype(dtype)
    gain = np.ones(d_model, dtype=dtype)
    bias = np.zeros(d_model, dtype=dtype)
    w = [rng.standard_normal((d_model, d_model)).astype(dtype) for _ in range(4)]
    b = [np.zeros(d_model, dtype=dtype) for _ in range(4)]
    w1 = rng.standard_normal((d_model, d_ff)).astype(dtype)
    b1 = np.zeros(d_ff, dtype=dtype)
    w2 = rng.standard_normal((d_ff, d_model)).astype(dtype)
    b2 = np.zeros(d_model, dtype=dtype)
    logits = rng.standard_normal((seq_len, 120)).astype(dtype)
    targets = rng.integers(0, 120, seq_len)
    mask = np.ones(seq_len, dtype=np.bool_)
    scale = 1.0 / np.sqrt(d_model / heads)
    q, k, v = (rng.standard_normal((seq_len, d_model)).astype(dtype) for _ in range(3))
    p = rng.standard_normal(4096).astype(dtype)
    g = rng.standard_normal(4096).astype(dtype)
    m = np.zeros(4096, dtype=dtype)
    vv = np.zeros(4096, dtype=dtype)

    cases = [
        ("softmax_fwd", (x,)),
        ("layer_norm_fwd", (x, gain, bias, 1e-5)),
        ("gelu_fwd", (x,)),
        ("attention_fwd", (q, k, v, heads, scale, True)),
        ("ce_fwd", (logits, targets, mask)),
        ("attn_sublayer_fwd", (x, x, gain, bias, w[0], b[0], w[1], b[1],
                               w[2], b[2], w[3], b[3], heads, False, 1e-5, True)),
        ("ffn_sublayer_fwd", (x, gain, bias, w1, b1, w2, b2, 1e-5)),
        ("adamw_update", (p, g, m, vv, 1, 1e-3, 0.9, 0.999, 1e-8, 0.05)),
    ]
    rows = []
    for name, args in cases:
        t_np = time_call(getattr(numpy_impl, name), args, iters)
        t_nb = time_call(getattr(numba_impl, name), args, iters)
        rows.append((name, t_np, t_nb))
    return rows


def bench_batch_loss(iters):
    """End-to-end forward+backward of one training batch on the active lane."""
    from convqg import Graph, backward, kernels
    from convqg.auxiliary import FrozenSentenceEmbedder
    from convqg.model import ModelConfig, QuestionModel
    from convqg.objective import LossConfig, batch_loss, prepare_example
    from convqg.toyworld import generate_world
    from convqg.training import build_vocab

    world = generate_world(seed=3, n_scenes=20)
    vocab = build_vocab(world)
    embedder = FrozenSentenceEmbedder(vocab.id_to_token, 64, seed=1234)
    model = QuestionModel(ModelConfig(), len(vocab), seed=0)
    batch = [prepare_example(ex, vocab, embedder, model.dtype) for ex in world[:16]]
    cfg = LossConfig()

    def step():
        with Graph():
            loss, _ = batch_loss(batch, model, cfg, 0)
        backward(loss)
        for t in model.params.values():
            t.grad = None

    step()
    t0 = time.perf_counter()
    for _ in range(iters):
        step()
    per = (time.perf_counter() - t0) / iters
    print(f"\nbatch-16 forward+backward on the '{kernels.backend()}' lane: "
          f"{per * 1000:.1f} ms/step")


def main():
    parser = argparse.ArgumentParser(description="numba vs numpy kernel lanes")
    parser.add_argument("--iters", type=int, default=300)
    parser.add_argument("--d-model", type=int, default=64)
    parser.add_argument("--seq-len", type=int, default=32)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = parser.parse_args()

    rows = bench_kernels(args.iters, args.d_model, args.seq_len, np.dtype(args.dtype))
    if rows:
        print(f"\nkernel timings ({args.iters} iters, d_model={args.d_model}, "
              f"seq_len={args.seq_len}, {args.dtype}):\n")
        print(f"{'kernel':24s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
        for name, t_np, t_nb in rows:
            print(f"{name:24s} {t_np * 1e6:9.1f}u {t_nb * 1e6:9.1f}u {t_np / t_nb:7.1f}x")
    bench_batch_loss(max(10, args.iters // 10))


if __name__ == "__main__":
    main()
