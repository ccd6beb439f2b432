#!/usr/bin/env python3
"""Benchmark: compiled kernels vs the pure-numpy fallback.

Times the primitive kernels, a full training step and an end-to-end suggest
call on both backends.  Run from the repo root:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from capfill import kernels
from capfill import nn
from capfill.backprop import attention_loss
from capfill.completion import BidiModel, CompletionRequest
from capfill.decoders import AttentionParams, DecoderConfig, DecoderParams, backward_states
from capfill.textcore import build_vocab, encode


def timeit(fn, min_seconds=0.4):
    fn()  # warmup
    n = 0
    t0 = time.perf_counter()
    while True:
        fn()
        n += 1
        elapsed = time.perf_counter() - t0
        if elapsed > min_seconds and n >= 5:
            return elapsed / n


def build_model(cfg, seed=0):
    rng = np.random.default_rng(seed)
    vocab = build_vocab(["abcdefghijklmnopqrst"])
    fwd = DecoderParams.create(rng, cfg, attention_input=True)
    bwd = DecoderParams.create(rng, cfg)
    att = AttentionParams.create(rng, cfg)
    return vocab, fwd, bwd, att


def bench_backend(name):
    kernels.use_backend(name)
    results = {}
    rng = np.random.default_rng(1)

    d_in, d = 64, 128
    x, h, c = rng.normal(size=d_in), rng.normal(size=d), rng.normal(size=d)
    wx, wh, b = rng.normal(size=(d_in, 4 * d)), rng.normal(size=(d, 4 * d)), rng.normal(size=4 * d)
    results["lstm_fwd (64->128)"] = timeit(lambda: kernels.lstm_fwd(x, h, c, wx, wh, b))

    h2, c2, gates = kernels.lstm_fwd(x, h, c, wx, wh, b)
    dh2, dc2 = rng.normal(size=d), rng.normal(size=d)
    dwx, dwh, db = np.zeros_like(wx), np.zeros_like(wh), np.zeros_like(b)
    results["lstm_bwd (64->128)"] = timeit(
        lambda: kernels.lstm_bwd(dh2, dc2, x, h, c, c2, gates, wx, wh, dwx, dwh, db)
    )

    q, hb = rng.normal(size=d_in + d), rng.normal(size=(30, d))
    wa, ba = rng.normal(size=(d_in + d, 30)), rng.normal(size=30)
    results["attention_fwd (N=30)"] = timeit(lambda: kernels.attention_fwd(q, hb, wa, ba))

    cfg = DecoderConfig(m=23, d=64, d_embed=32, feature_dim=128, N=16)
    vocab, fwd, bwd, att = build_model(cfg)
    feature = rng.normal(size=cfg.feature_dim)
    targets = encode(vocab, "adogrunsonagrass") + [vocab.end_id]
    hb_seq = backward_states(bwd, feature, targets[:-1], cfg.N)
    named = {**fwd.named("fwd."), **att.named("att.")}

    def train_step():
        grads = nn.zero_grads(named)
        attention_loss(fwd, att, hb_seq, feature, targets, grads, fwd_prefix="fwd.", att_prefix="att.")

    results["train step (1 caption)"] = timeit(train_step)

    cfg_big = DecoderConfig(m=23, d=128, d_embed=64, feature_dim=2048, N=30)
    vocab_b, fwd_b, bwd_b, att_b = build_model(cfg_big)
    model = BidiModel(vocab_b, cfg_big, fwd=fwd_b, bwd=bwd_b, att=att_b)
    feature_b = rng.normal(size=cfg_big.feature_dim)
    req = CompletionRequest(feature_b, "abcdef", 3, k=5)
    results["suggest (d=128 N=30 k=5)"] = timeit(lambda: model.complete(req))
    return results


def main():
    backends = kernels.available_backends()
    print(f"available backends: {backends}\n")
    all_results = {name: bench_backend(name) for name in backends}
    rows = list(next(iter(all_results.values())))
    width = max(len(r) for r in rows)
    header = f"{'kernel':<{width}} " + " ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for row in rows:
        cells = [all_results[b][row] for b in backends]
        line = f"{row:<{width}} " + " ".join(f"{c * 1e6:>10.1f}us" for c in cells)
        if len(cells) == 2:
            slow, fast = max(cells), min(cells)
            ratio = cells[1] / cells[0] if cells[0] < cells[1] else cells[0] / cells[1]
            faster = backends[cells.index(min(cells))]
            line += f" {ratio:>6.1f}x {faster[:2]}"
        print(line)


if __name__ == "__main__":
    main()
