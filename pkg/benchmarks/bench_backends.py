#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure interpreter fallback.

    python3 benchmarks/bench_backends.py [--repeat 3]

Covers the two hot paths: word edit distance over id arrays and the CTC
prefix beam search (vocabulary-constrained, bigram-fused) over synthetic
utterances.
"""

import argparse
import time

import numpy as np

from convasr import ctc_decoder, kernels, ngram_lm, synthdata, trie_vocab


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_levenshtein(repeat):
    rng = np.random.default_rng(0)
    pairs = [
        (rng.integers(0, 50, size=60), rng.integers(0, 50, size=64))
        for _ in range(2000)
    ]

    def run():
        for a, b in pairs:
            kernels.levenshtein(a, b)

    rows = []
    for backend in ("numba", "numpy"):
        kernels.set_backend(backend)
        kernels.levenshtein(*pairs[0])  # warm up / compile
        rows.append((f"levenshtein x{len(pairs)}", backend, timeit(run, repeat)))
    return rows


def bench_beam_search(repeat):
    convs = synthdata.make_corpus(n_train=30, n_eval=6, n_test=2, seed=3)
    texts = synthdata.training_texts(convs)
    lm = ngram_lm.train_from_texts(texts, order=2)
    trie = trie_vocab.build(sorted({w for t in texts for w in t.split()}))
    logits = synthdata.make_logits(convs, noise=0.3, seed=3)
    eval_ids = [u.id for c in convs if c.split == "eval" for u in c.utterances]
    matrices = [logits[i] for i in eval_ids]
    cfg = ctc_decoder.BeamConfig(
        beam_width=256, alpha=1.0, beta=0.5, lm=lm, trie=trie
    )

    def run():
        for z in matrices:
            ctc_decoder.beam_search(z, cfg)

    rows = []
    for backend in ("numba", "numpy"):
        kernels.set_backend(backend)
        ctc_decoder.beam_search(matrices[0], cfg)  # warm up / compile
        rows.append(
            (f"beam search N=256 x{len(matrices)}", backend, timeit(run, repeat))
        )
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if not kernels.JIT_BUILT:
        raise SystemExit(
            "numba backend unavailable (CONVASR_PURE_NUMPY set or numba "
            "missing); nothing to compare"
        )

    rows = bench_levenshtein(args.repeat) + bench_beam_search(args.repeat)
    kernels.set_backend("numba")

    print(f"{'kernel':<28} {'backend':<8} {'best time':>10}")
    by_kernel = {}
    for name, backend, seconds in rows:
        print(f"{name:<28} {backend:<8} {seconds:>9.3f}s")
        by_kernel.setdefault(name, {})[backend] = seconds
    print()
    for name, times in by_kernel.items():
        speedup = times["numpy"] / times["numba"]
        print(f"{name}: numba is {speedup:.1f}x faster")


if __name__ == "__main__":
    main()
