#!/usr/bin/env python3
"""Benchmark the jit-compiled kernels against their numpy twins.

Times the LSTM forward/backward loops and the CRF forward, backward, and
Viterbi passes on realistic desk-scale shapes, checks that both paths
agree numerically, and prints a speedup table.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --tokens 80 --hidden 128 --repeats 50
"""

import argparse
import time

import numpy as np

import seqtag.kernels as K


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def check_close(a, b, name):
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=1e-10, err_msg=name)


def bench_lstm(rng, n_tokens, hidden, repeats):
    xw = rng.normal(size=(n_tokens, 4 * hidden))
    w_h = rng.normal(size=(hidden, 4 * hidden)) * 0.1
    h0 = np.zeros(hidden)
    c0 = np.zeros(hidden)

    fwd_np = lambda: K.lstm_forward_numpy(xw, w_h, h0, c0)
    fwd_nb = lambda: K.lstm_forward_numba(xw, w_h, h0, c0)
    out_np = fwd_np()
    out_nb = fwd_nb()
    check_close(out_np, out_nb, "lstm_forward")

    hs, cs, tcs, gates = out_np
    d_hs = rng.normal(size=hs.shape)
    bwd_np = lambda: K.lstm_backward_numpy(d_hs, hs, cs, tcs, gates, w_h, h0, c0)
    bwd_nb = lambda: K.lstm_backward_numba(d_hs, hs, cs, tcs, gates, w_h, h0, c0)
    check_close(bwd_np(), bwd_nb(), "lstm_backward")

    shape = f"n={n_tokens} h={hidden}"
    return [
        ("lstm_forward", shape, timeit(fwd_np, repeats), timeit(fwd_nb, repeats)),
        ("lstm_backward", shape, timeit(bwd_np, repeats), timeit(bwd_nb, repeats)),
    ]


def bench_crf(rng, n_tokens, n_tags, repeats):
    emis = rng.normal(size=(n_tokens, n_tags))
    trans = rng.normal(size=(n_tags, n_tags))
    start = rng.normal(size=n_tags)
    end = rng.normal(size=n_tags)

    rows = []
    shape = f"n={n_tokens} T={n_tags}"
    pairs = [
        ("crf_alphas",
         lambda: K.crf_alphas_numpy(emis, trans, start),
         lambda: K.crf_alphas_numba(emis, trans, start)),
        ("crf_betas",
         lambda: K.crf_betas_numpy(emis, trans, end),
         lambda: K.crf_betas_numba(emis, trans, end)),
        ("viterbi",
         lambda: K.viterbi_decode_numpy(emis, trans, start, end),
         lambda: K.viterbi_decode_numba(emis, trans, start, end)),
    ]
    for name, f_np, f_nb in pairs:
        a, b = f_np(), f_nb()
        if name == "viterbi":
            assert list(a[0]) == list(b[0]), "viterbi paths differ"
            np.testing.assert_allclose(a[1], b[1], atol=1e-10)
        else:
            np.testing.assert_allclose(a, b, atol=1e-10, err_msg=name)
        rows.append((name, shape, timeit(f_np, repeats), timeit(f_nb, repeats)))
    return rows


def main():
    parser = argparse.ArgumentParser(
        description="compare jit kernels against the numpy fallback path"
    )
    parser.add_argument("--tokens", type=int, default=60,
                        help="sentence length (default 60)")
    parser.add_argument("--hidden", type=int, default=64,
                        help="LSTM hidden size (default 64)")
    parser.add_argument("--tags", type=int, default=37,
                        help="CRF tag count (default 37, a 18-class BIO set)")
    parser.add_argument("--repeats", type=int, default=30,
                        help="timing repeats, best-of (default 30)")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print("compiling kernels...")
    K.warmup()

    rng = np.random.default_rng(args.seed)
    rows = []
    rows += bench_lstm(rng, args.tokens, args.hidden, args.repeats)
    rows += bench_crf(rng, args.tokens, args.tags, args.repeats)

    width = max(len(r[0]) for r in rows)
    print(f"\n{'kernel':<{width}}  {'shape':<14} {'numpy ms':>10} "
          f"{'numba ms':>10} {'speedup':>8}")
    for name, shape, t_np, t_nb in rows:
        print(f"{name:<{width}}  {shape:<14} {t_np * 1e3:>10.3f} "
              f"{t_nb * 1e3:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
