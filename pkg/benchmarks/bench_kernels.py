#!/usr/bin/env python3
"""Benchmark the numba CRF kernels against the pure-numpy fallback.

Times forward, forward-backward with expectations, and Viterbi at realistic
label counts (the default 73-label fine space) across sentence lengths.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --labels 73 13 --lengths 10 30 100
    python benchmarks/bench_kernels.py --output results.json
"""

import argparse
import json
import time

import numpy as np

from seqtag import _kernels


def _instances(rng, n, t, l):
    out = []
    for _ in range(n):
        out.append((
            rng.normal(0, 2.0, size=(t, l)),
            rng.normal(0, 1.0, size=(l, l)),
            rng.normal(0, 1.0, size=l),
            rng.normal(0, 1.0, size=l),
        ))
    return out


def _time(fn, instances, repeats):
    start = time.perf_counter()
    for _ in range(repeats):
        for inst in instances:
            fn(*inst)
    return (time.perf_counter() - start) / (repeats * len(instances))


def bench_case(rng, t, l, n_instances, repeats, use_numba):
    instances = _instances(rng, n_instances, t, l)
    ok = np.ones((l, l), dtype=np.uint8)
    okv = np.ones(l, dtype=np.uint8)

    if use_numba:
        fwd, bwd = _kernels._forward_alpha_nb, _kernels._backward_beta_nb
        expect, vit = _kernels._expectations_nb, _kernels._viterbi_nb
    else:
        fwd, bwd = _kernels._forward_alpha_np, _kernels._backward_beta_np
        expect, vit = _kernels._expectations_np, _kernels._viterbi_np

    def forward_backward(em, trans, start, end):
        alpha = fwd(em, trans, start)
        beta = bwd(em, trans, end)
        final = alpha[-1] + end
        m = final.max()
        log_z = float(m + np.log(np.exp(final - m).sum()))
        expect(em, trans, alpha, beta, log_z)

    def viterbi(em, trans, start, end):
        vit(em, trans, start, end, ok, okv, okv)

    # warm the JIT before timing
    forward_backward(*instances[0])
    viterbi(*instances[0])

    return {
        "forward_s": _time(lambda em, tr, s, e: fwd(em, tr, s), instances, repeats),
        "forward_backward_s": _time(forward_backward, instances, repeats),
        "viterbi_s": _time(viterbi, instances, repeats),
    }


def main():
    parser = argparse.ArgumentParser(description="CRF kernel benchmark: numba vs numpy")
    parser.add_argument("--labels", type=int, nargs="+", default=[13, 73])
    parser.add_argument("--lengths", type=int, nargs="+", default=[10, 30, 100])
    parser.add_argument("--instances", type=int, default=20)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--output", help="write results as JSON")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    have_numba = _kernels._HAVE_NUMBA
    print(f"numba available: {have_numba}   active backend: {_kernels.BACKEND}")
    print(f"{'L':>4} {'T':>5} {'op':<18} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    print("-" * 66)

    results = []
    for l in args.labels:
        for t in args.lengths:
            np_times = bench_case(rng, t, l, args.instances, args.repeats, use_numba=False)
            nb_times = (
                bench_case(rng, t, l, args.instances, args.repeats, use_numba=True)
                if have_numba else None
            )
            for op in ("forward_s", "forward_backward_s", "viterbi_s"):
                np_ms = np_times[op] * 1e3
                nb_ms = nb_times[op] * 1e3 if nb_times else float("nan")
                speed = np_ms / nb_ms if nb_times else float("nan")
                print(f"{l:>4} {t:>5} {op[:-2]:<18} {np_ms:>12.4f} {nb_ms:>12.4f} {speed:>8.1f}x")
            results.append({
                "labels": l, "length": t,
                "numpy": np_times, "numba": nb_times,
            })

    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            json.dump({"backend_default": _kernels.BACKEND, "cases": results}, f, indent=2)
        print(f"\nwrote {args.output}")


if __name__ == "__main__":
    main()
