"""Scaling checks at n = 10^4: mini-batch vs full-batch accuracy, epoch time, peak memory.

    python3 scripts/table3.py
"""

import argparse
import time
import tracemalloc
import warnings

from sparsepcm.bench import (
    SynthConfig,
    bench_minibatch_optimizer_config,
    bench_model_config,
    bench_optimizer_config,
    bench_scale_config,
    generate,
    kendall_tau,
    rmse_log_ratios,
    split,
)
from sparsepcm.model import OptimizerConfig, model_scores, train
from sparsepcm.scale import SamplingWarning, train_minibatch


def accuracy(n, p, full_batch):
    x, obs = generate(SynthConfig(n, p, seed=0))
    tr, te = split(obs, 0.2, seed=0)
    fits = {"minibatch": lambda: train_minibatch(
        tr, bench_model_config(), bench_scale_config(), bench_minibatch_optimizer_config())}
    if full_batch:
        fits["fullbatch"] = lambda: train(tr, bench_model_config(), bench_optimizer_config())
    for name, fit in fits.items():
        t0 = time.perf_counter()
        model = fit()
        elapsed = time.perf_counter() - t0
        H = model.embeddings()
        tau = kendall_tau(model_scores(model, tr, H), x)
        err = rmse_log_ratios(lambda i, j: model.log_ratios(i, j, H), te)
        print(f"{name:9s} |Omega|={len(obs)} tau={tau:.4f} rmse={err:.4f} time={elapsed:.1f}s")


def epoch_times(n, ps, repeats):
    prev = None
    for p in ps:
        _, obs = generate(SynthConfig(n, p, seed=0))
        work = []
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            train_minibatch(obs, bench_model_config(), bench_scale_config(), OptimizerConfig(epochs=1), work)
            best = min(best, time.perf_counter() - t0)
        ratio = "" if prev is None else f" ratio={best / prev:.2f}"
        w = work[-1]
        print(f"p={p} |Omega|={len(obs)} epoch={best:.2f}s subgraph nodes/step={w.subgraph_nodes / w.steps:.0f}"
              f" induced edges/step={w.subgraph_edges / w.steps:.0f}{ratio}")
        prev = best


def peak_memory(n, p):
    _, obs = generate(SynthConfig(n, p, seed=0))
    tracemalloc.start()
    train_minibatch(obs, bench_model_config(), bench_scale_config(), OptimizerConfig(epochs=1))
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    print(f"peak {peak / 1e6:.1f} MB; n^2 bytes {n * n / 1e6:.0f} MB; dense float64 {8 * n * n / 1e6:.0f} MB")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--p", type=float, default=0.001)
    ap.add_argument("--skip-full-batch", action="store_true")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    warnings.simplefilter("ignore", SamplingWarning)
    accuracy(args.n, args.p, not args.skip_full_batch)
    epoch_times(args.n, [args.p / 2, args.p, 2 * args.p], args.repeats)
    peak_memory(args.n, args.p)


if __name__ == "__main__":
    main()
