"""Synthetic Erdos-Renyi comparison data, splits, metrics and benchmark reports."""

from __future__ import annotations

import csv
import math
import time
import tracemalloc
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import median
from typing import Literal

import numpy as np

from .core import ComparisonSet, DisconnectedGraphWarning, ScoreVector
from .lls import lls_scores
from .model import EmbeddingModel, ModelConfig, OptimizerConfig, model_scores, train
from .scale import ScaleConfig, train_minibatch

Method = Literal["LLS", "ML", "MlMinibatch"]
REPORT_HEADER = ["n", "p", "edges", "method", "time_s", "peak_mem", "rmse", "tau", "seed"]


@dataclass
class SynthConfig:
    n: int
    p: float
    noise_sigma: float = 0.1
    seed: int = 0
    score_dist: Literal["std_normal"] = "std_normal"

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.n < 2:
            raise ValueError("n must be >= 2")


@dataclass
class ExperimentResult:
    n: int
    p: float
    edge_count: int
    method: str
    wall_time_s: float
    peak_mem_bytes: int | None
    rmse: float
    kendall_tau: float
    seed: int


def _pair_from_index(k: np.ndarray, n: int):
    """Map linear indices over {(i, j): i < j}, row-major, back to pairs."""

    def row_start(r):
        return r * (2 * n - r - 1) // 2

    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2).astype(np.int64)
    i -= row_start(i) > k  # float rounding fixups
    i += row_start(i + 1) <= k
    return i, k - row_start(i) + i + 1


def generate(cfg: SynthConfig) -> tuple[ScoreVector, ComparisonSet]:
    """Scores x ~ N(0, 1); each unordered pair kept with probability p, random direction,
    value exp(x_i - x_j + eps) with eps ~ N(0, noise_sigma^2)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    x = rng.standard_normal(n)
    total = n * (n - 1) // 2
    m = int(rng.binomial(total, cfg.p))
    k = np.sort(rng.choice(total, size=m, replace=False))
    i, j = _pair_from_index(k, n)
    flip = rng.random(m) < 0.5
    src, dst = np.where(flip, j, i), np.where(flip, i, j)
    eps = rng.normal(0.0, cfg.noise_sigma, size=m) if cfg.noise_sigma > 0 else np.zeros(m)
    values = np.exp(x[src] - x[dst] + eps)
    return ScoreVector(x - x.mean()), ComparisonSet(n, src, dst, values, "cardinal")


def generate_chain(n: int, ratio) -> ComparisonSet:
    """Edges (i, i+1) for i = 0..n-2; ``ratio`` is a scalar or one value per edge."""
    if n < 2:
        raise ValueError("chain needs n >= 2")
    r = np.broadcast_to(np.asarray(ratio, dtype=float), (n - 1,))
    if np.any(r <= 0):
        raise ValueError("ratios must be positive")
    return ComparisonSet(n, np.arange(n - 1), np.arange(1, n), r.copy(), "cardinal")


def split(obs: ComparisonSet, holdout_frac: float, seed: int = 0):
    """Uniform edge holdout of round(frac * |Omega|) edges (halves up), never isolating a node.

    Edges are visited in random order; an edge is held out only if both
    endpoints keep at least one training edge. Returns ``(train, test)``.
    """
    if not 0 <= holdout_frac < 1:
        raise ValueError("holdout_frac must lie in [0, 1)")
    m = len(obs)
    target = math.floor(holdout_frac * m + 0.5)
    rng = np.random.default_rng(seed)
    deg = np.bincount(obs.src, minlength=obs.n) + np.bincount(obs.dst, minlength=obs.n)
    held = np.zeros(m, dtype=bool)
    count = 0
    if target:
        for e in rng.permutation(m):
            i, j = obs.src[e], obs.dst[e]
            if deg[i] > 1 and deg[j] > 1:
                deg[i] -= 1
                deg[j] -= 1
                held[e] = True
                count += 1
                if count == target:
                    break
    if count < target:
        warnings.warn(
            f"degree protection held out {count} of {target} requested edges "
            f"(fraction {count / m:.4f})",
            stacklevel=2,
        )
    return obs.subset(~held), obs.subset(held)


def rmse_log_ratios(predicted, test: ComparisonSet) -> float:
    """RMSE between predicted and observed log-ratios on the test pairs.

    ``predicted`` is a ScoreVector, a trained EmbeddingModel, or a callable
    ``f(i, j) -> log-ratios``.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    if isinstance(predicted, ScoreVector):
        t = predicted.scores[test.src] - predicted.scores[test.dst]
    elif isinstance(predicted, EmbeddingModel):
        t = predicted.log_ratios(test.src, test.dst)
    else:
        t = np.asarray(predicted(test.src, test.dst), dtype=float)
    r = t - test.log_ratios()
    return float(np.sqrt(np.mean(r * r)))


def _merge_count(a: np.ndarray) -> int:
    """Number of strict inversions in ``a`` (pairs i < j with a[i] > a[j]), by merge sort."""
    a = [int(v) for v in a]
    n = len(a)
    buf = [0] * n
    swaps = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    swaps += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k:k + mid - i] = a[i:mid]
            k += mid - i
            buf[k:k + hi - j] = a[j:hi]
        a, buf = buf, a
        width *= 2
    return swaps


def _tied_pairs(sorted_vals: np.ndarray) -> int:
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(est, truth) -> float:
    """Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm)."""
    x = est.scores if isinstance(est, ScoreVector) else np.asarray(est, dtype=float)
    y = truth.scores if isinstance(truth, ScoreVector) else np.asarray(truth, dtype=float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    n = len(x)
    if n < 2:
        raise ValueError("kendall_tau needs at least two items")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(xs)
    # pairs tied in both x and y
    joint = 0
    start = 0
    for end in range(1, n + 1):
        if end == n or xs[end] != xs[start] or ys[end] != ys[start]:
            c = end - start
            joint += c * (c - 1) // 2
            start = end
    n2 = _tied_pairs(ys)
    # ys sorted by (x, y); inversions in ys count discordant pairs
    ranks = np.unique(ys, return_inverse=True)[1]
    discordant = _merge_count(ranks)
    concordant = n0 - n1 - n2 + joint - discordant
    return tau_b(concordant, discordant, n0, n1, n2)


def tau_b(concordant: int, discordant: int, n0: int, n1: int, n2: int) -> float:
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        return float("nan")
    return (concordant - discordant) / denom


def bench_model_config(**overrides) -> ModelConfig:
    """Embedding settings used for benchmark grids.

    Neighbor-mean aggregation and tanh keep activations unsaturated at the
    degrees of the denser cells. The linear head's triangle defect vanishes
    identically, so no triples are sampled for it.
    """
    base = dict(nonlinearity="tanh", aggregation="mean", triangle_samples=0)
    base.update(overrides)
    return ModelConfig(**base)


def bench_optimizer_config(**overrides) -> OptimizerConfig:
    return OptimizerConfig(**{"epochs": 1000, **overrides})


def bench_minibatch_optimizer_config(**overrides) -> OptimizerConfig:
    """Fewer, noisier epochs; cosine decay lets the sampled gradients settle."""
    return OptimizerConfig(**{"epochs": 30, "lr": 0.03, "schedule": "cosine", **overrides})


def bench_scale_config(**overrides) -> ScaleConfig:
    return ScaleConfig(**{"batch_edges": 1024, "batch_triples": 0, **overrides})


@dataclass
class MethodConfig:
    model: ModelConfig = field(default_factory=bench_model_config)
    optimizer: OptimizerConfig = field(default_factory=bench_optimizer_config)
    scale: ScaleConfig = field(default_factory=bench_scale_config)
    minibatch_optimizer: OptimizerConfig = field(default_factory=bench_minibatch_optimizer_config)
    holdout_frac: float = 0.2
    track_memory: bool = False


def fit_method(train_obs: ComparisonSet, method: str, mcfg: MethodConfig, seed: int):
    """Returns ``(predictor, scores)`` where predictor feeds :func:`rmse_log_ratios`."""
    if method == "LLS":
        x = lls_scores(train_obs)
        return x, x
    model_cfg = replace(mcfg.model, seed=seed)
    if method == "ML":
        model = train(train_obs, model_cfg, mcfg.optimizer)
    elif method == "MlMinibatch":
        model = train_minibatch(
            train_obs, model_cfg, replace(mcfg.scale, seed=seed), mcfg.minibatch_optimizer
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    H = model.embeddings()
    return (lambda i, j: model.log_ratios(i, j, H)), model_scores(model, train_obs, H)


def run_experiment(synth: SynthConfig, method: str, mcfg: MethodConfig | None = None) -> ExperimentResult:
    mcfg = mcfg or MethodConfig()
    x_true, obs = generate(synth)
    train_obs, test_obs = split(obs, mcfg.holdout_frac, seed=synth.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DisconnectedGraphWarning)
        if mcfg.track_memory:
            tracemalloc.start()
        t0 = time.perf_counter()
        try:
            predictor, scores = fit_method(train_obs, method, mcfg, synth.seed)
            elapsed = time.perf_counter() - t0
        finally:
            peak = tracemalloc.get_traced_memory()[1] if mcfg.track_memory else None
            if mcfg.track_memory:
                tracemalloc.stop()
    rmse = rmse_log_ratios(predictor, test_obs) if len(test_obs) else float("nan")
    return ExperimentResult(
        synth.n, synth.p, len(obs), method, elapsed, peak, rmse, kendall_tau(scores, x_true), synth.seed
    )


def failed_result(synth: SynthConfig, method: str) -> ExperimentResult:
    nan = float("nan")
    return ExperimentResult(synth.n, synth.p, -1, method, nan, None, nan, nan, synth.seed)


def sort_rows(rows: list[ExperimentResult]) -> list[ExperimentResult]:
    return sorted(rows, key=lambda r: (r.n, r.p, r.method, r.seed))


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _row_fields(r: ExperimentResult) -> list[str]:
    return [
        _num(r.n), _num(r.p), _num(r.edge_count), r.method, _num(r.wall_time_s),
        _num(r.peak_mem_bytes), _num(r.rmse), _num(r.kendall_tau), _num(r.seed),
    ]


def cell_medians(rows: list[ExperimentResult]) -> list[dict]:
    """Median edges/time/rmse/tau per (n, p, method) over seeds, NaN rows skipped."""
    cells: dict[tuple, list[ExperimentResult]] = {}
    for r in rows:
        cells.setdefault((r.n, r.p, r.method), []).append(r)
    out = []
    for (n, p, method), rs in sorted(cells.items()):
        ok = [r for r in rs if not math.isnan(r.rmse) or not math.isnan(r.kendall_tau)]
        if not ok:
            continue
        out.append({
            "n": n, "p": p, "method": method,
            "edges": median(r.edge_count for r in ok),
            "time_s": median(r.wall_time_s for r in ok),
            "rmse": median(r.rmse for r in ok),
            "tau": median(r.kendall_tau for r in ok),
        })
    return out


def format_table(rows: list[ExperimentResult]) -> str:
    cells = cell_medians(rows)
    head = f"{'n':>7} {'p':>8} {'edges':>9} {'method':>12} {'time_s':>10} {'rmse':>8} {'tau':>7}"
    lines = [head, "-" * len(head)]
    for c in cells:
        lines.append(
            f"{c['n']:>7} {c['p']:>8.4g} {c['edges']:>9.0f} {c['method']:>12} "
            f"{c['time_s']:>10.4f} {c['rmse']:>8.4f} {c['tau']:>7.4f}"
        )
    return "\n".join(lines)


def emit_report(
    rows: list[ExperimentResult],
    path,
    text: bool = False,
    figures: bool = False,
) -> list[Path]:
    """Write the CSV report to ``path``; optionally an aligned text table and figure data.

    Figure files land next to the report: ``fig_rmse_vs_p.csv``,
    ``fig_tau_vs_p.csv`` (``n,p,method,value``) and ``fig_time_vs_edges.csv``
    (``edges,method,time_s``, ascending by edges).
    """
    if not rows:
        raise ValueError("no rows to report")
    path = Path(path)
    rows = sort_rows(rows)
    written = [path]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow(_row_fields(r))
    if text:
        tpath = path.with_suffix(".txt")
        tpath.write_text(format_table(rows) + "\n", encoding="utf-8")
        written.append(tpath)
    if figures:
        cells = cell_medians(rows)
        for name, key in (("fig_rmse_vs_p.csv", "rmse"), ("fig_tau_vs_p.csv", "tau")):
            fpath = path.parent / name
            with open(fpath, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["n", "p", "method", key])
                for c in sorted(cells, key=lambda c: (c["method"], c["n"], c["p"])):
                    w.writerow([c["n"], _num(float(c["p"])), c["method"], _num(float(c[key]))])
            written.append(fpath)
        fpath = path.parent / "fig_time_vs_edges.csv"
        with open(fpath, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["edges", "method", "time_s"])
            for c in sorted(cells, key=lambda c: (c["edges"], c["method"])):
                w.writerow([_num(float(c["edges"])), c["method"], _num(float(c["time_s"]))])
        written.append(fpath)
    return written


def read_report(path) -> list[ExperimentResult]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ExperimentResult(
                int(rec["n"]), float(rec["p"]), int(rec["edges"]), rec["method"],
                float(rec["time_s"]), int(rec["peak_mem"]) if rec["peak_mem"] else None,
                float(rec["rmse"]), float(rec["tau"]), int(rec["seed"]),
            ))
    return rows
