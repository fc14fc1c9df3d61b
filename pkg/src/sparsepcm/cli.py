"""``pcm`` command-line driver.

Exit codes: 0 success, 1 validation failure, 2 parse error, 3 resource guard,
4 model or solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io as pcmio
from .bench import (
    MethodConfig,
    SynthConfig,
    bench_minibatch_optimizer_config,
    bench_model_config,
    bench_optimizer_config,
    bench_scale_config,
    emit_report,
    failed_result,
    format_table,
    generate,
    run_experiment,
    sort_rows,
)
from .btl import BtlDivergenceError, BtlFitConfig, MleDoesNotExist
from .btl import fit as btl_fit
from .core import (
    DEFAULT_MAX_DENSE_N,
    ComparisonSet,
    ConvergenceError,
    DensePcm,
    PcmError,
    ResourceGuardError,
    ValidationReport,
    consistency_report,
    triangle_residuals,
    validate,
    validate_comparisons,
)
from .lls import lls_complete, lls_scores
from .model import ModelConfig, OptimizerConfig, TrainingError, ml_complete, model_scores, train
from .scale import ScaleConfig, train_minibatch

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_GUARD, EXIT_SOLVER = 0, 1, 2, 3, 4
RESIDUAL_SAMPLE = 1000

# flag dest -> (config section, field)
OVERRIDES = {
    "dim": ("model", "d"),
    "layers": ("model", "layers"),
    "nonlinearity": ("model", "nonlinearity"),
    "head": ("model", "head"),
    "aggregation": ("model", "aggregation"),
    "lambda_triangle": ("model", "lambda_triangle"),
    "lambda_reg": ("model", "lambda_reg"),
    "epochs": ("optimizer", "epochs"),
    "lr": ("optimizer", "lr"),
    "batch_edges": ("scale", "batch_edges"),
    "batch_triples": ("scale", "batch_triples"),
    "ridge": ("btl", "l2_strength"),
    "holdout": ("bench", "holdout_frac"),
}


def default_config(trainer: str = "fullbatch") -> dict:
    opt = bench_minibatch_optimizer_config() if trainer == "minibatch" else bench_optimizer_config()
    return {
        "seed": 0,
        "model": asdict(bench_model_config()),
        "optimizer": asdict(opt),
        "scale": asdict(bench_scale_config()),
        "btl": asdict(BtlFitConfig()),
        "bench": {"holdout_frac": 0.2},
    }


def resolve_config(args) -> dict:
    """Defaults, then the JSON file, then explicit flags."""
    cfg = default_config(getattr(args, "trainer", "fullbatch"))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise pcmio.PcmParseError(f"config is not valid JSON: {exc.msg}", exc.lineno) from None
        for key, val in loaded.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                unknown = set(val) - set(cfg[key])
                if unknown:
                    raise PcmError(f"unknown {key} config keys: {sorted(unknown)}")
                cfg[key].update(val)
            elif key == "seed":
                cfg["seed"] = val
            else:
                raise PcmError(f"unknown config section {key!r}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    for dest, (section, name) in OVERRIDES.items():
        val = getattr(args, dest, None)
        if val is not None:
            cfg[section][name] = val
    cfg["model"]["seed"] = cfg["seed"]
    cfg["scale"]["seed"] = cfg["seed"]
    return cfg


def _configs(cfg: dict):
    return (
        ModelConfig(**cfg["model"]),
        OptimizerConfig(**cfg["optimizer"]),
        ScaleConfig(**cfg["scale"]),
    )


def _read_comparisons(path) -> ComparisonSet:
    kind = pcmio.sniff(path)
    if kind == "sparse":
        return pcmio.read_sparse(path)
    if kind == "counts":
        return pcmio.read_counts(path)
    raise PcmError(f"{path}: expected a sparse 'i,j,value' or counts 'i,j,wins_i,wins_j' file")


def _fit_model(obs: ComparisonSet, cfg: dict, trainer: str):
    model_cfg, opt, scfg = _configs(cfg)
    model_cfg = replace(model_cfg, mode="btl" if obs.mode == "counts" else "lls")
    if trainer == "minibatch":
        return train_minibatch(obs, model_cfg, scfg, opt)
    return train(obs, model_cfg, opt)


def _residual_sample(pcm: DensePcm, seed: int) -> float:
    n = pcm.n
    if n < 3:
        return 0.0
    rng = np.random.default_rng(seed)
    tri = np.stack([rng.choice(n, 3, replace=False) for _ in range(RESIDUAL_SAMPLE)])
    return float(triangle_residuals(pcm, tri).max())


def cmd_validate(args) -> int:
    kind = pcmio.sniff(args.file)
    if kind == "dense":
        pcm = pcmio.read_dense(args.file)
        report = validate(pcm, tol=args.tol)
        print(report)
        if report.valid:
            print(consistency_report(pcm))
    else:
        obs = pcmio.read_counts(args.file) if kind == "counts" else pcmio.read_sparse(args.file)
        # win counts carry no reciprocity constraint
        report = validate_comparisons(obs, tol=args.tol) if obs.mode == "cardinal" else ValidationReport()
        print(report)
        print(f"n = {obs.n}, observed pairs = {len(obs)}")
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_complete(args, cfg: dict) -> int:
    obs = pcmio.read_sparse(args.file)
    out = Path(args.output)
    max_n = None if args.max_dense_n <= 0 else args.max_dense_n
    if args.method == "lls":
        if args.sparse_output:
            x, pcm = lls_scores(obs), None
        else:
            x, pcm = lls_complete(obs, max_dense_n=max_n)
    else:
        if not args.sparse_output and max_n is not None and obs.n > max_n:
            raise ResourceGuardError(f"refusing dense {obs.n} x {obs.n} completion (limit {max_n})")
        model = _fit_model(obs, cfg, args.trainer)
        x = model_scores(model, obs)
        pcm = None if args.sparse_output else ml_complete(model, max_dense_n=max_n)
    if pcm is None:
        pcmio.write_scores(x, args.scores or out)
        return EXIT_OK
    pcmio.write_dense(pcm, out)
    pcmio.write_scores(x, args.scores or out.with_name(out.stem + ".scores.csv"))
    print(f"max triangle residual (sample of {RESIDUAL_SAMPLE}) = {_residual_sample(pcm, cfg['seed']):.6g}")
    return EXIT_OK


def cmd_rank(args, cfg: dict) -> int:
    obs = _read_comparisons(args.file)
    if args.method == "btl":
        if obs.mode != "counts":
            raise PcmError("btl ranking needs a counts file 'i,j,wins_i,wins_j'")
        x = btl_fit(obs, BtlFitConfig(**cfg["btl"]))
    elif args.method == "lls":
        x = lls_scores(obs)
    else:
        model = _fit_model(obs, cfg, args.trainer)
        x = model_scores(model, obs)
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            pcmio.write_ranking(x, fh)
    else:
        pcmio.write_ranking(x, sys.stdout)
    return EXIT_OK


def _bench_cell(job):
    synth, method, mcfg = job
    try:
        return run_experiment(synth, method, mcfg)
    except (PcmError, ConvergenceError, TrainingError, ResourceGuardError, FloatingPointError,
            OverflowError, BtlDivergenceError) as exc:
        print(f"cell n={synth.n} p={synth.p} {method} seed={synth.seed} failed: {exc}", file=sys.stderr)
        return failed_result(synth, method)


def worker_count() -> int:
    raw = os.environ.get("PCM_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise PcmError(f"PCM_THREADS must be an integer, got {raw!r}") from None


def cmd_bench(args, cfg: dict) -> int:
    model_cfg, opt, scfg = _configs(cfg)
    mcfg = MethodConfig(
        model_cfg, opt, scfg, minibatch_optimizer=opt,
        holdout_frac=cfg["bench"]["holdout_frac"], track_memory=args.memory,
    )
    names = {"lls": "LLS", "ml": "MlMinibatch" if args.trainer == "minibatch" else "ML"}
    jobs = [
        (SynthConfig(n, p, noise_sigma=args.sigma, seed=cfg["seed"] + s), names[m], mcfg)
        for n in args.n for p in args.p for m in args.methods for s in range(args.seeds)
    ]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = [_bench_cell(job) for job in jobs]
    rows = sort_rows(rows)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(rows, out / "report.csv", text=True, figures=True)
    print(format_table(rows))
    if all(r.edge_count < 0 for r in rows):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_gen(args, cfg: dict) -> int:
    x, obs = generate(SynthConfig(args.n, args.p, noise_sigma=args.sigma, seed=cfg["seed"]))
    pcmio.write_sparse(obs, args.output)
    if args.truth:
        pcmio.write_scores(x, args.truth)
    print(f"wrote {len(obs)} comparisons over {obs.n} items to {args.output}")
    return EXIT_OK


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None

    return parse


def _methods(text):
    items = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in ("lls", "ml")]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"methods must be lls and/or ml, got {text!r}")
    return items


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--config", help="JSON file with model/optimizer/scale/btl/bench sections")
    common.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--trainer", choices=("fullbatch", "minibatch"), default="fullbatch")
    training.add_argument("--dim", type=int)
    training.add_argument("--layers", type=int)
    training.add_argument("--nonlinearity", choices=("relu", "tanh"))
    training.add_argument("--head", choices=("linear", "mlp"))
    training.add_argument("--aggregation", choices=("sum", "mean"))
    training.add_argument("--lambda-triangle", type=float)
    training.add_argument("--lambda-reg", type=float)
    training.add_argument("--epochs", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--batch-edges", type=int)
    training.add_argument("--batch-triples", type=int)

    parser = argparse.ArgumentParser(prog="pcm", description="Sparse pairwise comparison completion and ranking.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a dense or sparse PCM file")
    p.add_argument("file")
    p.add_argument("--tol", type=float, default=1e-9, help="relative reciprocity tolerance")

    p = sub.add_parser("complete", parents=[common, training], help="complete a sparse PCM")
    p.add_argument("file")
    p.add_argument("--method", choices=("lls", "ml"), default="lls")
    p.add_argument("-o", "--output", required=True, help="dense PCM output (scores go next to it)")
    p.add_argument("--scores", help="scores output path (default <output>.scores.csv)")
    p.add_argument("--sparse-output", action="store_true", help="write scores only, no dense matrix")
    p.add_argument("--max-dense-n", type=int, default=DEFAULT_MAX_DENSE_N, help="dense guard; <= 0 disables")

    p = sub.add_parser("rank", parents=[common, training], help="rank items from ratios or win counts")
    p.add_argument("file")
    p.add_argument("--method", choices=("lls", "btl", "ml"), default="lls")
    p.add_argument("--ridge", type=float, help="BTL l2 strength (needed for separable data)")
    p.add_argument("-o", "--output", help="ranking CSV (default stdout)")

    p = sub.add_parser("bench", parents=[common, training], help="run a synthetic benchmark grid")
    p.add_argument("--n", type=_csv_list(int), required=True)
    p.add_argument("--p", type=_csv_list(float), required=True)
    p.add_argument("--methods", type=_methods, default=["lls", "ml"])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--holdout", type=float)
    p.add_argument("--memory", action="store_true", help="record peak traced allocation per fit")
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic sparse PCM")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--truth", help="also write the true scores here")
    p.add_argument("-o", "--output", required=True)
    return parser


COMMANDS = {"complete": cmd_complete, "rank": cmd_rank, "bench": cmd_bench, "gen": cmd_gen}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "validate":
            return cmd_validate(args)
        return COMMANDS[args.command](args, cfg)
    except pcmio.PcmParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ResourceGuardError as exc:
        print(f"resource guard: {exc} (pass --sparse-output for scores only)", file=sys.stderr)
        return EXIT_GUARD
    except MleDoesNotExist as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConvergenceError, TrainingError, BtlDivergenceError, OverflowError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def main(argv=None) -> None:
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        sys.exit(run(argv))


if __name__ == "__main__":
    main()
