"""Command line entry point: ``dynblock <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .seq import DomainError

log = logging.getLogger("dynblock")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dynblock", description="Dynamic-block diffusion LM toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="JSON run config (defaults when omitted)")
        if out:
            sp.add_argument("--out", type=Path, required=True, help="run directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        return sp

    common(sub.add_parser("pretrain", help="build the corpus and pretrain the denoiser"))
    sp = common(sub.add_parser("rl-train", help="GRPO post-training from a checkpoint"))
    sp.add_argument("--init", type=Path, required=True, help="starting checkpoint")
    sp = common(sub.add_parser("generate", help="decode one prompt"), out=False)
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--prompt", required=True, help='e.g. "Numbers: 3 5 7 Target: 9"')
    sp.add_argument("--mode", choices=["fixed", "dynamic"])
    sp.add_argument("--c", type=int)
    sp = common(sub.add_parser("evaluate", help="decode the test split and write a trace"))
    sp.add_argument("--ckpt", type=Path, required=True)
    sp.add_argument("--mode", choices=["fixed", "dynamic"])
    sp.add_argument("--c", type=int)
    sp = common(sub.add_parser("analyze", help="r_SCC binning and hard-sample comparison of traces"), config=False)
    sp.add_argument("--trace", type=Path, required=True)
    sp.add_argument("--baseline", type=Path, help="baseline trace for the hard-sample comparison")
    sp.add_argument("--bins", type=int, default=6)
    sp = sub.add_parser("theorem1", help="exhaustive check of the descent equivalence")
    sp.add_argument("--kmax", type=int, default=6)
    sp.add_argument("--out", type=Path)
    sp = common(sub.add_parser("bench-overhead", help="time dynamic against fixed decoding"))
    sp.add_argument("--ckpt", type=Path, required=True)
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_pretrain(args):
    from .experiment import run_pretrain
    run_pretrain(load_config(args), args.out)


def _cmd_rl_train(args):
    from .experiment import run_rl
    run_rl(load_config(args), args.init, args.out)


def _cmd_generate(args):
    from .decode import generate
    from .net import load_checkpoint
    cfg = load_config(args)
    params, vocab, _ = load_checkpoint(args.ckpt)
    dcfg = cfg.decode
    if args.mode:
        dcfg = replace(dcfg, mode=args.mode)
    if args.c:
        dcfg = replace(dcfg, c=args.c)
    _, tr = generate(params, vocab, vocab.encode(args.prompt), dcfg, np.random.default_rng(cfg.seed))
    for b in tr.blocks:
        print(f"block {b.span.k} [{b.span.size}] H={np.mean(b.per_position_entropy):.3f}: {vocab.render(b.tokens)}")


def _cmd_evaluate(args):
    from .experiment import run_evaluate
    path = run_evaluate(load_config(args), args.ckpt, args.out, args.mode, args.c)
    print(path)


def _cmd_analyze(args):
    from .experiment import run_analyze
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    rep = run_analyze(args.trace, args.out, args.bins, args.baseline)
    print(json.dumps({k: rep[k] for k in ("n_samples", "accuracy", "r_scc_mean", "r_med", "bin_accuracy_corr", "hard")},
                     sort_keys=True))


def _cmd_theorem1(args):
    from .rewards import format_theorem1_report, theorem1_check, theorem1_json
    if args.kmax < 2:
        raise UsageError("--kmax must be >= 2")
    report = theorem1_check(args.kmax)
    print(format_theorem1_report(report))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "theorem1.json").write_text(theorem1_json(report) + "\n")
    if not report["passed"]:
        raise RuntimeError("counterexamples found")


def _cmd_bench_overhead(args):
    from .analysis import bench_overhead, boundary_scan_scaling, overhead_csv
    from .experiment import datasets, write_manifest
    from .net import load_checkpoint
    cfg = load_config(args)
    params, vocab, _ = load_checkpoint(args.ckpt)
    _, test = datasets(cfg, vocab)
    prompts = [i.prompt for i in test.instances[:cfg.analysis.bench_prompts]]
    res = bench_overhead(params, vocab, prompts, replace(cfg.decode, mode="fixed"),
                         replace(cfg.decode, mode="dynamic"), cfg.analysis.bench_runs, cfg.seed)
    res["boundary_scan"] = boundary_scan_scaling()
    args.out.mkdir(parents=True, exist_ok=True)
    overhead_csv(args.out / "overhead.csv", res)
    (args.out / "overhead.json").write_text(json.dumps(res, sort_keys=True, indent=2) + "\n")
    write_manifest(args.out, cfg, "bench-overhead")
    print(f"dynamic/fixed time per token: mean {res['ratio_mean']:.3f} max {res['ratio_max']:.3f}")


COMMANDS = {
    "pretrain": _cmd_pretrain,
    "rl-train": _cmd_rl_train,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "analyze": _cmd_analyze,
    "theorem1": _cmd_theorem1,
    "bench-overhead": _cmd_bench_overhead,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # a single intra-op thread keeps float reductions in a fixed order across runs
    torch.set_num_threads(1)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"dynblock {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DomainError, RuntimeError, OSError, ValueError) as exc:
        print(f"dynblock {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
