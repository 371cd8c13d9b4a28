"""Pipelines behind the CLI: pretrain, RL, evaluation traces, and the RL comparison experiment."""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import bin_by_rscc, hard_sample_compare, write_bins_csv
from .config import RunConfig
from .decode import DecodeConfig, generate
from .grpo import LOG_COLUMNS, rl_train_loop, score_completion
from .net import (ModelParams, init_params, load_checkpoint, pretrain, save_checkpoint,
                  write_loss_curve)
from .rewards import r_scc
from .seq import Vocabulary
from .tasks import COUNTDOWN, Dataset, build_corpus, make_splits, verify
from .traces import BlockRecord, SampleRecord, read_trace, write_trace

log = logging.getLogger(__name__)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out: Path, cfg: RunConfig, command: str, extra: Optional[dict] = None) -> None:
    manifest = {"command": command, "config_hash": cfg.hash(), "seed": cfg.seed,
                "git_describe": git_describe(), **(extra or {})}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    cfg.write(out / "config.json")


def datasets(cfg: RunConfig, vocab: Vocabulary) -> tuple[Dataset, Dataset]:
    t = cfg.task
    kw = {"max_number": t.max_number, "min_number": t.min_number} if t.kind == COUNTDOWN else {"steps": t.chain_steps}
    return make_splits(vocab, t.split_seed, t.n_train, t.n_test, t.kind, **kw)


def run_pretrain(cfg: RunConfig, out: Path) -> ModelParams:
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary.default()
    train, test = datasets(cfg, vocab)
    train.write(out / "train.jsonl")
    test.write(out / "test.jsonl")
    corpus = build_corpus(train.instances, vocab, cfg.model.max_len,
                          np.random.default_rng(cfg.task.corpus_seed), cfg.task.p_correct, cfg.task.copies)
    params = init_params(cfg.model.model_config(vocab.size), cfg.model.init_seed)
    params, losses = pretrain(corpus, replace(cfg.model.pretrain, seed=cfg.seed), params, vocab.mask_id)
    save_checkpoint(out / "model.ckpt", params, vocab, {"stage": "pretrain"})
    write_loss_curve(out / "loss.csv", losses)
    write_manifest(out, cfg, "pretrain")
    return params


def write_rl_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) if c == "step" else f"{r[c]:.6g}" for c in LOG_COLUMNS) + "\n")


def run_rl(cfg: RunConfig, init_ckpt, out: Path) -> ModelParams:
    out.mkdir(parents=True, exist_ok=True)
    params, vocab, _ = load_checkpoint(init_ckpt)
    train, _ = datasets(cfg, vocab)

    def progress(b, row):
        if b % 50 == 0:
            log.info("batch %d step %d mean_total %.3f mean_r_task %.3f", b, row["step"],
                     row["mean_total"], row["mean_r_task"])

    params, rows = rl_train_loop(params, train, cfg.grpo_config(), vocab, progress)
    save_checkpoint(out / "policy.ckpt", params, vocab, {"stage": "rl"})
    write_rl_log(out / "rl_log.csv", rows)
    write_manifest(out, cfg, "rl-train", {"init": str(init_ckpt)})
    return params


def evaluate_dataset(params: ModelParams, vocab: Vocabulary, dataset: Dataset, cfg: RunConfig,
                     dcfg: Optional[DecodeConfig] = None, limit: Optional[int] = None):
    """Decode every instance and score it; returns (block records, sample records)."""
    dcfg = dcfg or cfg.decode
    gcfg = cfg.grpo_config()
    gcfg = replace(gcfg, decode=dcfg)
    blocks, samples = [], []
    instances = dataset.instances[:limit] if limit else dataset.instances
    for sid, inst in enumerate(instances):
        # per-instance stream from (seed, fingerprint) keeps results independent of ordering
        rng = np.random.default_rng([cfg.seed, int(inst.fingerprint, 16)])
        _, tr = generate(params, vocab, inst.prompt, dcfg, rng)
        rb, _, _ = score_completion(tr.completion, tr, inst, gcfg, vocab)
        h = tr.block_entropies(cfg.rewards.entropy_source)
        scc = r_scc(h).r_scc if len(h) >= 2 else 0.0
        correct, _ = verify(inst, tr.completion, vocab)
        for b in tr.blocks:
            ents = b.per_position_entropy if cfg.rewards.entropy_source == "t_star" else b.commit_entropy
            blocks.append(BlockRecord(sid, b.span.k, b.span.start, b.span.size, b.t_star,
                                      tuple(round(e, 10) for e in ents), b.tokens, b.span.contains_indicator))
        samples.append(SampleRecord(sid, inst.fingerprint, dcfg.mode, tr.K, round(scc, 12),
                                    round(rb.r_ent, 12), round(rb.r_ind, 12), rb.r_task, bool(correct)))
    return blocks, samples


def trace_header(cfg: RunConfig, dcfg: DecodeConfig, ckpt: str) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "decode": dcfg.to_dict(), "checkpoint": Path(ckpt).name,
            "entropy_source": cfg.rewards.entropy_source}


def run_evaluate(cfg: RunConfig, ckpt, out: Path, mode: Optional[str] = None, c: Optional[int] = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    params, vocab, _ = load_checkpoint(ckpt)
    _, test = datasets(cfg, vocab)
    dcfg = cfg.decode
    if mode:
        dcfg = replace(dcfg, mode=mode)
    if c:
        dcfg = replace(dcfg, c=c)
    blocks, samples = evaluate_dataset(params, vocab, test, cfg, dcfg, cfg.analysis.eval_limit)
    path = out / f"trace_{dcfg.mode}.jsonl"
    write_trace(path, trace_header(cfg, dcfg, str(ckpt)), blocks, samples)
    acc = sum(s.correct for s in samples) / len(samples)
    summary = {"mode": dcfg.mode, "n": len(samples), "pass_at_1": acc,
               "mean_K": float(np.mean([s.K for s in samples]))}
    (out / f"summary_{dcfg.mode}.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    write_manifest(out, cfg, "evaluate", {"checkpoint": str(ckpt), "mode": dcfg.mode})
    return path


def run_analyze(trace_path, out: Path, bins: int, baseline_path=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    trace = read_trace(trace_path)
    report = bin_by_rscc(trace.samples, bins)
    if baseline_path is not None:
        report.hard = hard_sample_compare(read_trace(baseline_path).samples, trace.samples)
    write_bins_csv(out / "bins.csv", report)
    (out / "report.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    return report.to_dict()


# --- RL comparison experiment ----------------------------------------------------

def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def rl_comparison(cfg: RunConfig, root: Path, seeds=(0, 1, 2), reuse: bool = True) -> dict:
    """Pretrain once, then R_task-only and full-reward GRPO per seed; evaluate all on the test split.

    Results are cached under ``root`` keyed by config and source digests.
    """
    key = hashlib.sha256((cfg.canonical_json() + source_digest() + repr(tuple(seeds))).encode()).hexdigest()[:12]
    run = root / f"rl-{key}"
    summary_path = run / "summary.json"
    if reuse and summary_path.exists():
        return json.loads(summary_path.read_text())
    run.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    vocab = Vocabulary.default()
    pre_dir = run / "pretrain"
    if not (pre_dir / "model.ckpt").exists():
        run_pretrain(cfg, pre_dir)
    pre_ckpt = pre_dir / "model.ckpt"
    params, vocab, _ = load_checkpoint(pre_ckpt)
    _, test = datasets(cfg, vocab)

    def eval_to(params, path: Path, label: str):
        blocks, samples = evaluate_dataset(params, vocab, test, cfg)
        write_trace(path, {"label": label, "config_hash": cfg.hash(), "seed": cfg.seed,
                           "decode": cfg.decode.to_dict(), "entropy_source": cfg.rewards.entropy_source},
                    blocks, samples)
        return samples

    out = {"pre": {}, "task_only": {}, "b1": {}}
    pre_samples = eval_to(params, run / "trace_pre.jsonl", "pre")
    out["pre"]["pass_at_1"] = float(np.mean([s.correct for s in pre_samples]))
    variants = {"task_only": replace(cfg.rewards, disable_ent=True, disable_ind=True),
                "b1": replace(cfg.rewards, disable_ent=False, disable_ind=False)}
    for seed in seeds:
        for name, rewards in variants.items():
            vcfg = replace(cfg, rewards=rewards, seed=seed)
            d = run / f"{name}_seed{seed}"
            p = run_rl(vcfg, pre_ckpt, d)
            samples = eval_to(p, d / "trace.jsonl", f"{name}-seed{seed}")
            rep = bin_by_rscc(samples, cfg.analysis.bins)
            out[name][str(seed)] = {"pass_at_1": rep.accuracy, "r_scc_mean": rep.r_scc_mean,
                                    "r_med": rep.r_med, "bin_accuracy_corr": rep.bin_accuracy_corr,
                                    "trace": str(d / "trace.jsonl"),
                                    "elapsed_s": round(time.perf_counter() - t0, 1)}
            log.info("%s seed %d pass@1 %.3f", name, seed, rep.accuracy)
    for name in variants:
        runs = [out[name][str(s)] for s in seeds]
        out[name]["mean"] = {k: float(np.mean([r[k] for r in runs]))
                             for k in ("pass_at_1", "r_scc_mean", "r_med")}
    out["pre"]["checkpoint"] = str(pre_ckpt)
    out["pre"]["trace"] = str(run / "trace_pre.jsonl")
    out["seconds"] = round(time.perf_counter() - t0, 1)
    summary_path.write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return out
