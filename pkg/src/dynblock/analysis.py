"""Diagnostics over evaluation traces: r_SCC binning, r_MED, hard samples, decoding overhead."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .decode import DecodeConfig, generate
from .net import ModelParams
from .rewards import r_med_stats
from .seq import DomainError, Vocabulary, find_boundary


@dataclass
class AnalysisReport:
    bins: list = field(default_factory=list)
    n_samples: int = 0
    accuracy: Optional[float] = None
    r_scc_mean: Optional[float] = None
    r_med: Optional[float] = None
    bin_accuracy_corr: Optional[float] = None
    hard: Optional[dict] = None
    overhead: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"bins": self.bins, "n_samples": self.n_samples, "accuracy": self.accuracy,
                "r_scc_mean": self.r_scc_mean, "r_med": self.r_med,
                "bin_accuracy_corr": self.bin_accuracy_corr, "hard": self.hard,
                "overhead": self.overhead}


def _round(x: Optional[float], nd: int = 12) -> Optional[float]:
    return None if x is None else round(float(x), nd)


def bin_index(r: float, bins: int) -> int:
    if not -1.0 - 1e-12 <= r <= 1.0 + 1e-12:
        raise DomainError(f"r_scc {r} outside [-1, 1]")
    return min(max(int((r + 1.0) / (2.0 / bins)), 0), bins - 1)


def bin_by_rscc(records, bins: int = 6, report: Optional[AnalysisReport] = None) -> AnalysisReport:
    """Equal-width r_SCC bins over [-1, 1] with per-bin accuracy.

    The bin-accuracy correlation is Spearman's rho between bin midpoints and
    accuracies over non-empty bins; None when it is undefined.
    """
    if bins < 1:
        raise DomainError("bins must be >= 1")
    records = list(records)
    report = report or AnalysisReport()
    counts = np.zeros(bins, dtype=int)
    hits = np.zeros(bins, dtype=int)
    for rec in records:
        i = bin_index(rec.r_scc, bins)
        counts[i] += 1
        hits[i] += bool(rec.correct)
    width = 2.0 / bins
    rows = []
    for i in range(bins):
        lo = -1.0 + i * width
        rows.append({"bin": i, "lo": _round(lo), "hi": _round(lo + width), "count": int(counts[i]),
                     "accuracy": _round(hits[i] / counts[i]) if counts[i] else None})
    report.bins = rows
    report.n_samples = int(counts.sum())
    filled = [r for r in rows if r["count"]]
    corr = None
    if len(filled) >= 2:
        mids = [(r["lo"] + r["hi"]) / 2 for r in filled]
        accs = [r["accuracy"] for r in filled]
        if len(set(accs)) > 1:
            corr = _round(stats.spearmanr(mids, accs).statistic)
    report.bin_accuracy_corr = corr
    if records:
        mean, med = r_med_stats([r.r_scc for r in records])
        report.r_scc_mean, report.r_med = _round(mean), _round(med)
        report.accuracy = _round(sum(bool(r.correct) for r in records) / len(records))
    return report


def hard_sample_compare(baseline, method) -> dict:
    """Restrict to instances the baseline gets wrong and see how the method fares on them."""
    baseline, method = list(baseline), list(method)
    base = {r.instance_fingerprint: r for r in baseline}
    meth = {r.instance_fingerprint: r for r in method}
    if len(base) != len(baseline) or len(meth) != len(method):
        raise DomainError("duplicate instance fingerprints")
    if set(base) != set(meth):
        raise DomainError("baseline and method records cover different instances")
    hard = sorted(fp for fp, r in base.items() if not r.correct)
    fixed = sum(1 for fp in hard if meth[fp].correct)
    delta = None
    if hard:
        delta = _round(float(np.mean([meth[fp].r_scc - base[fp].r_scc for fp in hard])))
    return {"hard_size": len(hard), "fixed": fixed, "r_scc_delta": delta}


def write_bins_csv(path, report: AnalysisReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "lo", "hi", "count", "accuracy"])
        for r in report.bins:
            w.writerow([r["bin"], r["lo"], r["hi"], r["count"], "" if r["accuracy"] is None else r["accuracy"]])


# --- overhead ------------------------------------------------------------------

def _time_mode(params, vocab, prompts, cfg: DecodeConfig, seed: int) -> tuple[float, int]:
    secs, tokens = 0.0, 0
    for i, prompt in enumerate(prompts):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        _, tr = generate(params, vocab, prompt, cfg, rng)
        secs += time.perf_counter() - t0
        tokens += len(tr.completion)
    return secs, tokens


def bench_overhead(params: ModelParams, vocab: Vocabulary, prompts, fixed: DecodeConfig,
                   dynamic: DecodeConfig, runs: int = 3, seed: int = 0) -> dict:
    """Wall-clock per committed token, dynamic over fixed, at the same window budget."""
    if fixed.max_window != dynamic.max_window:
        raise DomainError("overhead comparison needs equal window budgets")
    if runs < 1:
        raise DomainError("runs must be >= 1")
    fixed = replace(fixed, mode="fixed")
    dynamic = replace(dynamic, mode="dynamic")
    # warm-up so the first timed mode does not pay for allocator setup
    _time_mode(params, vocab, prompts[:2], fixed, seed)
    per_run = []
    for r in range(runs):
        fs, ft = _time_mode(params, vocab, prompts, fixed, seed + r)
        ds, dt = _time_mode(params, vocab, prompts, dynamic, seed + r)
        per_run.append({"fixed_s_per_token": fs / max(ft, 1), "dynamic_s_per_token": ds / max(dt, 1),
                        "fixed_tokens": ft, "dynamic_tokens": dt,
                        "ratio": (ds / max(dt, 1)) / (fs / max(ft, 1))})
    ratios = [p["ratio"] for p in per_run]
    return {"runs": per_run, "ratio_mean": float(np.mean(ratios)), "ratio_max": float(max(ratios)),
            "window": fixed.max_window}


def boundary_scan_scaling(windows=(64, 128, 256), repeats: int = 20, indicator_id: int = 1,
                          rounds: int = 60) -> dict:
    """Time a full no-hit boundary scan per window length and fit a log-log slope.

    Lengths are interleaved within each round and each keeps its best timing, so a
    burst of scheduler noise cannot land on one length only.
    """
    best = {W: float("inf") for W in windows}
    scans = {W: [0] * W for W in windows}
    for _ in range(rounds):
        for W in windows:
            t0 = time.perf_counter()
            for _ in range(repeats):
                find_boundary(scans[W], 1, W, indicator_id)
            best[W] = min(best[W], (time.perf_counter() - t0) / repeats)
    times = [best[W] for W in windows]
    slope, _ = np.polyfit(np.log(windows), np.log(times), 1)
    return {"windows": list(windows), "seconds": times, "loglog_slope": float(slope)}


def overhead_csv(path, overhead: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "fixed_s_per_token", "dynamic_s_per_token", "fixed_tokens", "dynamic_tokens", "ratio"])
        for i, r in enumerate(overhead["runs"]):
            w.writerow([i, f"{r['fixed_s_per_token']:.6e}", f"{r['dynamic_s_per_token']:.6e}",
                        r["fixed_tokens"], r["dynamic_tokens"], f"{r['ratio']:.4f}"])
