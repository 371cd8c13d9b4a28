"""Block-entropy rewards, indicator reward, task reward and their aggregation."""

from __future__ import annotations

import itertools
import json
import math
import re
import time
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from .seq import DomainError

NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True)
class RewardBreakdown:
    r_ent: float
    r_ind: float
    r_task: float
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RSCCReport:
    r_scc: float
    rank_vector: tuple
    delta_squares: tuple
    k: int


def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(max(0.0, -(nz * np.log(nz)).sum()))


def block_entropy(distributions) -> float:
    """Mean natural-log Shannon entropy of the per-position distributions."""
    dists = [np.asarray(p, dtype=np.float64) for p in distributions]
    if not dists:
        raise DomainError("block_entropy needs at least one distribution")
    for p in dists:
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL or (p < 0).any():
            raise DomainError("distribution is not normalized")
    return sum(shannon_entropy(p) for p in dists) / len(dists)


def entropy_ranks(values) -> list[int]:
    """Ascending 1-based ranks; ties keep block order."""
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def r_scc(h) -> RSCCReport:
    values = [float(v) for v in h]
    K = len(values)
    if K < 2:
        raise DomainError("r_scc needs at least two blocks")
    ranks = entropy_ranks(values)
    d2 = tuple((k - r) ** 2 for k, r in enumerate(ranks, start=1))
    rho = 1.0 - 6.0 * sum(d2) / (K * (K * K - 1))
    return RSCCReport(r_scc=-rho, rank_vector=tuple(ranks), delta_squares=d2, k=K)


def entropy_descent_reward(h) -> float:
    """Fraction of adjacent block pairs whose entropy strictly drops; 0 for a single block."""
    values = [float(v) for v in h]
    K = len(values)
    if K < 2:
        return 0.0
    drops = sum(1 for a, b in zip(values, values[1:]) if a > b)
    return drops / (K - 1)


def indicator_reward(k: int, k_target: int) -> float:
    if k < 0 or k_target < 1:
        raise DomainError("indicator_reward needs k >= 0 and k_target >= 1")
    if k >= k_target:
        return 1.0
    return math.log(k + 1) / math.log(k_target + 1)


def total_reward(r_ent: float, r_ind: float, r_task: float,
                 alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0) -> RewardBreakdown:
    if min(alpha, beta, gamma) < 0:
        raise DomainError("reward weights must be non-negative")
    total = alpha * r_ent + beta * r_ind + gamma * r_task
    return RewardBreakdown(r_ent, r_ind, r_task, alpha, beta, gamma, total)


# --- countdown task reward --------------------------------------------------------

_EXPR = re.compile(r"^\d+([+-]\d+)*$")


def parse_expression(text: str) -> Optional[tuple[list[int], int]]:
    """Parse ``a +- b +- c [= v]``; returns (operands, left-to-right value) or None."""
    s = re.sub(r"\s+", "", text.replace("−", "-"))
    if "=" in s:
        s, _, rhs = s.partition("=")
        if not re.fullmatch(r"-?\d*", rhs):
            return None
    if not _EXPR.match(s):
        return None
    nums = [int(n) for n in re.findall(r"\d+", s)]
    ops = re.findall(r"[+-]", s)
    value = nums[0]
    for op, n in zip(ops, nums[1:]):
        value = value + n if op == "+" else value - n
    return nums, value


def final_expression(output_text: str) -> str:
    """The answer segment of a rendered completion."""
    body = output_text.split("<eos>", 1)[0]
    if "Answer:" in body:
        body = body.rsplit("Answer:", 1)[1]
    elif "\\block" in body:
        body = body.rsplit("\\block", 1)[1]
    return body.strip()


def countdown_task_reward(output_text: str, numbers, target: int) -> float:
    parsed = parse_expression(final_expression(output_text))
    if parsed is None:
        return 0.0
    used, value = parsed
    if sorted(used) != sorted(int(n) for n in numbers):
        return 0.0
    return 1.0 if value == target else 0.1


# --- alternative intrinsic rewards ----------------------------------------------

def alt_reward(kind: str, *, entropies=None, k: Optional[int] = None, k_target: Optional[int] = None,
               sizes=None, max_block_cap: Optional[int] = None, vocab_size: Optional[int] = None) -> float:
    if kind == "avg_entropy":
        return 1.0 - float(np.mean(entropies)) / math.log(vocab_size)
    if kind == "format_count":
        return min(k, k_target) / k_target
    if kind == "block_size":
        return 1.0 - float(np.mean(sizes)) / max_block_cap
    raise DomainError(f"unknown alternative reward {kind!r}")


# --- descent equivalence, checked exhaustively ---------------------------------------

def theorem1_check(k_max: int) -> dict:
    """Enumerate every permutation of K distinct values for K = 2..k_max and check that
    R_ent = 1, r_SCC = 1 and strict descent coincide."""
    if k_max < 2:
        raise DomainError("k_max must be >= 2")
    t0 = time.perf_counter()
    per_k = {}
    counterexamples = []
    for K in range(2, k_max + 1):
        base = [float(v) for v in range(1, K + 1)]
        n = 0
        maximizers = 0
        for perm in itertools.permutations(base):
            n += 1
            ent_max = entropy_descent_reward(perm) == 1.0
            scc_max = r_scc(perm).r_scc == 1.0
            decreasing = all(a > b for a, b in zip(perm, perm[1:]))
            maximizers += ent_max
            if not (ent_max == scc_max == decreasing):
                counterexamples.append({"K": K, "values": list(perm), "r_ent_max": ent_max,
                                        "r_scc_max": scc_max, "decreasing": decreasing})
        per_k[K] = {"permutations": n, "maximizers": maximizers}
    return {
        "k_max": k_max,
        "permutations": sum(v["permutations"] for v in per_k.values()),
        "per_k": per_k,
        "counterexamples": counterexamples,
        "passed": not counterexamples,
        "seconds": time.perf_counter() - t0,
    }


def format_theorem1_report(report: dict) -> str:
    lines = [f"exhaustive check K=2..{report['k_max']}: {report['permutations']} permutations"]
    for K, v in report["per_k"].items():
        lines.append(f"  K={K}: {v['permutations']} permutations, {v['maximizers']} maximizer(s)")
    lines.append(f"counterexamples: {len(report['counterexamples'])}")
    lines.append("PASS" if report["passed"] else "FAIL")
    return "\n".join(lines)


def theorem1_json(report: dict) -> str:
    out = {k: v for k, v in report.items() if k != "seconds"}
    out["per_k"] = {str(k): v for k, v in report["per_k"].items()}
    return json.dumps(out, sort_keys=True, indent=2)


def r_med_stats(scores) -> tuple[float, float]:
    """(mean r_SCC, fraction strictly positive)."""
    s = [float(v) for v in scores]
    if not s:
        raise DomainError("r_med_stats needs at least one score")
    return sum(s) / len(s), sum(1 for v in s if v > 0) / len(s)
