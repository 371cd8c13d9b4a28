"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np

REL_FLOOR = 1e-4


def central_difference(f, x, h=1e-5):
    """Coordinate-wise central finite differences of scalar f at x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def max_rel_error(a, n, floor=REL_FLOOR):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / den).max())


def spearman_brute(values):
    """Negative Spearman rho via explicit rank counting, stable on ties."""
    K = len(values)
    ranks = []
    for i, v in enumerate(values):
        ranks.append(1 + sum(1 for j, u in enumerate(values) if u < v or (u == v and j < i)))
    d2 = sum((k - r) ** 2 for k, r in zip(range(1, K + 1), ranks))
    return -(1 - 6 * d2 / (K * (K * K - 1)))


def descent_brute(values):
    if len(values) < 2:
        return 0.0
    pairs = list(zip(values, values[1:]))
    return sum(1 for a, b in pairs if a > b) / len(pairs)


def indicator_brute(k, k_target):
    from mpmath import log, mp, mpf
    mp.dps = 40
    if k >= k_target:
        return 1.0
    return float(log(mpf(k + 1)) / log(mpf(k_target + 1)))


def entropy_brute(dists):
    from mpmath import log, mp, mpf
    mp.dps = 40
    total = mpf(0)
    for p in dists:
        for q in p:
            if q > 0:
                total -= mpf(q) * log(mpf(q))
    return float(total / len(dists))


def countdown_brute(text, numbers, target):
    """Tokenise by hand, evaluate left to right, compare number multisets."""
    body = text.split("<eos>")[0]
    if "Answer:" in body:
        body = body.split("Answer:")[-1]
    elif "\\block" in body:
        body = body.split("\\block")[-1]
    body = "".join(ch for ch in body.replace("−", "-") if not ch.isspace())
    if "=" in body:
        body, rhs = body.split("=", 1)
        if rhs and not (rhs.lstrip("-").isdigit() or rhs == "-"):
            return 0.0
        if rhs.startswith("-") and len(rhs) > 1 and not rhs[1:].isdigit():
            return 0.0
    tokens, cur = [], ""
    for ch in body:
        if ch.isdigit():
            cur += ch
        elif ch in "+-":
            if not cur:
                return 0.0
            tokens += [int(cur), ch]
            cur = ""
        else:
            return 0.0
    if not cur:
        return 0.0
    tokens.append(int(cur))
    nums = tokens[0::2]
    val = nums[0]
    for op, n in zip(tokens[1::2], nums[1:]):
        val = val + n if op == "+" else val - n
    if sorted(nums) != sorted(numbers):
        return 0.0
    return 1.0 if val == target else 0.1


def all_permutation_count(k_max):
    return sum(math.factorial(k) for k in range(2, k_max + 1))
