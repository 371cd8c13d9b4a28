import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynblock.rewards import (alt_reward, block_entropy, countdown_task_reward, entropy_descent_reward,
                              final_expression, indicator_reward, parse_expression, r_med_stats, r_scc,
                              theorem1_check, theorem1_json, total_reward)
from dynblock.seq import DomainError

# values on a 1e-3 grid so monotone transforms cannot merge neighbours through rounding
distinct = st.lists(st.integers(0, 10_000), min_size=2, max_size=9, unique=True).map(
    lambda xs: [x / 1000 for x in xs])


def test_block_entropy_examples():
    V = 32
    assert block_entropy([np.full(V, 1 / V)] * 3) == pytest.approx(math.log(32), abs=1e-12)
    assert block_entropy([np.eye(V)[0], np.eye(V)[5]]) == 0.0
    half = np.zeros(V)
    half[:2] = 0.5
    assert block_entropy([half, np.eye(V)[0]]) == pytest.approx(math.log(2) / 2, abs=1e-12)
    with pytest.raises(DomainError):
        block_entropy([np.full(V, 1.0)])
    with pytest.raises(DomainError):
        block_entropy([])


def test_r_scc_examples():
    assert r_scc([5, 4, 3, 2]).r_scc == 1.0
    assert r_scc([1, 2, 3]).r_scc == -1.0
    rep = r_scc([2.0, 3.0, 1.0])
    assert rep.rank_vector == (2, 3, 1)
    assert rep.delta_squares == (1, 1, 4)
    assert rep.r_scc == pytest.approx(0.5)
    with pytest.raises(DomainError):
        r_scc([1.0])


def test_r_scc_ties_are_stable():
    assert r_scc([1.0, 1.0, 1.0]).rank_vector == (1, 2, 3)


def test_entropy_descent_examples():
    assert entropy_descent_reward([4, 3, 2, 1]) == 1.0
    assert entropy_descent_reward([1, 2, 3]) == 0.0
    assert entropy_descent_reward([3.0, 1.0, 2.0, 0.5]) == pytest.approx(2 / 3)
    assert entropy_descent_reward([2.0]) == 0.0
    assert entropy_descent_reward([1.0, 1.0]) == 0.0


def test_indicator_reward_examples():
    assert indicator_reward(10, 10) == 1.0
    assert indicator_reward(0, 10) == 0.0
    assert indicator_reward(3, 10) == pytest.approx(0.5781, abs=1e-4)
    assert indicator_reward(15, 10) == 1.0
    with pytest.raises(DomainError):
        indicator_reward(-1, 10)


def test_total_reward_examples():
    assert total_reward(1, 1, 2).total == 4.0
    assert total_reward(0.3, 0.8, 0.7, 0, 0, 1).total == 0.7
    assert total_reward(0.5, 0.5781, 1.0).total == pytest.approx(2.0781)
    with pytest.raises(DomainError):
        total_reward(1, 1, 1, -1, 1, 1)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1), st.floats(0, 3), st.floats(0, 3), st.floats(0, 3),
       st.floats(-2, 2))
def test_total_reward_linear(e, i, t, a, b, g, delta):
    base = total_reward(e, i, t, a, b, g).total
    assert total_reward(e + delta, i, t, a, b, g).total == pytest.approx(base + a * delta, abs=1e-9)
    assert total_reward(e, i, t + delta, a, b, g).total == pytest.approx(base + g * delta, abs=1e-9)


def test_countdown_reward_examples():
    nums = [71, 66, 46]
    assert countdown_task_reward("Answer:71−66+46", nums, 51) == 1.0
    assert countdown_task_reward("Answer:71 - 46 + 66", nums, 51) == 0.1
    assert countdown_task_reward("Answer:71-71+51", nums, 51) == 0.0
    assert countdown_task_reward("garbage", nums, 51) == 0.0
    assert countdown_task_reward("71-66=5\\block5+46=51\\blockAnswer:71-66+46=51<eos><eos>", nums, 51) == 1.0


def test_final_expression_segments():
    assert final_expression("a\\blockb\\blockAnswer:1+2=3<eos>junk") == "1+2=3"
    assert final_expression("1+2=3\\block 4+5 <eos>") == "4+5"
    assert final_expression("7+8") == "7+8"


def test_parse_expression():
    assert parse_expression("3 + 4 - 2") == ([3, 4, 2], 5)
    assert parse_expression("3+4=7") == ([3, 4], 7)
    assert parse_expression("3++4") is None
    assert parse_expression("") is None


def test_alt_rewards():
    assert alt_reward("avg_entropy", entropies=[0, 0], vocab_size=22) == 1.0
    assert alt_reward("format_count", k=4, k_target=4) == 1.0
    assert alt_reward("block_size", sizes=[16, 16], max_block_cap=16) == 0.0
    with pytest.raises(DomainError):
        alt_reward("length")


def test_r_med_stats_examples():
    assert r_med_stats([1, 1, -1, 1]) == (0.5, 0.75)
    assert r_med_stats([0, 0]) == (0.0, 0.0)
    assert r_med_stats([0.5]) == (0.5, 1.0)
    with pytest.raises(DomainError):
        r_med_stats([])


def test_theorem1_small_cases():
    rep = theorem1_check(4)
    assert rep["passed"] and rep["permutations"] == 2 + 6 + 24
    assert all(v["maximizers"] == 1 for v in rep["per_k"].values())
    assert '"seconds"' not in theorem1_json(rep)
    with pytest.raises(DomainError):
        theorem1_check(1)


@given(distinct)
def test_reversed_permutation_extremes(values):
    inc = sorted(values)
    assert entropy_descent_reward(inc) == 0.0
    assert r_scc(inc).r_scc == pytest.approx(-1.0)
    assert entropy_descent_reward(inc[::-1]) == 1.0


@given(distinct)
def test_scale_invariance(values):
    transformed = [math.exp(v) * 3 + 1 for v in values]
    assert r_scc(values).r_scc == r_scc(transformed).r_scc
    assert entropy_descent_reward(values) == entropy_descent_reward(transformed)


@pytest.mark.parametrize("K", [2, 3, 4, 5, 6])
def test_r_scc_permutation_mean_is_zero(K):
    scores = [r_scc(p).r_scc for p in itertools.permutations(range(K))]
    assert abs(np.mean(scores)) < 1e-12
