import math

import numpy as np
import pytest

from dynblock.seq import DomainError
from dynblock.tasks import (ARITH_CHAIN, COUNTDOWN, Dataset, build_corpus, countdown_attempt,
                            gen_arith_chain, gen_countdown, make_countdown, make_splits, to_sequence,
                            unigram_entropy, verify)


def test_fig2_example(vocab):
    inst = make_countdown(vocab, [88, 84, 69], ["+", "-", "+"])
    assert inst.answer == 73 and inst.metadata["target"] == 73
    assert vocab.render(inst.prompt) == "Numbers: 88 84 69 Target: 73"
    assert verify(inst, inst.reference, vocab) == (True, 1.0)


def test_gen_countdown_instances_are_solvable(vocab):
    rng = np.random.default_rng(0)
    for inst in gen_countdown(rng, 300, vocab):
        m = inst.metadata
        assert len(set(m["numbers"])) == 3 and all(1 <= n <= 99 for n in m["numbers"])
        assert sorted(m["numbers"]) == sorted(m["order"])
        v = m["order"][0]
        for s, n in zip(m["signs"], m["order"][1:]):
            v = v + n if s == "+" else v - n
        assert v == m["target"] == inst.answer
        assert verify(inst, inst.reference, vocab)[0]


def test_verify_partial_and_gibberish(vocab):
    inst = make_countdown(vocab, [71, 66, 46], ["-", "+"])
    wrong = vocab.encode("Answer:71-46+66=91<eos>")
    assert verify(inst, wrong, vocab) == (False, 0.1)
    assert verify(inst, vocab.encode("++==3"), vocab) == (False, 0.0)


def test_gen_countdown_rejects_zero(vocab):
    with pytest.raises(DomainError):
        gen_countdown(np.random.default_rng(0), 0, vocab)


def test_arith_chain(vocab):
    rng = np.random.default_rng(1)
    for inst in gen_arith_chain(rng, 50, 3, vocab):
        assert inst.reference.count(vocab.indicator_id) == 3
        ops = inst.metadata["operands"]
        v = ops[0]
        for s, n in zip(inst.metadata["signs"], ops[1:]):
            v = v + n if s == "+" else v - n
        assert v == inst.answer
        assert verify(inst, inst.reference, vocab) == (True, 1.0)
    with pytest.raises(DomainError):
        gen_arith_chain(rng, 1, 1, vocab)


def test_arith_corpus_has_structure(vocab):
    insts = gen_arith_chain(np.random.default_rng(2), 200, 3, vocab)
    seqs = [list(i.prompt) + list(i.reference) for i in insts]
    assert unigram_entropy(seqs, vocab.size) < math.log(vocab.size)


def test_splits_disjoint_and_deterministic(tmp_path, vocab):
    tr, te = make_splits(vocab, 5, 300, 64, max_number=20)
    assert len(te.instances) == 64
    assert not {i.fingerprint for i in tr.instances} & {i.fingerprint for i in te.instances}
    tr2, te2 = make_splits(vocab, 5, 300, 64, max_number=20)
    tr.write(tmp_path / "a.jsonl")
    tr2.write(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = Dataset.read(tmp_path / "a.jsonl")
    assert [i.fingerprint for i in back.instances] == [i.fingerprint for i in tr.instances]


def test_split_space_exhaustion(vocab):
    with pytest.raises(DomainError):
        make_splits(vocab, 0, 10, 500, max_number=4)


def test_corpus_and_attempts(vocab):
    rng = np.random.default_rng(3)
    insts = gen_countdown(rng, 50, vocab, max_number=20)
    for inst in insts:
        r = verify(inst, countdown_attempt(inst, rng, vocab), vocab)[1]
        assert r in (0.1, 1.0)
    corpus = build_corpus(insts, vocab, 48, rng, p_correct=0.5, copies=2)
    assert len(corpus) == 100 and all(s.total_len == 48 for s in corpus)
    with pytest.raises(DomainError):
        to_sequence([1] * 40, [2] * 10, 48, vocab)
