"""Synthetic reasoning tasks: three-number countdown and arithmetic chains."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .rewards import countdown_task_reward, final_expression
from .seq import DomainError, Sequence, Vocabulary

COUNTDOWN = "countdown3"
ARITH_CHAIN = "arith_chain"


@dataclass(frozen=True, eq=False)
class TaskInstance:
    task_kind: str
    prompt: tuple
    answer: int
    metadata: dict = field(default_factory=dict)
    reference: tuple = ()

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha1(f"{self.task_kind}:{','.join(map(str, self.prompt))}".encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"task_kind": self.task_kind, "prompt": list(self.prompt), "answer": self.answer,
                "metadata": self.metadata, "reference": list(self.reference),
                "fingerprint": self.fingerprint}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        return cls(d["task_kind"], tuple(d["prompt"]), d["answer"], d["metadata"], tuple(d["reference"]))


def _signed_chain(operands, signs):
    """Left-to-right partial values of operands[0] s1 operands[1] s2 ..."""
    values = [operands[0]]
    for s, n in zip(signs, operands[1:]):
        values.append(values[-1] + n if s == "+" else values[-1] - n)
    return values


def countdown_solution_text(order, signs) -> str:
    """Step-by-step completion text for ``order[0] signs[0] order[1] signs[1] order[2]``."""
    values = _signed_chain(order, signs)
    steps = []
    for i, (s, n) in enumerate(zip(signs, order[1:])):
        steps.append(f"{values[i]}{s}{n}={values[i + 1]}\\block")
    expr = str(order[0]) + "".join(f"{s}{n}" for s, n in zip(signs, order[1:]))
    return "".join(steps) + f"Answer:{expr}={values[-1]}<eos>"


def countdown_prompt_text(numbers, target: int) -> str:
    return "Numbers: " + " ".join(str(n) for n in numbers) + f" Target: {target}"


def make_countdown(vocab: Vocabulary, order, signs, shown=None) -> TaskInstance:
    """Instance whose solution is ``order`` combined left to right with ``signs``.

    ``signs`` is either two operators (between the three numbers) or three with
    a leading '+' for the first number.
    """
    signs = list(signs)
    if len(signs) == 3:
        if signs[0] != "+":
            raise DomainError("the leading number cannot carry a minus sign")
        signs = signs[1:]
    order = [int(n) for n in order]
    values = _signed_chain(order, signs)
    target = values[-1]
    shown = list(order) if shown is None else [int(n) for n in shown]
    prompt = vocab.encode(countdown_prompt_text(shown, target))
    reference = vocab.encode(countdown_solution_text(order, signs))
    meta = {"numbers": shown, "target": target, "order": order, "signs": signs, "steps": 2}
    return TaskInstance(COUNTDOWN, tuple(prompt), target, meta, tuple(reference))


def gen_countdown(rng: np.random.Generator, n: int, vocab: Vocabulary, max_number: int = 99,
                  min_number: int = 1) -> list[TaskInstance]:
    """Three distinct numbers, a random order and +/- pattern; intermediates stay non-negative."""
    if n < 1:
        raise DomainError("n must be >= 1")
    out = []
    while len(out) < n:
        nums = rng.choice(np.arange(min_number, max_number + 1), size=3, replace=False)
        order = [int(v) for v in nums]
        signs = [("+", "-")[int(b)] for b in rng.integers(0, 2, size=2)]
        if min(_signed_chain(order, signs)) < 0:
            continue
        shown = [int(v) for v in rng.permutation(order)]
        out.append(make_countdown(vocab, order, signs, shown))
    return out


def gen_arith_chain(rng: np.random.Generator, n: int, steps: int, vocab: Vocabulary,
                    max_operand: int = 9, max_value: int = 99) -> list[TaskInstance]:
    if steps < 2:
        raise DomainError("arith chains need at least two steps")
    out = []
    while len(out) < n:
        operands = [int(v) for v in rng.integers(1, max_operand + 1, size=steps + 1)]
        signs = [("+", "-")[int(b)] for b in rng.integers(0, 2, size=steps)]
        values = _signed_chain(operands, signs)
        if min(values) < 0 or max(values) > max_value:
            continue
        expr = str(operands[0]) + "".join(f"{s}{v}" for s, v in zip(signs, operands[1:]))
        body = "".join(f"{values[i]}{s}{v}={values[i + 1]}\\block"
                       for i, (s, v) in enumerate(zip(signs, operands[1:])))
        reference = vocab.encode(body + f"Answer:{values[-1]}<eos>")
        prompt = vocab.encode(f"Chain: {expr}")
        meta = {"operands": operands, "signs": signs, "steps": steps}
        out.append(TaskInstance(ARITH_CHAIN, tuple(prompt), values[-1], meta, tuple(reference)))
    return out


def completion_text(vocab: Vocabulary, completion) -> str:
    return vocab.render(completion)


def verify(instance: TaskInstance, generated, vocab: Vocabulary) -> tuple[bool, float]:
    """(correct, task reward). ``generated`` is a Sequence or the completion tokens."""
    if isinstance(generated, Sequence):
        generated = [t for t in generated.window if t != vocab.mask_id]
    text = vocab.render(generated)
    if instance.task_kind == COUNTDOWN:
        r = countdown_task_reward(text, instance.metadata["numbers"], instance.metadata["target"])
        return r == 1.0, r
    if instance.task_kind == ARITH_CHAIN:
        ans = final_expression(text)
        try:
            ok = int(ans) == instance.answer
        except ValueError:
            ok = False
        return ok, 1.0 if ok else 0.0
    raise DomainError(f"unknown task kind {instance.task_kind!r}")


# --- datasets ----------------------------------------------------------------------

@dataclass
class Dataset:
    split: str
    instances: list
    seed: int

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for inst in self.instances:
                fh.write(json.dumps(inst.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path, split: str = "", seed: int = -1) -> "Dataset":
        lines = Path(path).read_text().splitlines()
        return cls(split, [TaskInstance.from_dict(json.loads(l)) for l in lines if l.strip()], seed)


def make_splits(vocab: Vocabulary, seed: int, n_train: int, n_test: int, kind: str = COUNTDOWN,
                **gen_kw) -> tuple[Dataset, Dataset]:
    """Test split first, then a train split with every test fingerprint removed."""
    rng = np.random.default_rng(seed)
    gen = gen_countdown if kind == COUNTDOWN else gen_arith_chain
    test, seen = [], set()
    attempts = 0
    while len(test) < n_test:
        attempts += 1
        if attempts > 50 * (n_test + 10):
            raise DomainError("instance space too small for the requested test split")
        for inst in gen(rng, 1, vocab=vocab, **gen_kw):
            if inst.fingerprint not in seen:
                seen.add(inst.fingerprint)
                test.append(inst)
    train = []
    attempts = 0
    # train instances may repeat; they only have to avoid the test fingerprints
    while len(train) < n_train:
        attempts += 1
        if attempts > 50 * (n_train + 10):
            raise DomainError("instance space too small for the requested disjoint splits")
        for inst in gen(rng, 1, vocab=vocab, **gen_kw):
            if inst.fingerprint not in seen:
                train.append(inst)
    return Dataset("train", train, seed), Dataset("test", test, seed)


# --- pretraining corpus ----------------------------------------------------------

def to_sequence(prompt, completion, total_len: int, vocab: Vocabulary) -> Sequence:
    """Prompt + completion, right-filled with EOS to ``total_len``."""
    toks = list(prompt) + list(completion)
    if len(toks) > total_len:
        raise DomainError(f"example of length {len(toks)} exceeds {total_len}")
    toks += [vocab.eos_id] * (total_len - len(toks))
    return Sequence(tuple(toks), len(prompt))


def countdown_attempt(instance: TaskInstance, rng: np.random.Generator, vocab: Vocabulary):
    """A well-formed attempt using the instance's numbers with random order and signs.

    Arithmetic inside the attempt is right; whether it reaches the target is luck.
    """
    nums = list(instance.metadata["numbers"])
    while True:
        order = [int(v) for v in rng.permutation(nums)]
        signs = [("+", "-")[int(b)] for b in rng.integers(0, 2, size=2)]
        if min(_signed_chain(order, signs)) >= 0:
            return vocab.encode(countdown_solution_text(order, signs))


def build_corpus(instances: list, vocab: Vocabulary, total_len: int, rng: np.random.Generator,
                 p_correct: float = 1.0, copies: int = 1) -> list[Sequence]:
    """Pretraining sequences. Countdown items use the reference solution with probability
    ``p_correct`` and a random well-formed attempt otherwise."""
    corpus = []
    for _ in range(copies):
        for inst in instances:
            completion = inst.reference
            if inst.task_kind == COUNTDOWN and rng.random() >= p_correct:
                completion = countdown_attempt(inst, rng, vocab)
            corpus.append(to_sequence(inst.prompt, completion, total_len, vocab))
    return corpus


def unigram_entropy(sequences, vocab_size: int) -> float:
    counts = np.zeros(vocab_size)
    for s in sequences:
        np.add.at(counts, np.asarray(s), 1)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())
