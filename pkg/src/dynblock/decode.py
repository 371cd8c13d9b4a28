"""Semi-autoregressive block decoding, fixed-size and indicator-terminated."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .net import ModelParams, forward_batch
from .seq import (BlockPartition, BlockSpan, DomainError, Sequence, SpanCursor,
                  Vocabulary, find_boundary, fixed_partition)


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "dynamic"
    c: int = 8
    T: int = 8
    max_window: int = 64
    temperature: float = 0.0
    remasking: str = "low_confidence"
    max_block_cap: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise DomainError(f"unknown decode mode {self.mode!r}")
        if self.remasking not in ("low_confidence", "random"):
            raise DomainError(f"unknown remasking {self.remasking!r}")
        if self.T < 1:
            raise DomainError("T must be >= 1")
        if self.mode == "fixed" and self.c < 1:
            raise DomainError("c must be >= 1")
        if self.mode == "dynamic" and self.max_block_cap < 1:
            raise DomainError("max_block_cap must be >= 1")
        if self.temperature < 0:
            raise DomainError("temperature must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BlockResult:
    span: BlockSpan
    tokens: tuple
    per_position_entropy: tuple
    t_star: int
    # entropy of each position at the step that finally committed it
    commit_entropy: tuple = ()


@dataclass
class StepRecord:
    k: int
    step: int
    positions: list
    tokens: list
    confidences: list
    entropies: list
    reverted: list = field(default_factory=list)


@dataclass
class DecodeTrace:
    blocks: list
    steps: list
    final: Sequence
    block_seconds: list
    eos: bool
    unused: int
    config: DecodeConfig

    def partition(self) -> BlockPartition:
        return BlockPartition(spans=tuple(b.span for b in self.blocks),
                              window_len=sum(b.span.size for b in self.blocks))

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def completion(self) -> tuple:
        """Generated prefix of the window."""
        n = sum(b.span.size for b in self.blocks)
        return self.final.window[:n]

    def block_entropies(self, source: str = "t_star") -> list[float]:
        if source == "t_star":
            return [float(np.mean(b.per_position_entropy)) for b in self.blocks]
        if source == "commit":
            return [float(np.mean(b.commit_entropy)) for b in self.blocks]
        raise DomainError(f"unknown entropy source {source!r}")

    def position_entropies(self, source: str = "t_star") -> list[float]:
        out = []
        for b in self.blocks:
            out.extend(b.per_position_entropy if source == "t_star" else b.commit_entropy)
        return out


def select_commit(confidences, n_commit: int, mode: str = "low_confidence",
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Indices (0-based, into ``confidences``) of the positions to commit."""
    conf = np.asarray(confidences, dtype=np.float64)
    if n_commit < 1:
        raise DomainError("n_commit must be >= 1")
    if n_commit > conf.size:
        raise DomainError("n_commit exceeds the number of masked positions")
    if mode == "low_confidence":
        # stable sort on -conf keeps the lowest index first among ties
        return np.argsort(-conf, kind="stable")[:n_commit]
    if mode == "random":
        if rng is None:
            raise DomainError("random remasking needs an rng")
        return np.sort(rng.choice(conf.size, size=n_commit, replace=False))
    raise DomainError(f"unknown remasking mode {mode!r}")


def _entropy(lp: np.ndarray) -> np.ndarray:
    lp = lp.astype(np.float64)
    return np.clip(-(np.exp(lp) * lp).sum(-1), 0.0, None)


class _Decoder:
    """State for one generate call: the token buffer and the rng it owns."""

    def __init__(self, params: ModelParams, vocab: Vocabulary, prompt, cfg: DecodeConfig,
                 rng: np.random.Generator):
        P = len(prompt)
        if P + 1 > cfg.max_window:
            raise DomainError("prompt does not leave room for a generation window")
        if cfg.max_window > params.config.max_len:
            raise DomainError("max_window exceeds the model's max_len")
        self.params, self.vocab, self.cfg, self.rng = params, vocab, cfg, rng
        self.P = P
        self.W = cfg.max_window - P
        self.x = np.full(cfg.max_window, vocab.mask_id, dtype=np.int64)
        self.x[:P] = np.asarray(prompt, dtype=np.int64)
        self.banned = [vocab.mask_id, vocab.pad_id]
        self.steps: list[StepRecord] = []

    @property
    def window(self) -> np.ndarray:
        return self.x[self.P:]

    def _predict(self, positions: np.ndarray):
        """Forward pass; returns (all log-probs, proposed tokens, confidences) at ``positions``."""
        lp = forward_batch(self.params, self.x[None])[0]
        sub = lp[positions].astype(np.float64)
        sub[:, self.banned] = -np.inf
        if self.cfg.temperature == 0:
            x0 = sub.argmax(-1)
        else:
            g = self.rng.gumbel(size=sub.shape)
            x0 = (sub / self.cfg.temperature + g).argmax(-1)
        conf = np.exp(lp[positions, x0].astype(np.float64))
        return lp, x0, conf

    def run_block(self, k: int, start_local: int, prov_size: int, dynamic: bool) -> BlockResult:
        cfg, vocab = self.cfg, self.vocab
        lo = self.P + start_local - 1
        block = np.arange(lo, lo + prov_size)
        commit_ent = {}
        lp = None
        t_star = 0
        size = prov_size
        for step in range(1, cfg.T + 1):
            masked = block[self.x[block] == vocab.mask_id]
            if masked.size == 0:
                break
            lp, x0, conf = self._predict(masked)
            ent = _entropy(lp[masked])
            n_commit = math.ceil(masked.size / (cfg.T - step + 1))
            pick = select_commit(conf, n_commit, cfg.remasking, self.rng)
            self.x[masked[pick]] = x0[pick]
            for i in pick:
                commit_ent[int(masked[i])] = float(ent[i])
            rec = StepRecord(k=k, step=step,
                             positions=[int(p - self.P + 1) for p in masked[pick]],
                             tokens=[int(t) for t in x0[pick]],
                             confidences=[float(c) for c in conf[pick]],
                             entropies=[float(e) for e in ent[pick]])
            self.steps.append(rec)
            t_star = step
            if not dynamic:
                continue
            d = find_boundary(self.window, start_local, start_local + prov_size - 1, vocab.indicator_id)
            if d is None:
                continue
            # boundary fixed at this step: finish the positions before the
            # indicator from this step's prediction, then drop the overshoot
            fill = [j for j in range(masked.size) if masked[j] < lo + d - 1 and self.x[masked[j]] == vocab.mask_id]
            for j in fill:
                self.x[masked[j]] = x0[j]
                commit_ent[int(masked[j])] = float(ent[j])
                rec.positions.append(int(masked[j] - self.P + 1))
                rec.tokens.append(int(x0[j]))
                rec.confidences.append(float(conf[j]))
                rec.entropies.append(float(ent[j]))
            d = find_boundary(self.window, start_local, start_local + d - 1, vocab.indicator_id)
            over = block[d:]
            rec.reverted = [int(p - self.P + 1) for p in over if self.x[p] != vocab.mask_id]
            self.x[over] = vocab.mask_id
            size = d
            break
        if lp is None:
            raise DomainError("block had no masked positions to decode")
        span_pos = block[:size]
        has_ind = vocab.indicator_id is not None and bool((self.x[span_pos] == vocab.indicator_id).any())
        span = BlockSpan(k=k, start=start_local, size=size, contains_indicator=has_ind)
        return BlockResult(
            span=span,
            tokens=tuple(int(t) for t in self.x[span_pos]),
            per_position_entropy=tuple(float(e) for e in _entropy(lp[span_pos])),
            t_star=t_star,
            commit_entropy=tuple(commit_ent[int(p)] for p in span_pos),
        )


def decode_block_fixed(params: ModelParams, vocab: Vocabulary, context: Sequence, span: BlockSpan,
                       cfg: DecodeConfig, rng: np.random.Generator) -> BlockResult:
    dec = _Decoder(params, vocab, context.prompt, cfg, rng)
    dec.x[:] = np.asarray(context.tokens)
    if not (dec.window[span.slice()] == vocab.mask_id).all():
        raise DomainError("span positions must be masked")
    return dec.run_block(span.k, span.start, span.size, dynamic=False)


def decode_block_dynamic(params: ModelParams, vocab: Vocabulary, context: Sequence, block_start: int,
                         cfg: DecodeConfig, rng: np.random.Generator, k: int = 1) -> BlockResult:
    dec = _Decoder(params, vocab, context.prompt, cfg, rng)
    dec.x[:] = np.asarray(context.tokens)
    prov = min(dec.W - block_start + 1, cfg.max_block_cap)
    return dec.run_block(k, block_start, prov, dynamic=True)


def generate(params: ModelParams, vocab: Vocabulary, prompt, cfg: DecodeConfig,
             rng: Optional[np.random.Generator] = None) -> tuple[Sequence, DecodeTrace]:
    """Decode blocks left to right until EOS is committed or the window runs out."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dec = _Decoder(params, vocab, prompt, cfg, rng)
    cursor = SpanCursor(dec.W)
    blocks, seconds = [], []
    eos = False
    while cursor.consumed < dec.W:
        start = cursor.consumed + 1
        remaining = dec.W - cursor.consumed
        t0 = time.perf_counter()
        if cfg.mode == "fixed":
            res = dec.run_block(len(blocks) + 1, start, min(cfg.c, remaining), dynamic=False)
        else:
            res = dec.run_block(len(blocks) + 1, start, min(cfg.max_block_cap, remaining), dynamic=True)
        seconds.append(time.perf_counter() - t0)
        cursor.append(res.span.size, res.span.contains_indicator)
        blocks.append(res)
        if vocab.eos_id in res.tokens:
            eos = True
            break
    final = Sequence(tuple(int(t) for t in dec.x), dec.P)
    trace = DecodeTrace(blocks=blocks, steps=dec.steps, final=final, block_seconds=seconds,
                        eos=eos, unused=dec.W - cursor.consumed, config=cfg)
    return final, trace


def expected_fixed_partition(trace: DecodeTrace) -> BlockPartition:
    """Fixed partition of the generated prefix, for cross-checking fixed mode."""
    n = sum(b.span.size for b in trace.blocks)
    return fixed_partition(n, trace.config.c) if n else BlockPartition((), 0)
