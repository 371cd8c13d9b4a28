"""Token, sequence and block-partition primitives.

Block spans use 1-based local indices into the generation window, which is
also what ends up in trace files. Everything else in the package indexes
numpy arrays 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence as Seq


class DomainError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


DEFAULT_GLYPHS = (
    [str(d) for d in range(10)]
    + ["+", "-", "=", " ", "Numbers:", "Target:", "Answer:", "Chain:"]
    + ["\\block", "<eos>", "<pad>", "[MASK]"]
)


@dataclass(frozen=True)
class Vocabulary:
    glyphs: tuple
    mask_id: int
    indicator_id: Optional[int]
    eos_id: int
    pad_id: int

    def __post_init__(self):
        specials = [self.mask_id, self.eos_id, self.pad_id]
        if self.indicator_id is not None:
            specials.append(self.indicator_id)
        if len(set(specials)) != len(specials):
            raise DomainError("special token ids must be pairwise distinct")
        if any(not 0 <= s < self.size for s in specials):
            raise DomainError("special token id out of range")
        # longest glyph first so "Numbers:" wins over single characters
        order = sorted(range(self.size), key=lambda i: -len(self.glyphs[i]))
        object.__setattr__(self, "_match_order", tuple(order))

    @property
    def size(self) -> int:
        return len(self.glyphs)

    @classmethod
    def default(cls, with_indicator: bool = True) -> "Vocabulary":
        glyphs = tuple(DEFAULT_GLYPHS)
        return cls(
            glyphs=glyphs,
            mask_id=glyphs.index("[MASK]"),
            indicator_id=glyphs.index("\\block") if with_indicator else None,
            eos_id=glyphs.index("<eos>"),
            pad_id=glyphs.index("<pad>"),
        )

    def id_of(self, glyph: str) -> int:
        return self.glyphs.index(glyph)

    def render(self, tokens: Iterable[int]) -> str:
        return "".join(self.glyphs[int(t)] for t in tokens)

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization of rendered text."""
        out = []
        i = 0
        while i < len(text):
            for tid in self._match_order:
                g = self.glyphs[tid]
                if g and text.startswith(g, i):
                    out.append(tid)
                    i += len(g)
                    break
            else:
                raise DomainError(f"untokenizable text at offset {i}: {text[i:i + 10]!r}")
        return out

    def to_dict(self) -> dict:
        return {
            "glyphs": list(self.glyphs),
            "mask_id": self.mask_id,
            "indicator_id": self.indicator_id,
            "eos_id": self.eos_id,
            "pad_id": self.pad_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            glyphs=tuple(d["glyphs"]),
            mask_id=d["mask_id"],
            indicator_id=d["indicator_id"],
            eos_id=d["eos_id"],
            pad_id=d["pad_id"],
        )


@dataclass(frozen=True)
class Sequence:
    tokens: tuple
    prompt_len: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if not 0 <= self.prompt_len <= len(self.tokens):
            raise DomainError("prompt_len must lie in [0, L]")

    @property
    def total_len(self) -> int:
        return len(self.tokens)

    @property
    def window_len(self) -> int:
        return len(self.tokens) - self.prompt_len

    @property
    def prompt(self) -> tuple:
        return self.tokens[: self.prompt_len]

    @property
    def window(self) -> tuple:
        return self.tokens[self.prompt_len:]

    def check_vocab(self, vocab: Vocabulary) -> None:
        if any(not 0 <= t < vocab.size for t in self.tokens):
            raise DomainError("token id outside vocabulary")


@dataclass(frozen=True)
class BlockSpan:
    k: int
    start: int
    size: int
    contains_indicator: bool = False

    @property
    def end(self) -> int:
        """Last local index covered (inclusive, 1-based)."""
        return self.start + self.size - 1

    def slice(self) -> slice:
        """0-based slice into the generation window."""
        return slice(self.start - 1, self.start - 1 + self.size)

    def to_dict(self) -> dict:
        return {"k": self.k, "start": self.start, "size": self.size,
                "contains_indicator": self.contains_indicator}


@dataclass(frozen=True)
class BlockPartition:
    spans: tuple
    window_len: int

    @property
    def K(self) -> int:
        return len(self.spans)

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.spans]

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.spans]


def fixed_partition(window_len: int, c: int) -> BlockPartition:
    if window_len < 1 or c < 1:
        raise DomainError(f"fixed_partition needs window_len >= 1 and c >= 1, got {window_len}, {c}")
    spans = []
    for k in range(1, math.ceil(window_len / c) + 1):
        start = (k - 1) * c + 1
        spans.append(BlockSpan(k=k, start=start, size=min(k * c, window_len) - start + 1))
    return BlockPartition(spans=tuple(spans), window_len=window_len)


def find_boundary(window: Seq[int], block_start_local: int, window_len: int,
                  indicator_id: Optional[int], mask_id: Optional[int] = None) -> Optional[int]:
    """Size of the dynamic block starting at ``block_start_local``.

    Returns the smallest d >= 1 with a committed indicator at local index
    ``block_start_local + d - 1``, or None when no indicator has been
    committed anywhere up to ``window_len``. Masked positions never match
    because the indicator id differs from the mask id.
    """
    if indicator_id is None:
        return None
    if not 1 <= block_start_local <= window_len:
        raise DomainError("block_start_local outside the window")
    for j in range(block_start_local - 1, window_len):
        if window[j] == indicator_id:
            return j - block_start_local + 2
    return None


def validate_partition(p: BlockPartition) -> bool:
    if p.window_len < 1 or not p.spans:
        return False
    expected_start = 1
    for idx, span in enumerate(p.spans, start=1):
        if span.k != idx or span.size < 1 or span.start != expected_start:
            return False
        expected_start = span.start + span.size
    return expected_start == p.window_len + 1


def partition_from_sizes(sizes: Seq[int], window_tokens: Seq[int] = (),
                         indicator_id: Optional[int] = None) -> BlockPartition:
    spans = []
    start = 1
    for k, size in enumerate(sizes, start=1):
        has_ind = (indicator_id is not None and len(window_tokens) >= start + size - 1
                   and indicator_id in window_tokens[start - 1:start - 1 + size])
        spans.append(BlockSpan(k=k, start=start, size=int(size), contains_indicator=bool(has_ind)))
        start += size
    return BlockPartition(spans=tuple(spans), window_len=start - 1)


@dataclass
class SpanCursor:
    """Running S_{k-1} while blocks are appended left to right."""
    window_len: int
    spans: list = field(default_factory=list)

    @property
    def consumed(self) -> int:
        return sum(s.size for s in self.spans)

    def append(self, size: int, contains_indicator: bool) -> BlockSpan:
        span = BlockSpan(k=len(self.spans) + 1, start=self.consumed + 1, size=size,
                         contains_indicator=contains_indicator)
        if span.end > self.window_len:
            raise DomainError("span runs past the window")
        self.spans.append(span)
        return span

    def partition(self) -> BlockPartition:
        return BlockPartition(spans=tuple(self.spans), window_len=self.consumed)
