"""JSONL trace files ("trace-v1"): a header, per-block records and per-sample records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

from .seq import DomainError

SCHEMA = "trace-v1"


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    instance_fingerprint: str
    mode: str
    K: int
    r_scc: float
    r_ent: float
    r_ind: float
    r_task: float
    correct: bool

    def to_dict(self) -> dict:
        return {"record": "sample", **asdict(self)}


@dataclass(frozen=True)
class BlockRecord:
    sample_id: int
    k: int
    start: int
    size: int
    t_star: int
    entropies: tuple
    tokens: tuple
    contains_indicator: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["entropies"] = list(self.entropies)
        d["tokens"] = list(self.tokens)
        return {"record": "block", **d}


@dataclass
class Trace:
    header: dict
    blocks: list
    samples: list

    def by_fingerprint(self) -> dict:
        return {s.instance_fingerprint: s for s in self.samples}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_trace(path, header: dict, blocks: Iterable[BlockRecord], samples: Iterable[SampleRecord]) -> None:
    """Block records of a sample come right before its sample record."""
    by_sample: dict[int, list] = {}
    for b in blocks:
        by_sample.setdefault(b.sample_id, []).append(b)
    with open(path, "w") as fh:
        fh.write(_dumps({"record": "header", "schema": SCHEMA, **header}) + "\n")
        for s in samples:
            for b in by_sample.get(s.sample_id, []):
                fh.write(_dumps(b.to_dict()) + "\n")
            fh.write(_dumps(s.to_dict()) + "\n")


def read_trace(path) -> Trace:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines:
        raise DomainError(f"{path}: empty trace file")
    header = json.loads(lines[0])
    if header.get("record") != "header" or header.get("schema") != SCHEMA:
        raise DomainError(f"{path}: not a {SCHEMA} trace")
    blocks, samples = [], []
    for n, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)
        kind = rec.pop("record", None)
        if kind == "block":
            rec["entropies"] = tuple(rec["entropies"])
            rec["tokens"] = tuple(rec["tokens"])
            blocks.append(BlockRecord(**rec))
        elif kind == "sample":
            samples.append(SampleRecord(**rec))
        else:
            raise DomainError(f"{path}:{n}: unknown record type {kind!r}")
    return Trace(header, blocks, samples)
