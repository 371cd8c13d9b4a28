"""Run configuration: one JSON file with model, decode, grpo, rewards, task and analysis sections."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .decode import DecodeConfig
from .grpo import GrpoConfig
from .net import ModelConfig, PretrainConfig
from .seq import DomainError


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 48
    init_seed: int = 0
    pretrain: PretrainConfig = PretrainConfig(steps=5000, log_every=500)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff, self.max_len)


@dataclass(frozen=True)
class GrpoSection:
    group_size: int = 6
    clip_eps: float = 0.5
    kl_beta: float = 0.0
    num_iterations: int = 4
    p_mask: float = 0.15
    rollout_temperature: float = 1.0
    prompts_per_batch: int = 2
    batches: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    grad_clip: Optional[float] = 0.2
    ref_sync_steps: int = 64
    max_excluded_frac: float = 0.05


@dataclass(frozen=True)
class RewardSection:
    alpha: float = 1.0
    beta_ind: float = 1.0
    gamma: float = 1.0
    disable_ent: bool = False
    disable_ind: bool = False
    k_target: int = 3
    # "commit": each position's entropy at the step it was committed; "t_star": all block
    # positions re-read at the boundary step, where visible positions carry untrained outputs
    entropy_source: str = "commit"


@dataclass(frozen=True)
class TaskSection:
    kind: str = "countdown3"
    n_train: int = 4000
    n_test: int = 256
    split_seed: int = 0
    max_number: int = 20
    min_number: int = 1
    chain_steps: int = 3
    p_correct: float = 0.5
    copies: int = 1
    corpus_seed: int = 1


@dataclass(frozen=True)
class AnalysisSection:
    bins: int = 6
    bench_runs: int = 3
    bench_prompts: int = 32
    eval_limit: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = ModelSection()
    decode: DecodeConfig = DecodeConfig(mode="dynamic", c=8, T=8, max_window=48, max_block_cap=16)
    grpo: GrpoSection = GrpoSection()
    rewards: RewardSection = RewardSection()
    task: TaskSection = TaskSection()
    analysis: AnalysisSection = AnalysisSection()
    seed: int = 0

    def grpo_config(self) -> GrpoConfig:
        g, r = self.grpo, self.rewards
        rollout = replace(self.decode, mode="dynamic", temperature=g.rollout_temperature)
        return GrpoConfig(
            group_size=g.group_size, clip_eps=g.clip_eps, kl_beta=g.kl_beta,
            num_iterations=g.num_iterations, p_mask=g.p_mask, decode=rollout,
            alpha=r.alpha, beta_ind=r.beta_ind, gamma=r.gamma,
            disable_ent=r.disable_ent, disable_ind=r.disable_ind, k_target=r.k_target,
            entropy_source=r.entropy_source, prompts_per_batch=g.prompts_per_batch,
            batches=g.batches, lr=g.lr, beta1=g.beta1, beta2=g.beta2,
            weight_decay=g.weight_decay, grad_clip=g.grad_clip, ref_sync_steps=g.ref_sync_steps,
            max_excluded_frac=g.max_excluded_frac, seed=self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = _build(cls, d, "config")
        try:
            cfg.grpo_config()
        except DomainError as exc:
            raise ConfigError(f"config.grpo: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def _build(cls, d, where: str):
    """Instantiate a (nested) config dataclass, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    defaults = cls()
    kw = {}
    for name, value in d.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            merged = {**dataclasses.asdict(current), **value} if isinstance(value, dict) else value
            kw[name] = _build(type(current), merged, f"{where}.{name}")
        else:
            kw[name] = value
    try:
        return replace(defaults, **kw)
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
