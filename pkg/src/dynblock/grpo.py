"""Group-relative policy optimisation over block-decoded rollouts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import torch

from .decode import DecodeConfig, DecodeTrace, generate
from .net import (ModelParams, OptimizerState, build_logprob_input, completion_logprobs,
                  forward_batch, optimizer_step)
from .rewards import (RewardBreakdown, entropy_descent_reward, indicator_reward,
                      total_reward)
from .seq import BlockPartition, DomainError, SpanCursor, Vocabulary
from .tasks import Dataset, TaskInstance, verify

log = logging.getLogger(__name__)

EPS_STD = 1e-8

LOG_COLUMNS = ["step", "mean_total", "mean_r_ent", "mean_r_ind", "mean_r_task", "mean_K",
               "mean_block_size", "objective", "excluded_token_frac"]


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 6
    clip_eps: float = 0.5
    kl_beta: float = 0.0
    num_iterations: int = 4
    p_mask: float = 0.15
    decode: DecodeConfig = DecodeConfig(mode="dynamic", temperature=1.0)
    alpha: float = 1.0
    beta_ind: float = 1.0
    gamma: float = 1.0
    disable_ent: bool = False
    disable_ind: bool = False
    k_target: int = 10
    entropy_source: str = "commit"
    prompts_per_batch: int = 2
    batches: int = 100
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    grad_clip: Optional[float] = 0.2
    ref_sync_steps: int = 64
    max_excluded_frac: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise DomainError("group_size must be >= 2")
        if self.clip_eps <= 0:
            raise DomainError("clip_eps must be positive")
        if self.kl_beta < 0:
            raise DomainError("kl_beta must be non-negative")
        if self.entropy_source not in ("t_star", "commit"):
            raise DomainError(f"unknown entropy source {self.entropy_source!r}")

    @property
    def weights(self) -> tuple[float, float, float]:
        return (0.0 if self.disable_ent else self.alpha,
                0.0 if self.disable_ind else self.beta_ind,
                self.gamma)


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    params: ModelParams
    step: int = 0

    @classmethod
    def of(cls, params: ModelParams, step: int = 0) -> "PolicySnapshot":
        return cls(params.with_flat(params.flat.copy()), step)


@dataclass(eq=False)
class RolloutGroup:
    prompt: tuple
    completions: list
    traces: list
    targets: np.ndarray          # (G, W) completion padded with EOS to the window
    mask_seeds: list
    old_logprobs: np.ndarray     # (G, W)
    instance: Optional[TaskInstance] = None
    rewards: list = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    partitions: list = field(default_factory=list)
    entropy_seqs: list = field(default_factory=list)


def pad_completion(completion, window: int, eos_id: int) -> np.ndarray:
    out = np.full(window, eos_id, dtype=np.int64)
    out[:len(completion)] = completion
    return out


def sample_group(snapshot: PolicySnapshot, prompt, cfg: GrpoConfig, rng: np.random.Generator,
                 vocab: Vocabulary, instance: Optional[TaskInstance] = None) -> RolloutGroup:
    """G independent generations from the frozen policy plus their old-policy log-probs."""
    dcfg = cfg.decode
    window = dcfg.max_window - len(prompt)
    for attempt in range(2):
        seeds = rng.integers(0, 2**63 - 1, size=2 * cfg.group_size)
        try:
            traces = []
            for g in range(cfg.group_size):
                _, tr = generate(snapshot.params, vocab, prompt, dcfg, np.random.default_rng(int(seeds[g])))
                traces.append(tr)
            break
        except (DomainError, FloatingPointError) as exc:
            if attempt == 1:
                raise
            log.warning("discarding rollout group after failure: %s", exc)
    completions = [tuple(tr.completion) for tr in traces]
    targets = np.stack([pad_completion(c, window, vocab.eos_id) for c in completions])
    mask_seeds = [int(s) for s in seeds[cfg.group_size:]]
    inputs = np.stack([build_logprob_input(prompt, targets[g], cfg.p_mask,
                                           np.random.default_rng(mask_seeds[g]), vocab.mask_id)
                       for g in range(cfg.group_size)])
    lp = forward_batch(snapshot.params, inputs)[:, len(prompt):]
    old = np.take_along_axis(lp, targets[..., None], -1)[..., 0].astype(np.float64)
    return RolloutGroup(prompt=tuple(prompt), completions=completions, traces=traces, targets=targets,
                        mask_seeds=mask_seeds, old_logprobs=old, instance=instance)


def reconstruct_blocks(completion, indicator_id: Optional[int], max_block_cap: int,
                       position_entropies=None) -> tuple[BlockPartition, list]:
    """Cut the completion after every indicator, or after ``max_block_cap`` tokens without one."""
    if len(completion) == 0:
        raise DomainError("cannot reconstruct blocks of an empty completion")
    toks = list(completion)
    cursor = SpanCursor(len(toks))
    ent_seq = []
    while cursor.consumed < len(toks):
        S = cursor.consumed
        limit = min(max_block_cap, len(toks) - S)
        d = next((j + 1 for j in range(limit) if toks[S + j] == indicator_id), None)
        if d is None:
            d = limit
        span = cursor.append(d, indicator_id is not None and indicator_id in toks[S:S + d])
        if position_entropies is not None:
            ent_seq.append(float(np.mean(position_entropies[S:S + d])))
    return cursor.partition(), ent_seq


def advantages(rewards, eps_std: float = EPS_STD) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise DomainError("advantages need a group of at least two")
    std = r.std()
    if std <= eps_std:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def score_completion(completion, trace: Optional[DecodeTrace], instance: Optional[TaskInstance],
                     cfg: GrpoConfig, vocab: Vocabulary) -> tuple[RewardBreakdown, BlockPartition, list]:
    ents = trace.position_entropies(cfg.entropy_source) if trace is not None else None
    part, ent_seq = reconstruct_blocks(completion, vocab.indicator_id, cfg.decode.max_block_cap, ents)
    r_ent = entropy_descent_reward(ent_seq) if ents is not None else 0.0
    r_ind = indicator_reward(part.K, cfg.k_target)
    r_task = verify(instance, completion, vocab)[1] if instance is not None else 0.0
    alpha, beta, gamma = cfg.weights
    return total_reward(r_ent, r_ind, r_task, alpha, beta, gamma), part, ent_seq


def compute_rewards(group: RolloutGroup, task: Optional[TaskInstance], cfg: GrpoConfig,
                    vocab: Vocabulary) -> RolloutGroup:
    task = task if task is not None else group.instance
    group.rewards, group.partitions, group.entropy_seqs = [], [], []
    for comp, tr in zip(group.completions, group.traces):
        rb, part, ents = score_completion(comp, tr, task, cfg, vocab)
        group.rewards.append(rb)
        group.partitions.append(part)
        group.entropy_seqs.append(ents)
    group.advantages = advantages([r.total for r in group.rewards])
    return group


@dataclass
class StepStats:
    objective: float
    excluded: int
    tokens: int

    @property
    def excluded_frac(self) -> float:
        return self.excluded / max(self.tokens, 1)


def grpo_objective(params: ModelParams, groups: list, cfg: GrpoConfig, vocab: Vocabulary,
                   ref: Optional[ModelParams] = None, clip: bool = True) -> tuple[torch.Tensor, torch.Tensor, StepStats]:
    """Differentiable surrogate; returns (objective, flat parameter leaf, stats)."""
    flat = torch.tensor(params.flat, requires_grad=True)
    inputs, targets, old, adv = [], [], [], []
    P = None
    for grp in groups:
        for g in range(len(grp.completions)):
            inputs.append(build_logprob_input(grp.prompt, grp.targets[g], cfg.p_mask,
                                              np.random.default_rng(grp.mask_seeds[g]), vocab.mask_id))
        targets.append(grp.targets)
        old.append(grp.old_logprobs)
        adv.append(np.repeat(grp.advantages[:, None], grp.targets.shape[1], axis=1))
    # prompts differ in length across groups but every input spans the full window
    phi = []
    row = 0
    for grp, tg in zip(groups, targets):
        n = len(grp.completions)
        phi.append(completion_logprobs(params.config, flat, np.stack(inputs[row:row + n]), tg, len(grp.prompt)))
        row += n
    phi = torch.cat([p.reshape(-1) for p in phi])
    old_t = torch.as_tensor(np.concatenate([o.reshape(-1) for o in old]), dtype=phi.dtype)
    adv_t = torch.as_tensor(np.concatenate([a.reshape(-1) for a in adv]), dtype=phi.dtype)
    ratio = torch.exp(phi - old_t)
    ok = torch.isfinite(ratio)
    n_tok = int(ratio.numel())
    excluded = n_tok - int(ok.sum())
    ratio = torch.where(ok, ratio, torch.ones_like(ratio))
    if clip:
        term = torch.minimum(ratio * adv_t, ratio.clamp(1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv_t)
    else:
        term = ratio * adv_t
    okf = ok.to(phi.dtype)
    objective = (term * okf).sum() / okf.sum().clamp(min=1.0)
    if cfg.kl_beta > 0 and ref is not None:
        ref_phi = []
        row = 0
        for grp, tg in zip(groups, targets):
            n = len(grp.completions)
            lp = forward_batch(ref, np.stack(inputs[row:row + n]))[:, len(grp.prompt):]
            ref_phi.append(np.take_along_axis(lp, tg[..., None], -1)[..., 0].reshape(-1))
            row += n
        ref_t = torch.as_tensor(np.concatenate(ref_phi), dtype=phi.dtype)
        diff = ref_t - phi
        kl = torch.exp(diff) - diff - 1.0
        objective = objective - cfg.kl_beta * (kl * okf).sum() / okf.sum().clamp(min=1.0)
    return objective, flat, StepStats(float(objective.detach()), excluded, n_tok)


def grpo_step(params: ModelParams, groups, cfg: GrpoConfig, vocab: Vocabulary,
              ref: Optional[ModelParams] = None, clip: bool = True) -> tuple[float, np.ndarray, StepStats]:
    """Objective value and its gradient (ascent direction) for one or more rollout groups."""
    if isinstance(groups, RolloutGroup):
        groups = [groups]
    for grp in groups:
        if grp.advantages is None:
            raise DomainError("rollout group has no advantages; run compute_rewards first")
    objective, flat, stats = grpo_objective(params, groups, cfg, vocab, ref, clip)
    if stats.excluded_frac > cfg.max_excluded_frac:
        raise FloatingPointError(f"{stats.excluded_frac:.1%} of tokens had a non-finite ratio")
    (grad,) = torch.autograd.grad(objective, flat)
    return stats.objective, grad.numpy(), stats


class StepFailure(RuntimeError):
    def __init__(self, batch: int, cause: Exception):
        super().__init__(f"GRPO batch {batch} failed: {cause}")
        self.batch = batch


def rl_train_loop(params: ModelParams, dataset: Dataset, cfg: GrpoConfig, vocab: Vocabulary,
                  progress=None) -> tuple[ModelParams, list[dict]]:
    """Snapshot, roll out, score, then ``num_iterations`` clipped-surrogate updates per batch."""
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                    weight_decay=cfg.weight_decay, clip=cfg.grad_clip)
    ref = params.with_flat(params.flat.copy()) if cfg.kl_beta > 0 else None
    rows = []
    step = 0
    for b in range(cfg.batches):
        snapshot = PolicySnapshot.of(params, step)
        idx = rng.integers(0, len(dataset.instances), size=cfg.prompts_per_batch)
        try:
            groups = []
            for i in idx:
                inst = dataset.instances[int(i)]
                grp = sample_group(snapshot, inst.prompt, cfg, rng, vocab, inst)
                groups.append(compute_rewards(grp, inst, cfg, vocab))
            rewards = [r for g in groups for r in g.rewards]
            parts = [p for g in groups for p in g.partitions]
            for _ in range(cfg.num_iterations):
                obj, grad, stats = grpo_step(params, groups, cfg, vocab, ref)
                opt, params = optimizer_step(opt, params, -grad)
                step += 1
                if ref is not None and step % cfg.ref_sync_steps == 0:
                    ref = params.with_flat(params.flat.copy())
                rows.append({
                    "step": step,
                    "mean_total": float(np.mean([r.total for r in rewards])),
                    "mean_r_ent": float(np.mean([r.r_ent for r in rewards])),
                    "mean_r_ind": float(np.mean([r.r_ind for r in rewards])),
                    "mean_r_task": float(np.mean([r.r_task for r in rewards])),
                    "mean_K": float(np.mean([p.K for p in parts])),
                    "mean_block_size": float(np.mean([np.mean(p.sizes) for p in parts])),
                    "objective": obj,
                    "excluded_token_frac": stats.excluded_frac,
                })
        except (FloatingPointError, DomainError) as exc:
            raise StepFailure(b, exc) from exc
        if progress is not None:
            progress(b, rows[-1])
    return params, rows
