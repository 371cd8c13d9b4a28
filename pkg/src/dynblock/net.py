"""Toy masked-diffusion denoiser.

A small bidirectional transformer whose parameters live in one flat vector,
so gradients can be checked coordinate by coordinate against finite
differences. The flat vector is a numpy array; torch is used for the forward
pass and autograd.
"""

from __future__ import annotations

import base64
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .seq import DomainError, Sequence, Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dynblock-ckpt-v1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise DomainError("d_model must be divisible by n_heads")

    def layout(self) -> dict[str, tuple[int, tuple]]:
        """name -> (offset, shape) inside the flat parameter vector."""
        d, f, V = self.d_model, self.d_ff, self.vocab_size
        shapes = [("tok_emb", (V, d)), ("pos_emb", (self.max_len, d))]
        for i in range(self.n_layers):
            shapes += [
                (f"l{i}.ln1_g", (d,)), (f"l{i}.ln1_b", (d,)),
                (f"l{i}.w_qkv", (d, 3 * d)), (f"l{i}.b_qkv", (3 * d,)),
                (f"l{i}.w_o", (d, d)), (f"l{i}.b_o", (d,)),
                (f"l{i}.ln2_g", (d,)), (f"l{i}.ln2_b", (d,)),
                (f"l{i}.w_1", (d, f)), (f"l{i}.b_1", (f,)),
                (f"l{i}.w_2", (f, d)), (f"l{i}.b_2", (d,)),
            ]
        shapes += [("lnf_g", (d,)), ("lnf_b", (d,)), ("w_out", (d, V))]
        out, off = {}, 0
        for name, shape in shapes:
            out[name] = (off, shape)
            off += int(np.prod(shape))
        return out

    @property
    def n_params(self) -> int:
        lay = self.layout()
        name = next(reversed(lay))
        off, shape = lay[name]
        return off + int(np.prod(shape))


@dataclass(frozen=True, eq=False)
class ModelParams:
    config: ModelConfig
    flat: np.ndarray

    def __post_init__(self):
        if self.flat.shape != (self.config.n_params,):
            raise DomainError(f"flat vector has {self.flat.shape}, expected ({self.config.n_params},)")

    @property
    def dtype(self):
        return self.flat.dtype

    def component(self, name: str) -> np.ndarray:
        off, shape = self.config.layout()[name]
        return self.flat[off:off + int(np.prod(shape))].reshape(shape)

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return ModelParams(self.config, flat)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, self.flat.astype(dtype))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32,
                zero_output: bool = False, zero_positional: bool = False) -> ModelParams:
    rng = np.random.default_rng(seed)
    flat = np.zeros(config.n_params, dtype=np.float64)
    for name, (off, shape) in config.layout().items():
        n = int(np.prod(shape))
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            vals = np.ones(n)
        elif leaf.startswith("b_") or leaf.endswith("_b"):
            vals = np.zeros(n)
        elif name in ("tok_emb", "pos_emb"):
            vals = rng.normal(0.0, 0.1, n)
        else:
            vals = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), n)
        if name == "w_out" and zero_output:
            vals = np.zeros(n)
        if name == "pos_emb" and zero_positional:
            vals = np.zeros(n)
        flat[off:off + n] = vals
    return ModelParams(config, flat.astype(dtype))


def _unflatten(config: ModelConfig, flat: torch.Tensor) -> dict[str, torch.Tensor]:
    return {name: flat[off:off + int(np.prod(shape))].view(*shape)
            for name, (off, shape) in config.layout().items()}


def log_probs(config: ModelConfig, flat: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    """(B, L) token ids -> (B, L, V) log-probabilities. Differentiable in ``flat``."""
    B, L = tokens.shape
    if L > config.max_len:
        raise DomainError(f"sequence length {L} exceeds max_len {config.max_len}")
    p = _unflatten(config, flat)
    d, H = config.d_model, config.n_heads
    hd = d // H
    h = p["tok_emb"][tokens] + p["pos_emb"][:L]
    for i in range(config.n_layers):
        x = torch.nn.functional.layer_norm(h, (d,), p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
        qkv = x @ p[f"l{i}.w_qkv"] + p[f"l{i}.b_qkv"]
        q, k, v = qkv.split(d, dim=-1)
        q = q.view(B, L, H, hd).transpose(1, 2)
        k = k.view(B, L, H, hd).transpose(1, 2)
        v = v.view(B, L, H, hd).transpose(1, 2)
        # no causal mask: every position attends to both sides
        att = torch.softmax((q @ k.transpose(-1, -2)) / math.sqrt(hd), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, L, d)
        h = h + y @ p[f"l{i}.w_o"] + p[f"l{i}.b_o"]
        x = torch.nn.functional.layer_norm(h, (d,), p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
        x = torch.nn.functional.gelu(x @ p[f"l{i}.w_1"] + p[f"l{i}.b_1"])
        h = h + x @ p[f"l{i}.w_2"] + p[f"l{i}.b_2"]
    h = torch.nn.functional.layer_norm(h, (d,), p["lnf_g"], p["lnf_b"])
    return torch.log_softmax(h @ p["w_out"], dim=-1)


def _tensor(params: ModelParams, requires_grad: bool = False) -> torch.Tensor:
    if requires_grad:
        return torch.tensor(params.flat, requires_grad=True)
    return torch.from_numpy(params.flat)


@dataclass(frozen=True, eq=False)
class ForwardOutput:
    logprobs: np.ndarray  # (L, V)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs)

    def entropies(self) -> np.ndarray:
        p = np.exp(self.logprobs.astype(np.float64))
        return np.clip(-(p * self.logprobs).sum(-1), 0.0, None)


def forward(params: ModelParams, xt) -> ForwardOutput:
    tokens = xt.tokens if isinstance(xt, Sequence) else xt
    with torch.no_grad():
        lp = log_probs(params.config, _tensor(params), torch.as_tensor(np.asarray(tokens), dtype=torch.long)[None])
    return ForwardOutput(lp[0].numpy())


def forward_batch(params: ModelParams, tokens: np.ndarray) -> np.ndarray:
    """(B, L) -> (B, L, V) log-probabilities as numpy, no grad."""
    with torch.no_grad():
        return log_probs(params.config, _tensor(params), torch.as_tensor(tokens, dtype=torch.long)).numpy()


# --- masking / denoising loss -------------------------------------------------

@dataclass(frozen=True)
class MaskingSample:
    x0: Sequence
    t: float
    xt: Sequence
    masked_set: frozenset


def corrupt(x0: Sequence, t: float, rng: np.random.Generator, mask_id: int) -> MaskingSample:
    if not 0.0 < t <= 1.0:
        raise DomainError(f"masking time t must lie in (0, 1], got {t}")
    toks = np.array(x0.tokens)
    hit = rng.random(x0.window_len) < t
    positions = np.flatnonzero(hit) + x0.prompt_len
    toks[positions] = mask_id
    return MaskingSample(x0=x0, t=float(t), xt=Sequence(tuple(toks), x0.prompt_len),
                         masked_set=frozenset(int(i) for i in positions))


def _batch_loss(config: ModelConfig, flat: torch.Tensor, batch: list[MaskingSample]) -> torch.Tensor:
    xt = torch.tensor([s.xt.tokens for s in batch], dtype=torch.long)
    x0 = torch.tensor([s.x0.tokens for s in batch], dtype=torch.long)
    weights = torch.zeros(xt.shape, dtype=flat.dtype)
    for b, s in enumerate(batch):
        idx = sorted(s.masked_set)
        weights[b, idx] = 1.0 / s.t
    lp = log_probs(config, flat, xt)
    tok_lp = lp.gather(-1, x0[..., None])[..., 0]
    return -(weights * tok_lp).sum() / len(batch)


def denoising_loss(params: ModelParams, batch: list[MaskingSample]) -> tuple[float, np.ndarray]:
    """Masked-token cross entropy weighted by 1/t, averaged over the batch."""
    if not batch:
        raise DomainError("empty batch")
    for s in batch:
        if not s.masked_set:
            raise DomainError("sample with an empty masked set")
    flat = _tensor(params, requires_grad=True)
    loss = _batch_loss(params.config, flat, batch)
    (grad,) = torch.autograd.grad(loss, flat)
    return loss.item(), grad.numpy()


def denoising_loss_value(params: ModelParams, batch: list[MaskingSample]) -> float:
    with torch.no_grad():
        return float(_batch_loss(params.config, _tensor(params), batch))


# --- optimizer ------------------------------------------------------------------

class NonFiniteGradient(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite gradient at coordinate {index}")
        self.index = index


@dataclass(frozen=True, eq=False)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.1
    eps: float = 1e-8
    clip: Optional[float] = 0.2

    @classmethod
    def for_params(cls, params: ModelParams, **hyper) -> "OptimizerState":
        z = np.zeros(params.config.n_params, dtype=np.float64)
        return cls(m=z, v=z.copy(), **hyper)


def clip_by_norm(grads: np.ndarray, clip: Optional[float]) -> np.ndarray:
    if clip is None:
        return grads
    norm = float(np.linalg.norm(grads))
    if norm > clip:
        return grads * (clip / norm)
    return grads


def optimizer_step(opt: OptimizerState, params: ModelParams, grads: np.ndarray) -> tuple[OptimizerState, ModelParams]:
    """AdamW with global-norm clipping. ``grads`` is the gradient of a loss to minimise."""
    if grads.shape != opt.m.shape or params.flat.shape != opt.m.shape:
        raise DomainError("gradient / parameter / optimizer shapes disagree")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteGradient(int(bad[0]))
    g = clip_by_norm(grads.astype(np.float64), opt.clip)
    step = opt.step + 1
    m = opt.beta1 * opt.m + (1 - opt.beta1) * g
    v = opt.beta2 * opt.v + (1 - opt.beta2) * g * g
    m_hat = m / (1 - opt.beta1 ** step)
    v_hat = v / (1 - opt.beta2 ** step)
    theta = params.flat.astype(np.float64)
    theta = theta - opt.lr * opt.weight_decay * theta - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return replace(opt, m=m, v=v, step=step), params.with_flat(theta.astype(params.dtype))


# --- pretraining ----------------------------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 3000
    batch_size: int = 32
    lr: float = 3e-3
    t_min: float = 0.05
    weight_decay: float = 0.01
    clip: Optional[float] = 1.0
    beta1: float = 0.9
    beta2: float = 0.99
    warmup: int = 100
    seed: int = 0
    log_every: int = 100


def sample_t(rng: np.random.Generator, t_min: float) -> float:
    return float(rng.uniform(t_min, 1.0))


def pretrain(corpus: list[Sequence], cfg: PretrainConfig, params: ModelParams,
             mask_id: int) -> tuple[ModelParams, list[float]]:
    """Loop corrupt -> denoising_loss -> optimizer_step. Returns params and the loss curve."""
    if not corpus:
        raise DomainError("empty pretraining corpus")
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                    weight_decay=cfg.weight_decay, clip=cfg.clip)
    losses = []
    for step in range(cfg.steps):
        batch = []
        for i in rng.integers(0, len(corpus), cfg.batch_size):
            while True:
                s = corrupt(corpus[i], sample_t(rng, cfg.t_min), rng, mask_id)
                if s.masked_set:
                    break
            batch.append(s)
        loss, grad = denoising_loss(params, batch)
        scale = min(1.0, (step + 1) / cfg.warmup) if cfg.warmup else 1.0
        opt = replace(opt, lr=cfg.lr * scale)
        opt, params = optimizer_step(opt, params, grad)
        losses.append(loss)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("pretrain step %d loss %.4f", step, loss)
    return params, losses


def write_loss_curve(path, losses: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


# --- one-pass per-token log-probs ------------------------------------------------

def build_logprob_input(prompt, completion, p_mask: float, rng: np.random.Generator,
                        mask_id: int) -> np.ndarray:
    """Prompt with i.i.d. masking at rate p_mask, followed by a fully masked completion."""
    if not 0.0 <= p_mask < 1.0:
        raise DomainError("p_mask must lie in [0, 1)")
    prompt = np.asarray(prompt, dtype=np.int64).copy()
    hit = rng.random(len(prompt)) < p_mask
    prompt[hit] = mask_id
    return np.concatenate([prompt, np.full(len(completion), mask_id, dtype=np.int64)])


def per_token_logprob(params: ModelParams, prompt, completion, p_mask: float,
                      rng: np.random.Generator, mask_id: int) -> np.ndarray:
    x = build_logprob_input(prompt, completion, p_mask, rng, mask_id)
    lp = forward_batch(params, x[None])[0]
    P = len(prompt)
    return lp[np.arange(P, P + len(completion)), np.asarray(completion)]


def completion_logprobs(config: ModelConfig, flat: torch.Tensor, inputs: np.ndarray,
                        targets: np.ndarray, prompt_len: int) -> torch.Tensor:
    """Differentiable batch version: (B, L) inputs, (B, L-P) targets -> (B, L-P)."""
    lp = log_probs(config, flat, torch.as_tensor(inputs, dtype=torch.long))[:, prompt_len:]
    return lp.gather(-1, torch.as_tensor(targets, dtype=torch.long)[..., None])[..., 0]


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, vocab: Vocabulary, extra: Optional[dict] = None) -> None:
    blob = params.flat.astype("<f8").tobytes()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "vocab": vocab.to_dict(),
        "model": asdict(params.config),
        "dtype": str(params.flat.dtype),
        "n_params": params.config.n_params,
        "flat_b64": base64.b64encode(blob).decode("ascii"),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"unknown checkpoint format {payload.get('format')!r}")
    config = ModelConfig(**payload["model"])
    flat = np.frombuffer(base64.b64decode(payload["flat_b64"]), dtype="<f8").astype(payload["dtype"])
    return ModelParams(config, flat), Vocabulary.from_dict(payload["vocab"]), payload.get("extra", {})
