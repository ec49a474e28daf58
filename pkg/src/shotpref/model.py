"""Compact causal transformer over trajectory tokens.

Logits are masked to the sub-vocabulary of each position's role, so every
sampled token is legal and log-probabilities normalise within the role.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataTooSmall, LengthError
from .taxonomy import ShotTags
from .tokenizer import N_CHANNELS, N_CONDITION, TokenizedTrajectory, TokenSpec, position_roles, tag_tokens

CHECKPOINT_FORMAT = "shotpref-policy"
CHECKPOINT_VERSION = 1
LOG_FLOOR = math.log(1e-12)


@dataclass(frozen=True)
class ModelDescriptor:
    frames: int = 30
    width: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4

    @property
    def context(self) -> int:
        return N_CONDITION + 7 * self.frames + 1


N_LEVEL_FEATURES = 7


def level_features(bins: int) -> torch.Tensor:
    """Smooth features of a level index: its position in [0, 1] and a few harmonics."""
    f = torch.arange(bins, dtype=torch.float32) / (bins - 1)
    cols = [f - 0.5]
    for k in (1, 2, 4):
        cols += [torch.sin(math.pi * k * f), torch.cos(math.pi * k * f)]
    return torch.stack(cols, dim=1)


def channel_slots(frames: int) -> np.ndarray:
    """Per position: channel index for frame 0, 7 + channel for deltas, -1 otherwise."""
    slots = np.full(N_CONDITION + N_CHANNELS * frames + 1, -1, dtype=np.int64)
    body = np.tile(np.arange(N_CHANNELS), frames)
    body[N_CHANNELS:] += N_CHANNELS
    slots[N_CONDITION:-1] = body
    return slots


class Block(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.fc = nn.Linear(width, mlp_ratio * width)
        self.out = nn.Linear(mlp_ratio * width, width)

    def attend(self, x, cache=None):
        b, n, w = x.shape
        h = self.heads
        q, k, v = self.qkv(self.ln1(x)).split(w, dim=-1)
        q, k, v = (t.view(b, n, h, w // h).transpose(1, 2) for t in (q, k, v))
        if cache is not None:
            # preallocated buffers; cache["n"] counts the positions already stored
            start = cache.get("n", 0)
            if "k" not in cache:
                shape = (b, h, cache["size"], w // h)
                cache["k"] = k.new_empty(shape)
                cache["v"] = v.new_empty(shape)
            cache["k"][:, :, start:start + n] = k
            cache["v"][:, :, start:start + n] = v
            cache["n"] = start + n
            k = cache["k"][:, :, :start + n]
            v = cache["v"][:, :, :start + n]
        if n == 1:
            y = F.scaled_dot_product_attention(q, k, v)
        elif n == k.shape[2]:
            y = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        else:
            causal = torch.ones(n, k.shape[2], dtype=torch.bool, device=x.device).tril(diagonal=k.shape[2] - n)
            y = F.scaled_dot_product_attention(q, k, v, attn_mask=causal)
        return self.proj(y.transpose(1, 2).reshape(b, n, w))

    def forward(self, x, cache=None):
        x = x + self.attend(x, cache)
        return x + self.out(F.gelu(self.fc(self.ln2(x))))


class PolicyModel(nn.Module):
    def __init__(self, descriptor: ModelDescriptor = ModelDescriptor(), spec: TokenSpec = TokenSpec(), seed: int = 0):
        super().__init__()
        self.descriptor = descriptor
        self.spec = spec
        self.seed = seed
        w = descriptor.width
        self.tok = nn.Embedding(spec.vocab_size, w)
        self.pos = nn.Embedding(descriptor.context, w)
        self.blocks = nn.ModuleList(Block(w, descriptor.heads, descriptor.mlp_ratio) for _ in range(descriptor.depth))
        self.ln = nn.LayerNorm(w)
        # channel tokens also carry their numeric level through smooth features
        self.value_proj = nn.Parameter(torch.zeros(2 * N_CHANNELS, N_LEVEL_FEATURES, w))
        self.register_buffer("level_feats", level_features(spec.bins), persistent=False)
        self.register_buffer("slots", torch.from_numpy(channel_slots(descriptor.frames)), persistent=False)
        roles = position_roles(descriptor.frames)
        masks = spec.role_masks()
        self.register_buffer("roles", torch.from_numpy(roles), persistent=False)
        # row p: tokens allowed as the target predicted from position p
        target_mask = masks[np.append(roles[1:], roles[-1])]
        self.register_buffer("target_mask", torch.from_numpy(target_mask), persistent=False)
        self._init(seed)

    def _init(self, seed: int):
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.LayerNorm):
                    m.weight.fill_(1.0)
                    m.bias.zero_()
                elif isinstance(m, nn.Linear):
                    m.weight.normal_(0.0, 0.02, generator=g)
                    m.bias.zero_()
                elif isinstance(m, nn.Embedding):
                    m.weight.normal_(0.0, 0.02, generator=g)
            self.value_proj.normal_(0.0, 0.02, generator=g)

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, tokens: torch.Tensor, cache: list | None = None, start: int = 0) -> torch.Tensor:
        n = tokens.shape[1]
        x = self.tok(tokens) + self.pos(torch.arange(start, start + n, device=tokens.device))
        slots = self.slots[start:start + n]
        feats = self.level_feats[tokens.clamp(max=self.spec.bins - 1)]
        value = torch.einsum("bnf,nfw->bnw", feats, self.value_proj[slots.clamp(min=0)])
        x = x + value * (slots >= 0)[None, :, None].to(value.dtype)
        for i, blk in enumerate(self.blocks):
            x = blk(x, None if cache is None else cache[i])
        return self.ln(x) @ self.tok.weight.T

    def masked_log_probs(self, logits: torch.Tensor, start: int = 0) -> torch.Tensor:
        """Log-softmax restricted to the role of the token each position predicts."""
        n = logits.shape[1]
        mask = self.target_mask[start:start + n]
        return torch.log_softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)

    def clone(self) -> "PolicyModel":
        other = PolicyModel(self.descriptor, self.spec, self.seed).to(next(self.parameters()).dtype)
        other.load_state_dict(self.state_dict())
        return other


# ---------------------------------------------------------------------------
# likelihoods
# ---------------------------------------------------------------------------

def _as_batch(model: PolicyModel, seqs) -> torch.Tensor:
    if isinstance(seqs, torch.Tensor):
        batch = seqs
    else:
        if isinstance(seqs, (TokenizedTrajectory, np.ndarray)) and np.ndim(getattr(seqs, "tokens", seqs)) == 1:
            seqs = [seqs]
        rows = [s.tokens if isinstance(s, TokenizedTrajectory) else np.asarray(s) for s in seqs]
        batch = torch.from_numpy(np.stack(rows).astype(np.int64))
    if batch.shape[1] != model.descriptor.context:
        raise LengthError(f"expected {model.descriptor.context} tokens, got {batch.shape[1]}")
    return batch


def token_logprobs(model: PolicyModel, batch: torch.Tensor) -> torch.Tensor:
    """(B, L-1) floored log-probabilities of each realised token given its prefix."""
    logp = model.masked_log_probs(model(batch[:, :-1]))
    picked = logp.gather(-1, batch[:, 1:, None])[..., 0]
    return torch.clamp(picked, min=LOG_FLOOR)


def sequence_logprob_batch(model: PolicyModel, seqs) -> torch.Tensor:
    """Differentiable sum of log-probabilities over every non-conditioning token."""
    batch = _as_batch(model, seqs)
    return token_logprobs(model, batch)[:, N_CONDITION - 1:].sum(dim=1)


def sequence_logprob(model: PolicyModel, tokens) -> float:
    with torch.no_grad():
        return float(sequence_logprob_batch(model, tokens)[0])


def cross_entropy(model: PolicyModel, batch: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood per non-conditioning token."""
    lp = token_logprobs(model, batch)[:, N_CONDITION - 1:]
    return -lp.mean()


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _filter(logits: torch.Tensor, mask: torch.Tensor, temperature: float, top_k: int) -> torch.Tensor:
    logits = logits.masked_fill(~mask, float("-inf")) / temperature
    k = min(top_k, int(mask.sum()))
    if k < logits.shape[-1]:
        kth = torch.topk(logits, k, dim=-1).values[..., -1:]
        logits = logits.masked_fill(logits < kth, float("-inf"))
    return logits


@torch.no_grad()
def sample_batch(model: PolicyModel, prompt_tags: Sequence[ShotTags | None], temperature: float = 1.0,
                 top_k: int = 50, generator: torch.Generator | None = None) -> np.ndarray:
    """Role-masked ancestral sampling with a key/value cache; returns (B, L) token ids."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    spec = model.spec
    L = model.descriptor.context
    prefix = torch.tensor([[spec.bos] + tag_tokens(t, spec) for t in prompt_tags], dtype=torch.int64)
    b = len(prefix)
    out = torch.empty(b, L, dtype=torch.int64)
    out[:, :N_CONDITION] = prefix
    cache = [{"size": L} for _ in model.blocks]
    logits = model(prefix, cache, 0)[:, -1]
    for p in range(N_CONDITION, L):
        mask = model.target_mask[p - 1]
        if top_k == 1 or int(mask.sum()) == 1:
            nxt = logits.masked_fill(~mask, float("-inf")).argmax(dim=-1)
        else:
            probs = torch.softmax(_filter(logits, mask, temperature, top_k).double(), dim=-1)
            nxt = torch.multinomial(probs, 1, generator=generator)[:, 0]
        out[:, p] = nxt
        if p < L - 1:
            logits = model(nxt[:, None], cache, p)[:, -1]
    return out.numpy()


def sample_trajectory(model: PolicyModel, prompt_tags: ShotTags | None, temperature: float = 1.0, top_k: int = 50,
                      rng_seed: int = 0) -> TokenizedTrajectory:
    g = torch.Generator().manual_seed(rng_seed)
    return TokenizedTrajectory(sample_batch(model, [prompt_tags], temperature, top_k, g)[0])


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainHyper:
    lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 20
    tag_dropout: float = 0.1
    weight_decay: float = 0.0


def pretrain(model: PolicyModel, dataset: Sequence[TokenizedTrajectory] | np.ndarray, hyper: PretrainHyper = PretrainHyper(),
             seed: int = 0, log=None) -> tuple[PolicyModel, list[float]]:
    """Adam on mean token cross-entropy; returns the model and its per-epoch mean loss."""
    data = np.stack([d.tokens if isinstance(d, TokenizedTrajectory) else np.asarray(d) for d in dataset])
    if len(data) < 64:
        raise DataTooSmall("pretraining needs at least 64 sequences")
    data = torch.from_numpy(data.astype(np.int64))
    spec = model.spec
    unspecified = torch.arange(spec.unspecified_offset, spec.unspecified_offset + N_CONDITION - 1)
    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    curve = []
    model.train()
    for epoch in range(hyper.epochs):
        order = torch.randperm(len(data), generator=g)
        total, count = 0.0, 0
        for i in range(0, len(data), hyper.batch_size):
            batch = data[order[i:i + hyper.batch_size]].clone()
            if hyper.tag_dropout > 0:
                drop = torch.rand(len(batch), N_CONDITION - 1, generator=g) < hyper.tag_dropout
                batch[:, 1:N_CONDITION] = torch.where(drop, unspecified.expand_as(drop), batch[:, 1:N_CONDITION])
            loss = cross_entropy(model, batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        curve.append(total / count)
        if log:
            log(f"pretrain epoch {epoch + 1}/{hyper.epochs} loss {curve[-1]:.4f}")
    model.eval()
    return model, curve


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: PolicyModel, path, extra: dict | None = None) -> None:
    names, shapes, blobs = [], [], []
    for name, t in model.state_dict().items():
        names.append(name)
        shapes.append(list(t.shape))
        blobs.append(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "descriptor": asdict(model.descriptor),
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "tensors": [[n, s] for n, s in zip(names, shapes)],
        "extra": extra or {},
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for b in blobs:
        buf.write(b)
    from .storage import atomic_write_bytes
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> PolicyModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    line, _, body = raw.partition(b"\n")
    header = json.loads(line)
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    model = PolicyModel(ModelDescriptor(**header["descriptor"]), TokenSpec.from_dict(header["spec"]), header["seed"])
    state, offset = {}, 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset += 4 * n
    if offset != len(body):
        raise ValueError("checkpoint parameter block has the wrong size")
    model.load_state_dict(state)
    model.eval()
    return model
