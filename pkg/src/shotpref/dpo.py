"""Preference pairs and direct preference optimisation against a frozen reference."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataTooSmall, DomainError, NoPairs
from .geometry import SubjectProxy, Trajectory
from .model import PolicyModel, sample_batch, sequence_logprob_batch
from .scoring import MIN_GAP, ScoreRecord, Strategy
from .stage import DEFAULT_ASPECT, framing_arrays, miss_flags
from .taxonomy import ShotTags
from .tokenizer import TokenizedTrajectory, detokenize


@dataclass(frozen=True)
class PreferencePair:
    prompt_tags: ShotTags | None
    winner: TokenizedTrajectory
    loser: TokenizedTrajectory
    score_winner: float
    score_loser: float
    strategy: Strategy = Strategy.CYCLIC

    def __post_init__(self):
        if not self.score_winner > self.score_loser:
            raise DomainError("winner must outscore loser")
        if self.winner == self.loser:
            raise DomainError("winner and loser must differ")

    def to_record(self) -> dict:
        return {
            "prompt_tags": None if self.prompt_tags is None else self.prompt_tags.to_dict(),
            "winner": self.winner.tolist(),
            "loser": self.loser.tolist(),
            "score_winner": self.score_winner,
            "score_loser": self.score_loser,
            "strategy": self.strategy.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PreferencePair":
        tags = None if rec["prompt_tags"] is None else ShotTags.from_dict(rec["prompt_tags"])
        return cls(tags, TokenizedTrajectory(rec["winner"]), TokenizedTrajectory(rec["loser"]),
                   rec["score_winner"], rec["score_loser"], Strategy(rec["strategy"]))


def build_preference_pairs(scored: Sequence[tuple[TokenizedTrajectory, ScoreRecord | float]], min_gap: float,
                           prompt_tags: ShotTags | None = None) -> list[PreferencePair]:
    """Best against worst, second best against second worst, and so on."""
    if len(scored) < 2:
        raise DomainError("need at least two scored candidates")
    items = []
    strategy = Strategy.CYCLIC
    for seq, rec in scored:
        if isinstance(rec, ScoreRecord):
            strategy = rec.strategy
            rec = rec.value
        items.append((float(rec), seq))
    # ties broken on the token sequence so the result ignores input order
    items.sort(key=lambda it: (-it[0], it[1].tolist()))
    pairs = []
    n = len(items)
    for k in range(n // 2):
        (sw, w), (sl, l) = items[k], items[n - 1 - k]
        if sw - sl < min_gap or sw <= sl or w == l:
            continue
        pairs.append(PreferencePair(prompt_tags, w, l, sw, sl, strategy))
    if not pairs:
        raise NoPairs("no candidate pair clears the score gap")
    return pairs


def dpo_loss_from_logprobs(pol_w, pol_l, ref_w, ref_l, beta: float):
    """-log sigmoid(beta * margin) per pair; works on tensors or floats."""
    margin = (pol_w - ref_w) - (pol_l - ref_l)
    if isinstance(margin, torch.Tensor):
        return -F.logsigmoid(beta * margin)
    return math.log1p(math.exp(-beta * margin)) if beta * margin > -30 else -beta * margin


def reference_logprobs(reference: PolicyModel, seqs) -> torch.Tensor:
    with torch.no_grad():
        return sequence_logprob_batch(reference, seqs)


def dpo_loss(policy: PolicyModel, reference: PolicyModel, pair: PreferencePair | Sequence[PreferencePair],
             beta: float) -> torch.Tensor:
    """Mean pairwise loss; gradients reach the policy only."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    pairs = [pair] if isinstance(pair, PreferencePair) else list(pair)
    winners = [p.winner for p in pairs]
    losers = [p.loser for p in pairs]
    ref_w = reference_logprobs(reference, winners)
    ref_l = reference_logprobs(reference, losers)
    lp = sequence_logprob_batch(policy, winners + losers)
    return dpo_loss_from_logprobs(lp[: len(pairs)], lp[len(pairs):], ref_w, ref_l, beta).mean()


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    candidates: int = 8
    min_gap: float | None = None
    temperature: float = 1.0
    top_k: int = 50
    lr: float = 1e-4
    pairs_per_step: int = 8
    epochs: int = 4
    seed: int = 0
    sample_chunk: int = 128
    grad_clip: float | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if self.candidates < 2:
            raise DomainError("need at least two candidates per prompt")

    def gap(self, strategy: Strategy) -> float:
        return MIN_GAP[strategy] if self.min_gap is None else self.min_gap


@dataclass
class DpoLog:
    epoch: int
    loss: float
    winner_score: float
    loser_score: float
    pairs: int
    heldout_mis_rate: float | None

    def to_dict(self) -> dict:
        return asdict(self)


ScoreFn = Callable[[int, list[Trajectory]], list[float]]


def sample_candidates(policy: PolicyModel, prompt_tags: Sequence[ShotTags | None], n: int, temperature: float,
                      top_k: int, generator: torch.Generator, chunk: int = 128) -> np.ndarray:
    """(P, n, L) token ids, prompts processed in chunks."""
    out = []
    for i in range(0, len(prompt_tags), chunk):
        block = [t for t in prompt_tags[i:i + chunk] for _ in range(n)]
        out.append(sample_batch(policy, block, temperature, top_k, generator).reshape(-1, n, policy.descriptor.context))
    return np.concatenate(out, axis=0)


def decode(tokens: np.ndarray, policy: PolicyModel, fps: float = 10.0) -> Trajectory:
    return detokenize(tokens, policy.spec, fps)


def heldout_mis_rate(policy: PolicyModel, prompt_tags: Sequence[ShotTags | None], subject: SubjectProxy,
                     aspect: float = DEFAULT_ASPECT, temperature: float = 1.0, top_k: int = 50, seed: int = 0,
                     fps: float = 10.0) -> float:
    g = torch.Generator().manual_seed(seed)
    seqs = sample_candidates(policy, prompt_tags, 1, temperature, top_k, g)[:, 0]
    rates = [miss_flags(framing_arrays(decode(s, policy, fps), subject, aspect)).mean() for s in seqs]
    return float(np.mean(rates))


def epoch_generator(seed: int, epoch: int) -> torch.Generator:
    """Sampling stream for one DPO epoch, independent of everything drawn before it."""
    state = np.random.SeedSequence(seed, spawn_key=(epoch,)).generate_state(1, np.uint64)[0]
    return torch.Generator().manual_seed(int(state >> 1))


def pair_candidates(candidates: np.ndarray, prompt_tags: Sequence[ShotTags | None], score_fn: ScoreFn,
                    strategy: Strategy, min_gap: float, policy: PolicyModel, fps: float = 10.0):
    """Score (P, n, L) candidates per prompt and keep every pair that clears the gap."""
    pairs, scores = [], []
    for i, cands in enumerate(candidates):
        trajs = [decode(s, policy, fps) for s in cands]
        values = [float(v) for v in score_fn(i, trajs)]
        scores.append(values)
        scored = [(TokenizedTrajectory(s), ScoreRecord(strategy, v)) for s, v in zip(cands, values)]
        try:
            pairs.extend(build_preference_pairs(scored, min_gap, prompt_tags[i]))
        except NoPairs:
            continue
    return pairs, scores


def collect_pairs(policy: PolicyModel, prompt_tags: Sequence[ShotTags | None], score_fn: ScoreFn,
                  strategy: Strategy, config: DpoConfig, generator: torch.Generator, fps: float = 10.0):
    seqs = sample_candidates(policy, prompt_tags, config.candidates, config.temperature, config.top_k,
                             generator, config.sample_chunk)
    return pair_candidates(seqs, prompt_tags, score_fn, strategy, config.gap(strategy), policy, fps)[0]


def dpo_train(policy: PolicyModel, reference: PolicyModel, prompt_tags: Sequence[ShotTags | None],
              score_fn: ScoreFn, strategy: Strategy | str, config: DpoConfig = DpoConfig(),
              heldout_tags: Sequence[ShotTags | None] | None = None, subject: SubjectProxy | None = None,
              aspect: float = DEFAULT_ASPECT, fps: float = 10.0, log=None, pair_sink=None,
              initial_pairs: Sequence[PreferencePair] | None = None):
    """On-policy DPO: each epoch samples fresh candidates, pairs them and takes optimizer steps.

    ``initial_pairs`` replaces the first epoch's sampling; they must come from
    ``epoch_generator(config.seed, 0)`` for the run to match one without them.
    """
    strategy = Strategy(strategy)
    subject = subject or SubjectProxy()
    for p in reference.parameters():
        p.requires_grad_(False)
    g = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.Adam(policy.parameters(), lr=config.lr)
    logs: list[DpoLog] = []
    for epoch in range(config.epochs):
        policy.eval()
        if epoch == 0 and initial_pairs is not None:
            pairs = list(initial_pairs)
        else:
            pairs = collect_pairs(policy, prompt_tags, score_fn, strategy, config,
                                  epoch_generator(config.seed, epoch), fps)
        if epoch == 0 and len(pairs) < 16:
            raise DataTooSmall(f"only {len(pairs)} usable preference pairs")
        if pair_sink is not None:
            pair_sink(epoch, pairs)
        order = torch.randperm(len(pairs), generator=g).tolist()
        policy.train()
        losses = []
        for i in range(0, len(order), config.pairs_per_step):
            batch = [pairs[j] for j in order[i:i + config.pairs_per_step]]
            loss = dpo_loss(policy, reference, batch, config.beta)
            opt.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(policy.parameters(), config.grad_clip)
            opt.step()
            losses.append(loss.item())
        policy.eval()
        misr = None
        if heldout_tags is not None:
            misr = heldout_mis_rate(policy, heldout_tags, subject, aspect, config.temperature, config.top_k,
                                    config.seed + 1, fps)
        entry = DpoLog(
            epoch + 1,
            float(np.mean(losses)) if losses else float("nan"),
            float(np.mean([p.score_winner for p in pairs])) if pairs else float("nan"),
            float(np.mean([p.score_loser for p in pairs])) if pairs else float("nan"),
            len(pairs),
            misr,
        )
        logs.append(entry)
        if log:
            log(f"dpo epoch {entry.epoch}/{config.epochs} loss {entry.loss:.4f} pairs {entry.pairs} "
                f"win {entry.winner_score:.3f} lose {entry.loser_score:.3f} misr {misr}")
    return policy, logs
