"""Preference scoring strategies: tag consistency, interpolation regression and cyclic captions."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .embed import embed_text
from .errors import DataTooSmall, DomainError, EmptyTags, MotionAmbiguous, UnclassifiableFraming
from .geometry import SubjectProxy, Trajectory, trajectory_interpolate
from .remote import post_score, remote_request
from .stage import DEFAULT_ASPECT, classify_motion, classify_static_tags, framing_arrays, framing_report
from .taxonomy import DIMENSIONS, ShotTags, caption_from_tags, parse_tags_from_prompt

NOT_VISIBLE_CAPTION = "subject not visible"
DIGITS = np.arange(10, dtype=float)


class Strategy(str, enum.Enum):
    TAG = "tag"
    REGRESSION = "regression"
    CYCLIC = "cyclic"
    REMOTE = "remote"


# default minimum score gap for pairing, per strategy
MIN_GAP = {Strategy.TAG: 1.0, Strategy.REGRESSION: 0.225, Strategy.CYCLIC: 0.05, Strategy.REMOTE: 0.05}
_RANGES = {Strategy.TAG: (0.0, 9.0), Strategy.REGRESSION: (0.0, 9.0), Strategy.CYCLIC: (-1.0, 1.0)}


@dataclass(frozen=True)
class Prompt:
    text: str
    tags: ShotTags | None = None

    def __post_init__(self):
        if not self.text:
            raise DomainError("prompt text must be non-empty")

    @property
    def resolved_tags(self) -> ShotTags:
        return self.tags if self.tags is not None else parse_tags_from_prompt(self.text)


@dataclass(frozen=True)
class ScoreRecord:
    strategy: Strategy
    value: float
    caption: str = ""

    def __post_init__(self):
        lo, hi = _RANGES.get(self.strategy, (-math.inf, math.inf))
        if not lo - 1e-9 <= self.value <= hi + 1e-9:
            raise DomainError(f"{self.strategy.value} score {self.value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class DigitDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (10,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise DomainError("digit distribution needs 10 non-negative probabilities summing to 1")
        object.__setattr__(self, "probs", p)

    @property
    def expectation(self) -> float:
        return float(self.probs @ DIGITS)


def inverse_tags(traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT,
                 arrays: dict | None = None) -> ShotTags | None:
    """Tags read back from the realised framing; ``None`` when the subject is lost."""
    arrays = arrays if arrays is not None else framing_arrays(traj, subject, aspect)
    if not np.all(arrays["visible"]):
        return None
    static = classify_static_tags(traj, subject, arrays)
    try:
        motion = classify_motion(traj, subject, arrays)
    except MotionAmbiguous:
        motion = None
    return ShotTags(motion=motion, **static)


def inverse_caption(traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT,
                    caption_seed: int = 0, arrays: dict | None = None) -> str:
    tags = inverse_tags(traj, subject, aspect, arrays)
    return NOT_VISIBLE_CAPTION if tags is None else caption_from_tags(tags, caption_seed)


def cyclic_score(prompt: Prompt, traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT,
                 caption_seed: int = 0) -> ScoreRecord:
    caption = inverse_caption(traj, subject, aspect, caption_seed)
    value = embed_text(prompt.text).cosine(embed_text(caption))
    return ScoreRecord(Strategy.CYCLIC, value, caption)


def tag_consistency_score(prompt_tags: ShotTags, traj: Trajectory, subject: SubjectProxy,
                          aspect: float = DEFAULT_ASPECT) -> ScoreRecord:
    spec = prompt_tags.specified
    if not spec:
        raise EmptyTags("prompt specifies no tag dimension")
    tags = inverse_tags(traj, subject, aspect)
    m = 0 if tags is None else prompt_tags.matches(tags)
    caption = NOT_VISIBLE_CAPTION if tags is None else caption_from_tags(tags)
    return ScoreRecord(Strategy.TAG, float(round(9 * m / len(spec))), caption)


def raft_loss(dists: Sequence[DigitDistribution | np.ndarray], target: float) -> float:
    """Mean squared gap between the target and each step's expected digit."""
    if len(dists) == 0:
        raise DomainError("raft_loss needs at least one step")
    probs = np.stack([d.probs if isinstance(d, DigitDistribution) else np.asarray(d, float) for d in dists])
    return float(np.mean((target - probs @ DIGITS) ** 2))


def interp_target(alpha: float) -> int:
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    return int(round(9 * alpha))


# ---------------------------------------------------------------------------
# regression scorer
# ---------------------------------------------------------------------------

N_FEATURES = 16


def regression_features(prompt_tags: ShotTags, traj: Trajectory, subject: SubjectProxy,
                        aspect: float = DEFAULT_ASPECT) -> np.ndarray:
    a = framing_arrays(traj, subject, aspect)
    rho = a["rho"]
    uv = np.clip(a["anchor_uv"], -1.0, 2.0)
    centre = np.linalg.norm(uv - 0.5, axis=1)
    realised = inverse_tags(traj, subject, aspect, a)
    match = [
        float(realised is not None and getattr(prompt_tags, d) is not None and getattr(realised, d) == getattr(prompt_tags, d))
        for d in DIMENSIONS
    ]
    return np.array([
        np.median(rho), rho.std(), rho.min(), rho.max(),
        uv[:, 0].mean(), uv[:, 1].mean(), uv[:, 0].std(), uv[:, 1].std(), centre.mean(),
        a["visible"].mean(), a["in_border"].mean(),
        *match,
    ])


@dataclass(frozen=True)
class RegressionHyper:
    hidden: int = 32
    lr: float = 0.05
    epochs: int = 1500


class RegressionScorer:
    """Features -> softmax over digits 0..9; the score is the expected digit."""

    def __init__(self, mean: np.ndarray, std: np.ndarray, hidden: int, seed: int):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)
        self.hidden = hidden
        self.seed = seed
        g = torch.Generator().manual_seed(seed)
        self.net = torch.nn.Sequential(
            torch.nn.Linear(N_FEATURES, hidden), torch.nn.Tanh(), torch.nn.Linear(hidden, 10),
        ).double()
        with torch.no_grad():
            for p in self.net.parameters():
                bound = 1.0 / math.sqrt(p.shape[-1])
                p.uniform_(-bound, bound, generator=g)

    def _inputs(self, feats: np.ndarray) -> torch.Tensor:
        return torch.from_numpy((np.atleast_2d(feats) - self.mean) / self.std)

    def distribution(self, feats: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return torch.softmax(self.net(self._inputs(feats)), dim=-1).numpy()

    def predict(self, feats: np.ndarray) -> np.ndarray:
        return self.distribution(feats) @ DIGITS

    def score(self, prompt_tags: ShotTags, traj: Trajectory, subject: SubjectProxy,
              aspect: float = DEFAULT_ASPECT) -> ScoreRecord:
        value = float(self.predict(regression_features(prompt_tags, traj, subject, aspect))[0])
        return ScoreRecord(Strategy.REGRESSION, min(max(value, 0.0), 9.0), "")

    def parameters_vector(self) -> np.ndarray:
        return torch.cat([p.detach().flatten() for p in self.net.parameters()]).numpy()

    def to_json(self) -> str:
        state = {k: v.tolist() for k, v in self.net.state_dict().items()}
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist(), "hidden": self.hidden,
                           "seed": self.seed, "state": state}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RegressionScorer":
        d = json.loads(text)
        obj = cls(np.array(d["mean"]), np.array(d["std"]), d["hidden"], d["seed"])
        obj.net.load_state_dict({k: torch.tensor(v, dtype=torch.float64) for k, v in d["state"].items()})
        return obj


def build_regression_dataset(prompts: Sequence[ShotTags], trajectories: Sequence[Trajectory], n: int, seed: int,
                             subject: SubjectProxy, aspect: float = DEFAULT_ASPECT):
    """Interpolated trajectories between distinct-prompt pairs, labelled with round(9 alpha)."""
    if len(trajectories) < 2:
        raise DataTooSmall("need at least two trajectories")
    rng = np.random.default_rng(seed)
    feats, targets, alphas = [], [], []
    while len(feats) < n:
        i, j = (int(x) for x in rng.choice(len(trajectories), size=2, replace=False))
        if prompts[i] == prompts[j]:
            continue
        alpha = float(rng.uniform())
        mixed = trajectory_interpolate(trajectories[i], trajectories[j], alpha)
        feats.append(regression_features(prompts[i], mixed, subject, aspect))
        targets.append(interp_target(alpha))
        alphas.append(alpha)
    return np.array(feats), np.array(targets, dtype=float), np.array(alphas)


def train_regression_scorer(features: np.ndarray, targets: np.ndarray, hyper: RegressionHyper = RegressionHyper(),
                            seed: int = 0) -> tuple[RegressionScorer, list[float]]:
    """Full-batch gradient descent on the expected-digit squared loss."""
    features = np.asarray(features, dtype=float)
    if len(features) < 16:
        raise DataTooSmall("regression scorer needs at least 16 samples")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    scorer = RegressionScorer(mean, std, hyper.hidden, seed)
    x = scorer._inputs(features)
    y = torch.from_numpy(np.asarray(targets, dtype=float))
    digits = torch.from_numpy(DIGITS)
    opt = torch.optim.SGD(scorer.net.parameters(), lr=hyper.lr)
    curve = []
    for _ in range(hyper.epochs):
        opt.zero_grad()
        expect = torch.softmax(scorer.net(x), dim=-1) @ digits
        loss = torch.mean((y - expect) ** 2)
        loss.backward()
        opt.step()
        curve.append(loss.item())
    return scorer, curve


# ---------------------------------------------------------------------------
# batch scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoringContext:
    subject: SubjectProxy = field(default_factory=SubjectProxy)
    aspect: float = DEFAULT_ASPECT
    regression: RegressionScorer | None = None
    endpoint: str | None = None
    timeout: float = 10.0
    caption_seed: int = 0


def score_candidates(prompt: Prompt, candidates: Sequence[Trajectory], strategy: Strategy | str,
                     context: ScoringContext | None = None) -> list[ScoreRecord]:
    """One record per candidate in input order; each score depends on its candidate only."""
    if len(candidates) == 0:
        raise DomainError("no candidates to score")
    strategy = Strategy(strategy)
    ctx = context or ScoringContext()
    out = []
    for traj in candidates:
        if strategy == Strategy.CYCLIC:
            out.append(cyclic_score(prompt, traj, ctx.subject, ctx.aspect, ctx.caption_seed))
        elif strategy == Strategy.TAG:
            out.append(tag_consistency_score(prompt.resolved_tags, traj, ctx.subject, ctx.aspect))
        elif strategy == Strategy.REGRESSION:
            if ctx.regression is None:
                raise DomainError("regression strategy needs a trained scorer")
            out.append(ctx.regression.score(prompt.resolved_tags, traj, ctx.subject, ctx.aspect))
        else:
            if not ctx.endpoint:
                raise DomainError("remote strategy needs an endpoint")
            caption = inverse_caption(traj, ctx.subject, ctx.aspect, ctx.caption_seed)
            out.append(remote_score(ctx.endpoint, prompt, caption, framing_report(traj, ctx.subject, ctx.aspect),
                                    ctx.timeout))
    return out


def remote_score(endpoint: str, prompt: Prompt | str, caption: str, report, timeout: float = 10.0) -> ScoreRecord:
    text = prompt.text if isinstance(prompt, Prompt) else prompt
    value = post_score(endpoint, remote_request(text, caption, report), timeout)
    return ScoreRecord(Strategy.REMOTE, value, caption)
