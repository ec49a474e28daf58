"""Trajectory features and distribution metrics (Frechet distance, PRDC, framing miss rate)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .embed import embed_text
from .errors import TooFewSamples
from .geometry import SubjectProxy, Trajectory, as_local, quat_angle
from .scoring import inverse_caption
from .stage import DEFAULT_ASPECT, framing_arrays, miss_flags

FEATURE_NAMES = (
    "vel_mean_x", "vel_mean_y", "vel_mean_z", "vel_std_x", "vel_std_y", "vel_std_z",
    "speed_mean", "speed_std", "ang_speed_mean", "ang_speed_std",
    "fov_mean", "fov_std", "fov_range", "dist_mean", "dist_std", "path_length", "net_displacement",
)
SHRINKAGE = 1e-6


def trajectory_features(traj: Trajectory, subject: SubjectProxy) -> np.ndarray:
    """17 motion statistics computed in the subject-local frame."""
    local = as_local(traj, subject)
    pos = local.positions
    steps = np.diff(pos, axis=0)
    vel = steps * local.fps
    speed = np.linalg.norm(vel, axis=1)
    ang = quat_angle(local.rotations[1:], local.rotations[:-1]) * local.fps
    dist = np.linalg.norm(pos - np.array([0.0, subject.height / 2, 0.0]), axis=1)
    fov = local.fovs
    return np.concatenate([
        vel.mean(axis=0), vel.std(axis=0),
        [speed.mean(), speed.std(), ang.mean(), ang.std()],
        [fov.mean(), fov.std(), fov.max() - fov.min()],
        [dist.mean(), dist.std()],
        [np.linalg.norm(steps, axis=1).sum(), np.linalg.norm(pos[-1] - pos[0])],
    ])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a: np.ndarray, b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with a small ridge on both covariances."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if len(a) < 3 or len(b) < 3:
        raise TooFewSamples("need at least 3 samples per set")
    dim = a.shape[1]
    sa = np.atleast_2d(np.cov(a, rowvar=False)) + SHRINKAGE * np.eye(dim)
    sb = np.atleast_2d(np.cov(b, rowvar=False)) + SHRINKAGE * np.eye(dim)
    root_a = _psd_sqrt(sa)
    inner = np.linalg.eigvalsh(root_a @ sb @ root_a)
    cross = np.sqrt(np.clip(inner, 0, None)).sum()
    gap = a.mean(axis=0) - b.mean(axis=0)
    value = float(gap @ gap + np.trace(sa) + np.trace(sb) - 2 * cross)
    return max(value, 0.0)


def standardize(a: np.ndarray, ref: np.ndarray) -> np.ndarray:
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (np.asarray(a, dtype=float) - mean) / std


def _kth_radius(x: np.ndarray, k: int) -> np.ndarray:
    d = cdist(x, x)
    return np.sort(d, axis=1)[:, k]


def prdc(a: np.ndarray, b: np.ndarray, k: int = 3, standardized: bool = True) -> tuple[float, float, float, float]:
    """Precision, recall, density, coverage of generated ``a`` against real ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) <= k or len(b) <= k:
        raise TooFewSamples(f"need more than k={k} samples per set")
    if standardized:
        a, b = standardize(a, b), standardize(b, b)
    rb = _kth_radius(b, k)
    ra = _kth_radius(a, k)
    d_ab = cdist(a, b)
    inside_b = d_ab <= rb[None, :]
    precision = float(inside_b.any(axis=1).mean())
    recall = float((d_ab <= ra[:, None]).any(axis=0).mean())
    density = float(inside_b.sum(axis=1).mean() / k)
    coverage = float((d_ab.min(axis=0) <= rb).mean())
    return precision, recall, density, coverage


@dataclass(frozen=True)
class EvalReport:
    fcd: float
    clatr_score_sub: float
    precision: float
    recall: float
    density: float
    coverage: float
    mis_rate_mean: float

    def to_dict(self) -> dict:
        return asdict(self)


def mis_rate(trajs: Sequence[Trajectory], subject: SubjectProxy, aspect: float = DEFAULT_ASPECT) -> float:
    return float(np.mean([miss_flags(framing_arrays(t, subject, aspect)).mean() for t in trajs]))


def mean_cyclic(texts: Sequence[str], trajs: Sequence[Trajectory], subject: SubjectProxy,
                aspect: float = DEFAULT_ASPECT) -> float:
    cache: dict[str, np.ndarray] = {}

    def emb(s: str) -> np.ndarray:
        if s not in cache:
            cache[s] = embed_text(s).vector
        return cache[s]

    vals = [float(emb(p) @ emb(inverse_caption(t, subject, aspect))) for p, t in zip(texts, trajs)]
    return float(np.mean(vals))


def evaluate_trajectories(generated: Sequence[Trajectory], texts: Sequence[str], reference: Sequence[Trajectory],
                          subject: SubjectProxy, aspect: float = DEFAULT_ASPECT, k: int = 3) -> EvalReport:
    """All report fields for a generated set against a reference set."""
    if len(reference) == 0:
        raise TooFewSamples("reference set is empty")
    fg = np.stack([trajectory_features(t, subject) for t in generated])
    fr = np.stack([trajectory_features(t, subject) for t in reference])
    fcd = frechet_distance(standardize(fg, fr), standardize(fr, fr))
    p, r, d, c = prdc(fg, fr, k)
    return EvalReport(
        fcd=fcd,
        clatr_score_sub=100.0 * mean_cyclic(texts, generated, subject, aspect),
        precision=p, recall=r, density=d, coverage=c,
        mis_rate_mean=mis_rate(generated, subject, aspect),
    )
