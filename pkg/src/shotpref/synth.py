"""Procedural synthesis of tagged camera trajectories.

Every trajectory is built in the subject-local frame around a mid-shot
configuration (distance, azimuth, elevation, field of view and a screen
target for the subject anchor).  The motion schedule is then applied around
that configuration with ``s = t - 0.5`` running from -0.5 to 0.5, so the
middle of the shot realises the sampled targets.  Orientation is always
solved so that the anchor lands exactly on its screen target.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfeasibleTags
from .geometry import Frame, SubjectProxy, Trajectory, dolly_zoom_distance
from .stage import DEFAULT_ASPECT, framing_arrays, miss_flags, project_points, yaw_pitch_matrices, yaw_pitch_quats
from .storage import write_jsonl
from .taxonomy import DIMENSIONS, VOCAB, ShotTags, caption_from_tags, sample_tags

# projected-height targets: (band low, band high); synthesis aims at the midpoint
RHO_BANDS = {
    "extreme_long": (0.0, 0.15),
    "long": (0.15, 0.45),
    "medium": (0.45, 0.75),
    "medium_close_up": (0.75, 1.1),
    "close": (1.1, 2.0),
    "extreme_close": (2.0, 3.0),
}
FOV_RANGES_DEG = {
    "extreme_close": (28.0, 40.0),
    "close": (30.0, 45.0),
    "medium_close_up": (35.0, 50.0),
    "medium": (40.0, 55.0),
    "long": (50.0, 65.0),
    "extreme_long": (95.0, 105.0),
}
AZIMUTH_DEG = {
    "front": 0.0, "left_front": 45.0, "left": 90.0, "left_back": 135.0,
    "back": 180.0, "right_back": -135.0, "right": -90.0, "right_front": -45.0,
}
ELEVATION_DEG = {"high": 25.0, "eye_level": 0.0, "low": -25.0}
SCREEN_UV = {"left": 0.8 / 3, "center": 0.5, "right": 2.2 / 3}
SCREEN_ROW = {"up": 0.8 / 3, "middle": 0.5, "bottom": 2.2 / 3}

RHO_JITTER = 0.3
AZIMUTH_JITTER = math.radians(10.0)
ELEVATION_JITTER = math.radians(5.0)

PUSH_RATIO = 1.4
ZOOM_RATIO = 1.4
DOLLY_RATIO = 1.6
TRUCK_FRACTION = 0.4
BOOM_FRACTION = 0.3
ORBIT_SWEEP = math.radians(30.0)
PAN_FRACTION = 0.7
MAX_DISTANCE = 9.0
MAX_RETRIES = 32


def screen_target(screen: str) -> tuple[float, float]:
    row, col = screen.split("_")
    return SCREEN_UV[col], SCREEN_ROW[row]


def _direction(azimuth, elevation) -> np.ndarray:
    azimuth, elevation = np.broadcast_arrays(np.asarray(azimuth, float), np.asarray(elevation, float))
    ce = np.cos(elevation)
    return np.stack([ce * np.sin(azimuth), np.sin(elevation), ce * np.cos(azimuth)], axis=-1)


class _Solver:
    """Vectorised aim and distance solves for one subject height and aspect."""

    def __init__(self, height: float, aspect: float):
        self.height = height
        self.aspect = aspect
        self.mid = np.array([0.0, height / 2, 0.0])
        self.points = np.array([[0.0, 0.0, 0.0], [0.0, height, 0.0]])

    def measure(self, pos, yaw, pitch, fov):
        pts = np.broadcast_to(self.points, (len(pos), 2, 3))
        uv, depth = project_points(pos, yaw_pitch_matrices(yaw, pitch), fov, pts, self.aspect)
        return uv.mean(axis=1), np.abs(uv[:, 0, 1] - uv[:, 1, 1]), depth

    def aim(self, pos, fov, target, init=None, iters: int = 30):
        """Roll-free yaw/pitch placing the anchor on ``target`` for every frame."""
        if init is None:
            d = self.mid - pos
            yaw = np.arctan2(-d[:, 0], -d[:, 2])
            pitch = np.arctan2(d[:, 1], np.hypot(d[:, 0], d[:, 2]))
            fy = 0.5 / np.tan(fov / 2)
            yaw = yaw + np.arctan((target[:, 0] - 0.5) * self.aspect / fy)
            pitch = pitch + np.arctan((target[:, 1] - 0.5) / fy)
        else:
            yaw, pitch = (np.array(a, dtype=float) for a in init)
        h = 1e-7
        for _ in range(iters):
            anchor, _, _ = self.measure(pos, yaw, pitch, fov)
            r = anchor - target
            if np.max(np.abs(r)) < 1e-13:
                break
            jy = (self.measure(pos, yaw + h, pitch, fov)[0] - anchor) / h
            jp = (self.measure(pos, yaw, pitch + h, fov)[0] - anchor) / h
            jac = np.stack([jy, jp], axis=-1)
            step = np.linalg.solve(jac, r[..., None])[..., 0]
            yaw = yaw - step[:, 0]
            pitch = pitch - step[:, 1]
        anchor, rho, depth = self.measure(pos, yaw, pitch, fov)
        if not np.all(np.isfinite(anchor)) or np.max(np.abs(anchor - target)) > 1e-9 or np.any(depth <= 0):
            raise InfeasibleTags("anchor target cannot be reached")
        return yaw, pitch, rho

    def place(self, direction, fov, target, rho_target, d0, iters: int = 60):
        """Distances along ``direction`` from the subject mid-height giving ``rho_target``."""
        d = np.array(d0, dtype=float)
        init = None
        for _ in range(iters):
            pos = self.mid + d[:, None] * direction
            yaw, pitch, rho = self.aim(pos, fov, target, init)
            ratio = rho / rho_target
            if np.max(np.abs(ratio - 1)) < 1e-12:
                break
            d = d * ratio
            init = (yaw, pitch)
        return d, pos, yaw, pitch, rho


@dataclass(frozen=True)
class _Config:
    azimuth: float
    elevation: float
    rho: float
    fov: float
    target: tuple[float, float]
    sign: float


def _sample_config(tags: ShotTags, rng: np.random.Generator, jitter: float) -> _Config:
    lo, hi = RHO_BANDS[tags.scale]
    half = (hi - lo) / 2
    rho = (lo + hi) / 2 + jitter * rng.uniform(-RHO_JITTER, RHO_JITTER) * half
    if tags.scale == "extreme_close":
        rho = 2.5 + jitter * rng.uniform(-RHO_JITTER, RHO_JITTER) * half
    azimuth = math.radians(AZIMUTH_DEG[tags.direction]) + jitter * rng.uniform(-AZIMUTH_JITTER, AZIMUTH_JITTER)
    elevation = math.radians(ELEVATION_DEG[tags.angle]) + jitter * rng.uniform(-ELEVATION_JITTER, ELEVATION_JITTER)
    fov = math.radians(rng.uniform(*FOV_RANGES_DEG[tags.scale]))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return _Config(azimuth, elevation, rho, fov, screen_target(tags.screen), sign)


def _build(tags: ShotTags, cfg: _Config, n: int, solver: _Solver):
    s = np.linspace(-0.5, 0.5, n)
    ones = np.ones(n)
    target = np.tile(cfg.target, (n, 1))
    w_mid = _direction(cfg.azimuth, cfg.elevation)[None]
    fov_mid = np.array([cfg.fov])
    d0 = solver.height / (2 * cfg.rho * math.tan(cfg.fov / 2))
    d_mid, c_mid, yaw_mid, _, rho_mid = solver.place(w_mid, fov_mid, target[:1], cfg.rho, np.array([d0]))
    if d_mid[0] > MAX_DISTANCE:
        d_mid = np.array([MAX_DISTANCE])
        c_mid = solver.mid + MAX_DISTANCE * w_mid
        _, _, rho_mid = solver.aim(c_mid, fov_mid, target[:1])
    d_mid, rho_mid = float(d_mid[0]), float(rho_mid[0])
    fov = cfg.fov * ones
    motion = tags.motion

    if motion in ("static", "pan", "tilt", "zoom_in", "zoom_out"):
        pos = np.repeat(c_mid, n, axis=0)
        if motion == "pan" or motion == "tilt":
            axis = 0 if motion == "pan" else 1
            c = cfg.target[axis]
            margin = min(c - 0.2, 0.8 - c)
            target[:, axis] = c + cfg.sign * 2 * PAN_FRACTION * margin * s
        elif motion.startswith("zoom"):
            k = -1.0 if motion == "zoom_in" else 1.0
            fov = 2 * np.arctan(math.tan(cfg.fov / 2) * ZOOM_RATIO ** (k * s))
    elif motion in ("push_in", "pull_out"):
        k = -1.0 if motion == "push_in" else 1.0
        pos = solver.mid + (d_mid * PUSH_RATIO ** (k * s))[:, None] * w_mid
    elif motion in ("dolly_zoom_in", "dolly_zoom_out"):
        k = 1.0 if motion == "dolly_zoom_in" else -1.0
        fov = 2 * np.arctan(math.tan(cfg.fov / 2) * DOLLY_RATIO ** (k * s))
        seed = np.array([dolly_zoom_distance(d_mid, cfg.fov, f) for f in fov])
        _, pos, _, _, _ = solver.place(np.repeat(w_mid, n, axis=0), fov, target, rho_mid, seed)
    elif motion in ("truck_left", "truck_right"):
        k = 1.0 if motion == "truck_right" else -1.0
        right = np.array([math.cos(yaw_mid[0]), 0.0, -math.sin(yaw_mid[0])])
        pos = c_mid + (k * TRUCK_FRACTION * d_mid * s)[:, None] * right
    elif motion in ("boom_up", "boom_down"):
        k = 1.0 if motion == "boom_up" else -1.0
        pos = c_mid + (k * BOOM_FRACTION * d_mid * s)[:, None] * np.array([0.0, 1.0, 0.0])
    elif motion == "rotate":
        az = cfg.azimuth + cfg.sign * ORBIT_SWEEP * s
        pos = solver.mid + d_mid * _direction(az, cfg.elevation * ones)
    else:
        raise DomainError(f"unknown motion {motion!r}")

    yaw, pitch, _ = solver.aim(pos, fov, target)
    return pos, yaw_pitch_quats(yaw, pitch), fov


def synth_trajectory(tags: ShotTags, T: int = 30, fps: float = 10.0, subject: SubjectProxy | None = None,
                     rng_seed: int = 0, jitter: float = 1.0, aspect: float = DEFAULT_ASPECT) -> Trajectory:
    """Subject-local trajectory realising ``tags``; every frame keeps the anchor off the border."""
    if T < 2:
        raise DomainError("T must be at least 2")
    if not tags.is_complete:
        raise DomainError("synthesis needs every tag dimension")
    subject = subject or SubjectProxy()
    solver = _Solver(subject.height, aspect)
    local = SubjectProxy(height=subject.height)
    rng = np.random.default_rng(rng_seed)
    for _ in range(MAX_RETRIES):
        cfg = _sample_config(tags, rng, jitter)
        try:
            pos, quats, fov = _build(tags, cfg, T, solver)
        except (InfeasibleTags, np.linalg.LinAlgError):
            continue
        traj = Trajectory(pos, quats, fov, fps=fps, frame=Frame.SUBJECT_LOCAL, meta={"tags": tags.to_dict()})
        if not miss_flags(framing_arrays(traj, local, aspect)).any():
            return traj
    raise InfeasibleTags(f"no feasible configuration for {tags}")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    count: int
    frames_per_traj: int = 30
    fps: float = 10.0
    seed: int = 0
    tag_distribution: dict | None = None
    jitter: float = 1.0
    subject_height: float = 1.7
    aspect: float = DEFAULT_ASPECT

    def __post_init__(self):
        if self.count < 0:
            raise DomainError("count must be non-negative")
        for dim, w in (self.tag_distribution or {}).items():
            if dim not in VOCAB or len(w) != len(VOCAB[dim]):
                raise DomainError(f"bad weights for dimension {dim!r}")
            if min(w) < 0 or sum(w) <= 0:
                raise DomainError(f"weights for {dim!r} must be non-negative with positive sum")


def record_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0] >> 1)


def trajectory_rows(traj: Trajectory, digits: int = 10) -> list[list[float]]:
    data = np.hstack([traj.positions, traj.rotations, traj.fovs[:, None]])
    return [[round(float(v), digits) for v in row] for row in data]


def trajectory_from_rows(rows, fps: float, frame: Frame = Frame.SUBJECT_LOCAL) -> Trajectory:
    data = np.asarray(rows, dtype=float)
    return Trajectory(data[:, :3], data[:, 3:7], data[:, 7], fps=fps, frame=frame)


def synth_record(spec: DatasetSpec, index: int) -> dict:
    seed = record_seed(spec.seed, index)
    rng = np.random.default_rng(seed)
    tags = sample_tags(rng, spec.tag_distribution)
    caption = caption_from_tags(tags, int(rng.integers(2**31)))
    traj = synth_trajectory(
        tags, spec.frames_per_traj, spec.fps, SubjectProxy(height=spec.subject_height),
        rng_seed=int(rng.integers(2**63)), jitter=spec.jitter, aspect=spec.aspect,
    )
    return {
        "tags": tags.to_dict(),
        "caption": caption,
        "trajectory": trajectory_rows(traj),
        "fps": spec.fps,
        "seed": seed,
    }


def synth_dataset(spec: DatasetSpec, path: str | os.PathLike, start: int = 0) -> str:
    """Write ``spec.count`` JSONL records; byte-identical for identical specs."""
    path = os.fspath(path)
    write_jsonl(path, (synth_record(spec, i) for i in range(start, start + spec.count)))
    return path


@dataclass
class Sample:
    tags: ShotTags
    caption: str
    trajectory: Trajectory
    seed: int
    extra: dict = field(default_factory=dict)


def load_dataset(path: str | os.PathLike) -> list[Sample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            traj = trajectory_from_rows(rec["trajectory"], rec["fps"])
            out.append(Sample(ShotTags.from_dict(rec["tags"]), rec["caption"], traj, rec["seed"]))
    return out


def tag_frequencies(samples: list[Sample]) -> dict[str, dict[str, int]]:
    counts = {d: {v: 0 for v in VOCAB[d]} for d in DIMENSIONS}
    for s in samples:
        for d, v in s.tags.specified.items():
            counts[d][v] += 1
    return counts
