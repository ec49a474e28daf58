"""Camera poses, trajectories and quaternion math.

Conventions: right-handed world with +Y up; a camera looks along its local
-Z with +X to the right.  Quaternions are Hamilton, stored ``(w, x, y, z)``
and map camera coordinates to world coordinates.  Field of view is the
vertical FoV in radians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateLookAt, DomainError, FrameMismatch, LengthMismatch

UP = np.array([0.0, 1.0, 0.0])
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# quaternion helpers (vectorised over leading axes)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DomainError("cannot normalize a zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(m).as_quat(scalar_first=True)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), v)


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])


def quat_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle (radians) between rotations, sign-agnostic."""
    dot = np.abs(np.sum(np.asarray(a) * np.asarray(b), axis=-1))
    return 2.0 * np.arccos(np.clip(dot, 0.0, 1.0))


def slerp(q1: np.ndarray, q2: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation from ``q1`` (t=0) to ``q2`` (t=1)."""
    return slerp_many(np.asarray(q1, float)[None], np.asarray(q2, float)[None], t)[0]


def slerp_many(q1: np.ndarray, q2: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    q1 = np.asarray(q1, dtype=float)
    q2 = np.array(q2, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), q1.shape[:-1])[..., None]
    dot = np.sum(q1 * q2, axis=-1, keepdims=True)
    q2 = np.where(dot < 0, -q2, q2)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-9
    safe = np.where(near, 1.0, sin_theta)
    w1 = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / safe)
    w2 = np.where(near, t, np.sin(t * theta) / safe)
    return quat_normalize(w1 * q1 + w2 * q2)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

class Frame(str, enum.Enum):
    SUBJECT_LOCAL = "subject_local"
    WORLD = "world"


def _check_fov(fov: np.ndarray) -> None:
    if np.any(~np.isfinite(fov)) or np.any(fov <= 0) or np.any(fov >= math.pi):
        raise DomainError("fov must lie in (0, pi)")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CameraPose:
    translation: np.ndarray
    rotation: np.ndarray
    fov: float

    def __post_init__(self):
        t = _frozen(self.translation)
        if t.shape != (3,):
            raise DomainError("translation must be a 3-vector")
        q = _frozen(quat_normalize(self.rotation))
        _check_fov(np.asarray(self.fov))
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "fov", float(self.fov))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def forward(self) -> np.ndarray:
        return -self.matrix[:, 2]


@dataclass(frozen=True, eq=False)
class SubjectProxy:
    feet: np.ndarray = field(default_factory=lambda: np.zeros(3))
    height: float = 1.7
    facing: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if not self.height > 0:
            raise DomainError("subject height must be positive")
        facing = np.asarray(self.facing, dtype=float)
        n = np.linalg.norm(facing)
        if n < 1e-12 or abs(facing @ UP) > 1e-9 * n:
            raise DomainError("facing must be a non-zero horizontal vector")
        object.__setattr__(self, "feet", _frozen(self.feet))
        object.__setattr__(self, "facing", _frozen(facing / n))
        object.__setattr__(self, "height", float(self.height))

    @property
    def basis(self) -> np.ndarray:
        """Columns are the subject-local X, Y, Z axes expressed in world."""
        x = np.cross(UP, self.facing)
        return np.stack([x, UP, self.facing], axis=1)

    @property
    def rotation(self) -> np.ndarray:
        return quat_from_matrix(self.basis)

    @property
    def mid(self) -> np.ndarray:
        return self.feet + UP * (self.height / 2)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A timed pose sequence stored as parallel arrays."""

    positions: np.ndarray
    rotations: np.ndarray
    fovs: np.ndarray
    fps: float = 10.0
    frame: Frame = Frame.SUBJECT_LOCAL
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = _frozen(self.positions)
        q = _frozen(quat_normalize(self.rotations))
        f = _frozen(self.fovs)
        if p.ndim != 2 or p.shape[1] != 3 or len(p) < 2:
            raise DomainError("positions must have shape (T, 3) with T >= 2")
        if q.shape != (len(p), 4) or f.shape != (len(p),):
            raise DomainError("rotations/fovs must match the number of positions")
        _check_fov(f)
        if not self.fps > 0:
            raise DomainError("fps must be positive")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "rotations", q)
        object.__setattr__(self, "fovs", f)
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "frame", Frame(self.frame))

    @classmethod
    def from_poses(cls, poses: Sequence[CameraPose], fps: float = 10.0,
                   frame: Frame = Frame.SUBJECT_LOCAL, meta: dict | None = None) -> "Trajectory":
        return cls(
            np.stack([p.translation for p in poses]),
            np.stack([p.rotation for p in poses]),
            np.array([p.fov for p in poses]),
            fps=fps, frame=frame, meta=dict(meta or {}),
        )

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def poses(self) -> list[CameraPose]:
        return [CameraPose(p, q, f) for p, q, f in zip(self.positions, self.rotations, self.fovs)]

    @property
    def matrices(self) -> np.ndarray:
        return quat_to_matrix(self.rotations)

    def replace(self, **changes) -> "Trajectory":
        kw = dict(positions=self.positions, rotations=self.rotations, fovs=self.fovs,
                  fps=self.fps, frame=self.frame, meta=self.meta)
        kw.update(changes)
        return Trajectory(**kw)

    def allclose(self, other: "Trajectory", atol: float = 1e-9) -> bool:
        if len(self) != len(other) or self.frame != other.frame:
            return False
        dots = np.abs(np.sum(self.rotations * other.rotations, axis=1))
        return (np.allclose(self.positions, other.positions, atol=atol)
                and np.allclose(dots, 1.0, atol=atol)
                and np.allclose(self.fovs, other.fovs, atol=atol)
                and abs(self.fps - other.fps) <= atol)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def trajectory_interpolate(a: Trajectory, b: Trajectory, alpha: float) -> Trajectory:
    """Blend two trajectories frame by frame; ``alpha=1`` returns ``a``."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    if len(a) != len(b) or a.fps != b.fps:
        raise LengthMismatch("trajectories differ in length or fps")
    if a.frame != b.frame:
        raise FrameMismatch("trajectories are expressed in different frames")
    pos = alpha * a.positions + (1 - alpha) * b.positions
    fov = alpha * a.fovs + (1 - alpha) * b.fovs
    rot = slerp_many(a.rotations, b.rotations, 1.0 - alpha)
    return Trajectory(pos, rot, fov, fps=a.fps, frame=a.frame, meta={"alpha": float(alpha)})


def dolly_zoom_distance(d1: float, f1: float, f2: float) -> float:
    """Distance that keeps the subject's projected size when FoV goes f1 -> f2."""
    if not d1 > 0:
        raise DomainError("d1 must be positive")
    for f in (f1, f2):
        if not 0 < f < math.pi:
            raise DomainError("field of view must lie in (0, pi)")
    return d1 * math.tan(f1 / 2) / math.tan(f2 / 2)


def look_at_matrix(position: np.ndarray, target: np.ndarray, up: np.ndarray = UP) -> np.ndarray:
    back = np.asarray(position, float) - np.asarray(target, float)
    n = np.linalg.norm(back)
    if n < 1e-12:
        raise DegenerateLookAt("position coincides with target")
    back = back / n
    right = np.cross(up, back)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise DegenerateLookAt("view direction is parallel to up")
    right = right / rn
    return np.stack([right, np.cross(back, right), back], axis=1)


def look_at_pose(position, target, up=UP, fov: float = math.radians(50)) -> CameraPose:
    m = look_at_matrix(position, target, np.asarray(up, float))
    return CameraPose(np.asarray(position, float), quat_from_matrix(m), fov)


def to_world_frame(traj: Trajectory, subject: SubjectProxy) -> Trajectory:
    if traj.frame != Frame.SUBJECT_LOCAL:
        raise FrameMismatch("trajectory is already in the world frame")
    basis = subject.basis
    pos = traj.positions @ basis.T + subject.feet
    rot = quat_mul(np.broadcast_to(subject.rotation, traj.rotations.shape), traj.rotations)
    return traj.replace(positions=pos, rotations=rot, frame=Frame.WORLD)


def to_local_frame(traj: Trajectory, subject: SubjectProxy) -> Trajectory:
    if traj.frame != Frame.WORLD:
        raise FrameMismatch("trajectory is already subject-local")
    basis = subject.basis
    pos = (traj.positions - subject.feet) @ basis
    inv = quat_conj(subject.rotation)
    rot = quat_mul(np.broadcast_to(inv, traj.rotations.shape), traj.rotations)
    return traj.replace(positions=pos, rotations=rot, frame=Frame.SUBJECT_LOCAL)


def as_world(traj: Trajectory, subject: SubjectProxy) -> Trajectory:
    return traj if traj.frame == Frame.WORLD else to_world_frame(traj, subject)


def as_local(traj: Trajectory, subject: SubjectProxy) -> Trajectory:
    return traj if traj.frame == Frame.SUBJECT_LOCAL else to_local_frame(traj, subject)
