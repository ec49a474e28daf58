"""Analytic virtual stage: pinhole projection of the subject proxy.

Image coordinates are normalised to [0, 1]^2 with u to the right and v
downwards.  The subject anchor is the midpoint of the projected feet and
head; ``rho`` is the projected full-body height as a fraction of the image
height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MotionAmbiguous, UnclassifiableFraming
from .geometry import UP, CameraPose, SubjectProxy, Trajectory, as_world, quat_angle, quat_to_matrix
from .taxonomy import DIRECTIONS, SCREENS, ShotTags

DEFAULT_ASPECT = 16 / 9
BORDER = 0.2

# lower edges of the projected-height bands, smallest scale first
SCALE_BANDS = (
    ("extreme_long", 0.0),
    ("long", 0.15),
    ("medium", 0.45),
    ("medium_close_up", 0.75),
    ("close", 1.1),
    ("extreme_close", 2.0),
)
ANGLE_LIMIT = math.radians(10.0)
# sector order for azimuth index round(phi / 45deg) mod 8
_SECTORS = ("front", "left_front", "left", "left_back", "back", "right_back", "right", "right_front")
assert set(_SECTORS) == set(DIRECTIONS)

EPS_T = 0.01
EPS_R = math.radians(0.5)
EPS_F = math.radians(0.2)


@dataclass(frozen=True)
class FrameFraming:
    anchor_uv: tuple[float, float]
    rho: float
    visible: bool
    in_border: bool
    distance: float


@dataclass(frozen=True)
class FramingReport:
    frames: tuple[FrameFraming, ...]
    miss_rate: float

    @property
    def misses(self) -> int:
        return sum((not f.visible) or f.in_border for f in self.frames)


def project_points(positions, matrices, fovs, points, aspect=DEFAULT_ASPECT):
    """Project world points for T cameras.

    ``points`` has shape (T, K, 3).  Returns uv of shape (T, K, 2) and the
    depth in front of each camera, shape (T, K).  Points behind the camera
    are mirrored so that uv stays finite; callers use the depth sign.
    """
    rel = points - positions[:, None, :]
    cam = np.einsum("tji,tkj->tki", matrices, rel)
    depth = -cam[..., 2]
    fy = 0.5 / np.tan(np.asarray(fovs) / 2)
    fx = fy / aspect
    z = np.maximum(np.abs(depth), 1e-12)
    u = 0.5 + fx[:, None] * cam[..., 0] / z
    v = 0.5 - fy[:, None] * cam[..., 1] / z
    return np.stack([u, v], axis=-1), depth


def subject_points(subject: SubjectProxy) -> np.ndarray:
    return np.stack([subject.feet, subject.feet + UP * subject.height])


def framing_arrays(traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT) -> dict:
    world = as_world(traj, subject)
    pts = np.broadcast_to(subject_points(subject), (len(world), 2, 3))
    uv, depth = project_points(world.positions, world.matrices, world.fovs, pts, aspect)
    in_front = np.all(depth > 0, axis=1)
    anchor = uv.mean(axis=1)
    rho = np.where(in_front, np.abs(uv[:, 0, 1] - uv[:, 1, 1]), 0.0)
    inside = np.all((anchor >= 0) & (anchor <= 1), axis=1)
    visible = in_front & inside
    edge = np.any((anchor < BORDER) | (anchor > 1 - BORDER), axis=1)
    in_border = visible & edge
    distance = np.linalg.norm(world.positions - subject.mid, axis=1)
    return {
        "anchor_uv": anchor,
        "rho": rho,
        "visible": visible,
        "in_border": in_border,
        "distance": distance,
    }


def miss_flags(arrays: dict) -> np.ndarray:
    return ~arrays["visible"] | arrays["in_border"]


def project_subject(pose: CameraPose, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT) -> FrameFraming:
    traj = Trajectory(
        np.stack([pose.translation] * 2), np.stack([pose.rotation] * 2), np.array([pose.fov] * 2),
        frame="world",
    )
    a = framing_arrays(traj, subject, aspect)
    return FrameFraming(
        anchor_uv=(float(a["anchor_uv"][0, 0]), float(a["anchor_uv"][0, 1])),
        rho=float(a["rho"][0]),
        visible=bool(a["visible"][0]),
        in_border=bool(a["in_border"][0]),
        distance=float(a["distance"][0]),
    )


def framing_report(traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT) -> FramingReport:
    a = framing_arrays(traj, subject, aspect)
    frames = tuple(
        FrameFraming((float(uv[0]), float(uv[1])), float(r), bool(vis), bool(b), float(d))
        for uv, r, vis, b, d in zip(a["anchor_uv"], a["rho"], a["visible"], a["in_border"], a["distance"])
    )
    return FramingReport(frames, float(miss_flags(a).sum()) / len(frames))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def scale_from_rho(rho: float) -> str:
    name = SCALE_BANDS[0][0]
    for band, lower in SCALE_BANDS:
        if rho >= lower:
            name = band
    return name


def angle_from_elevation(elevation: float) -> str:
    if elevation < -ANGLE_LIMIT:
        return "low"
    if elevation > ANGLE_LIMIT:
        return "high"
    return "eye_level"


def direction_from_azimuth(azimuth: float) -> str:
    return _SECTORS[int(round(azimuth / (math.pi / 4))) % 8]


def screen_from_anchor(u: float, v: float) -> str:
    col = min(max(int(math.floor(u * 3)), 0), 2)
    row = min(max(int(math.floor(v * 3)), 0), 2)
    return SCREENS[3 * row + col]


def _local_geometry(traj: Trajectory, subject: SubjectProxy) -> dict:
    world = as_world(traj, subject)
    basis = subject.basis
    pos = (world.positions - subject.feet) @ basis
    mats = np.einsum("ji,tjk->tik", basis, world.matrices)
    rel = pos - np.array([0.0, subject.height / 2, 0.0])
    horiz = np.hypot(rel[:, 0], rel[:, 2])
    return {
        "pos": pos,
        "mats": mats,
        "rel": rel,
        "azimuth": np.unwrap(np.arctan2(rel[:, 0], rel[:, 2])),
        "elevation": np.arctan2(rel[:, 1], horiz),
        "distance": np.linalg.norm(rel, axis=1),
    }


def classify_motion(traj: Trajectory, subject: SubjectProxy, arrays: dict, geo: dict | None = None) -> str:
    geo = geo or _local_geometry(traj, subject)
    pos, mats = geo["pos"], geo["mats"]
    n = len(pos)
    trans = np.linalg.norm(pos - pos[0], axis=1).max()
    rot = quat_angle(traj.rotations, traj.rotations[0]).max()
    fovs = traj.fovs
    fov_span = fovs.max() - fovs.min()
    fixed = trans < EPS_T

    if fixed and rot < EPS_R and fov_span < EPS_F:
        return "static"
    if fixed and fov_span >= EPS_F:
        return "zoom_in" if fovs[-1] < fovs[0] else "zoom_out"
    if fixed:
        fwd = -mats[:, :, 2]
        yaw = np.unwrap(np.arctan2(-fwd[:, 0], -fwd[:, 2]))
        pitch = np.arcsin(np.clip(fwd[:, 1], -1, 1))
        horizontal = abs(yaw[-1] - yaw[0]) * math.cos(float(np.mean(pitch)))
        vertical = abs(pitch[-1] - pitch[0])
        return "pan" if horizontal >= vertical else "tilt"

    dist = geo["distance"]
    rho = arrays["rho"]
    if fov_span >= EPS_F and abs(dist[-1] - dist[0]) > EPS_T * n and rho[0] > 0:
        drift = np.max(np.abs(rho - rho[0])) / rho[0]
        if drift < 0.01:
            return "dolly_zoom_in" if dist[-1] < dist[0] else "dolly_zoom_out"

    chord = pos[-1] - pos[0]
    length = np.linalg.norm(chord)
    if length >= EPS_T:
        direction = chord / length
        mid = n // 2
        radial = geo["rel"][mid] / np.linalg.norm(geo["rel"][mid])
        if abs(direction @ radial) > 0.8:
            return "push_in" if direction @ radial < 0 else "pull_out"
        right = mats[mid][:, 0].copy()
        right[1] = 0.0
        rn = np.linalg.norm(right)
        if rn > 1e-9:
            right /= rn
            offsets = pos - pos[0]
            perp = offsets - np.outer(offsets @ direction, direction)
            straight = np.linalg.norm(perp, axis=1).max() <= 0.02 * length + EPS_T
            if abs(direction @ right) > 0.8 and straight:
                return "truck_right" if direction @ right > 0 else "truck_left"
        if abs(direction[1]) > 0.8:
            return "boom_up" if direction[1] > 0 else "boom_down"

    sweep = abs(geo["azimuth"][-1] - geo["azimuth"][0])
    drift = np.max(np.abs(dist - dist[0])) / dist[0]
    if sweep > math.radians(10) and drift < 0.05:
        return "rotate"
    raise MotionAmbiguous("no motion rule fired")


def classify_shot_tags(traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT,
                       arrays: dict | None = None) -> ShotTags:
    """Geometric inverse of synthesis; raises when any frame loses the subject."""
    arrays = arrays if arrays is not None else framing_arrays(traj, subject, aspect)
    if not np.all(arrays["visible"]):
        raise UnclassifiableFraming("subject anchor leaves the image")
    static_tags = classify_static_tags(traj, subject, arrays)
    geo = _local_geometry(traj, subject)
    motion = classify_motion(traj, subject, arrays, geo)
    return ShotTags(motion=motion, **static_tags)


def classify_static_tags(traj: Trajectory, subject: SubjectProxy, arrays: dict) -> dict[str, str]:
    """Scale, direction, angle and screen; these never depend on the motion rule."""
    geo = _local_geometry(traj, subject)
    az = float(np.median(geo["azimuth"]))
    u, v = arrays["anchor_uv"].mean(axis=0)
    return {
        "scale": scale_from_rho(float(np.median(arrays["rho"]))),
        "direction": direction_from_azimuth(math.remainder(az, 2 * math.pi)),
        "angle": angle_from_elevation(float(np.median(geo["elevation"]))),
        "screen": screen_from_anchor(float(u), float(v)),
    }


def yaw_pitch_matrices(yaw: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    """Roll-free camera-to-world rotations R = Ry(yaw) Rx(pitch)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    m = np.zeros(np.shape(yaw) + (3, 3))
    m[..., 0, 0] = cy
    m[..., 0, 1] = sy * sp
    m[..., 0, 2] = sy * cp
    m[..., 1, 1] = cp
    m[..., 1, 2] = -sp
    m[..., 2, 0] = -sy
    m[..., 2, 1] = cy * sp
    m[..., 2, 2] = cy * cp
    return m


def yaw_pitch_quats(yaw: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    hy, hp = np.asarray(yaw) / 2, np.asarray(pitch) / 2
    return np.stack(
        [np.cos(hy) * np.cos(hp), np.cos(hy) * np.sin(hp), np.sin(hy) * np.cos(hp), -np.sin(hy) * np.sin(hp)],
        axis=-1,
    )


def matrices_from_quats(q: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q)
