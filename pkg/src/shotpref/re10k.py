"""RealEstate10k-style camera files.

Layout: an optional first line holding a source URL, then one line per
frame with 19 space-separated fields::

    timestamp_us fx fy cx cy 0 0 r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2

Intrinsics are normalised by image size.  Extrinsics are world-to-camera in
the OpenCV camera convention (x right, y down, looking along +Z).
"""

from __future__ import annotations

import math
import re

import numpy as np

from .errors import FrameMismatch, ParseError
from .geometry import Frame, Trajectory, quat_from_matrix

N_FIELDS = 19
_CV_FLIP = np.diag([1.0, -1.0, -1.0])
_URL_PREFIX = "synthetic://shotpref/trajectory"


def focal_from_fov(fov: float | np.ndarray) -> float | np.ndarray:
    """Normalised vertical focal length fy = 1 / (2 tan(fov/2))."""
    return 0.5 / np.tan(np.asarray(fov) / 2)


def fov_from_focal(fy: float | np.ndarray) -> float | np.ndarray:
    return 2.0 * np.arctan(0.5 / np.asarray(fy))


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_re10k(traj: Trajectory, image_aspect: float = 16 / 9) -> str:
    if traj.frame != Frame.WORLD:
        raise FrameMismatch("only world-frame trajectories can be serialized")
    lines = [f"{_URL_PREFIX}?fps={_fmt(traj.fps)}"]
    fys = focal_from_fov(traj.fovs)
    for i, (pos, rot, fy) in enumerate(zip(traj.positions, traj.matrices, fys)):
        r_cv = _CV_FLIP @ rot.T
        t_cv = -r_cv @ pos
        ext = np.hstack([r_cv, t_cv[:, None]]).ravel()
        ts = round(i * 1e6 / traj.fps)
        fields = [str(ts), _fmt(fy / image_aspect), _fmt(fy), "0.5", "0.5", "0", "0"]
        fields += [_fmt(v) for v in ext]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def parse_re10k(text: str) -> Trajectory:
    fps = None
    rows = []
    stamps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and not line[0].isdigit():
            m = re.search(r"[?&]fps=([0-9.eE+-]+)", line)
            if m:
                fps = float(m.group(1))
            continue
        parts = line.split()
        if len(parts) != N_FIELDS:
            raise ParseError(f"expected {N_FIELDS} fields, got {len(parts)}", lineno)
        try:
            stamps.append(int(parts[0]))
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in vals) or vals[1] <= 0:
            raise ParseError("non-finite value or non-positive focal length", lineno)
        rows.append(vals)
    if len(rows) < 2:
        raise ParseError("need at least two frame lines")
    data = np.array(rows)
    if fps is None:
        step = np.median(np.diff(stamps))
        if step <= 0:
            raise ParseError("timestamps must increase")
        fps = round(1e6 / step, 3)
    ext = data[:, 6:].reshape(-1, 3, 4)
    r_cv, t_cv = ext[:, :, :3], ext[:, :, 3]
    rot = np.transpose(_CV_FLIP @ r_cv, (0, 2, 1))
    pos = -np.einsum("nji,nj->ni", r_cv, t_cv)
    return Trajectory(pos, quat_from_matrix(rot), fov_from_focal(data[:, 1]), fps=fps, frame=Frame.WORLD)
