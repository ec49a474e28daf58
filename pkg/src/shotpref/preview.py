"""Wireframe previews written as binary PPM images."""

from __future__ import annotations

import os

import numpy as np

from .geometry import SubjectProxy, Trajectory, UP, as_world
from .stage import BORDER, DEFAULT_ASPECT, framing_arrays, project_points

GRID_COLOR = (70, 70, 70)
BORDER_COLOR = (150, 40, 40)
SUBJECT_COLOR = (240, 240, 240)
ANCHOR_COLOR = (40, 220, 40)
GRID_EXTENT = 6
SEGMENT_SAMPLES = 400


def anchor_pixel(anchor_uv, width: int, height: int) -> tuple[int, int]:
    return int(round(anchor_uv[0] * width)), int(round(anchor_uv[1] * height))


def _segments(subject: SubjectProxy) -> list[tuple[np.ndarray, np.ndarray, tuple[int, int, int]]]:
    segs = []
    basis = subject.basis
    for k in range(-GRID_EXTENT, GRID_EXTENT + 1):
        for a, b in (((k, -GRID_EXTENT), (k, GRID_EXTENT)), ((-GRID_EXTENT, k), (GRID_EXTENT, k))):
            p = subject.feet + basis @ np.array([a[0], 0.0, a[1]], dtype=float)
            q = subject.feet + basis @ np.array([b[0], 0.0, b[1]], dtype=float)
            segs.append((p, q, GRID_COLOR))
    hip = subject.feet + UP * (0.5 * subject.height)
    head = subject.feet + UP * subject.height
    segs.append((subject.feet, hip, SUBJECT_COLOR))
    segs.append((hip, head, SUBJECT_COLOR))
    return segs


def render_frame(position, matrix, fov, subject: SubjectProxy, anchor_uv, width: int = 320, height: int = 180,
                 aspect: float = DEFAULT_ASPECT) -> np.ndarray:
    img = np.zeros((height, width, 3), dtype=np.uint8)
    t = np.linspace(0.0, 1.0, SEGMENT_SAMPLES)[:, None]
    for p, q, color in _segments(subject):
        pts = (p + t * (q - p))[None]
        uv, depth = project_points(position[None], matrix[None], np.array([fov]), pts, aspect)
        uv, depth = uv[0], depth[0]
        ok = depth > 1e-3
        px = np.round(uv[ok, 0] * width).astype(int)
        py = np.round(uv[ok, 1] * height).astype(int)
        inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        img[py[inside], px[inside]] = color
    x0, x1 = int(round(BORDER * width)), int(round((1 - BORDER) * width))
    y0, y1 = int(round(BORDER * height)), int(round((1 - BORDER) * height))
    img[y0, x0:x1 + 1] = BORDER_COLOR
    img[y1, x0:x1 + 1] = BORDER_COLOR
    img[y0:y1 + 1, x0] = BORDER_COLOR
    img[y0:y1 + 1, x1] = BORDER_COLOR
    ax, ay = anchor_pixel(anchor_uv, width, height)
    for dx in range(-3, 4):
        for x, y in ((ax + dx, ay), (ax, ay + dx)):
            if 0 <= x < width and 0 <= y < height:
                img[y, x] = ANCHOR_COLOR
    return img


def encode_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.astype(np.uint8).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def emit_preview(traj: Trajectory, subject: SubjectProxy, aspect: float = DEFAULT_ASPECT,
                 out_dir: str | os.PathLike = ".", resolution: tuple[int, int] = (320, 180)) -> list[str]:
    """Write one ``frame_%04d.ppm`` per frame and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    world = as_world(traj, subject)
    arrays = framing_arrays(world, subject, aspect)
    width, height = resolution
    paths = []
    for i, (pos, mat, fov) in enumerate(zip(world.positions, world.matrices, world.fovs)):
        img = render_frame(pos, mat, fov, subject, arrays["anchor_uv"][i], width, height, aspect)
        path = os.path.join(os.fspath(out_dir), f"frame_{i:04d}.ppm")
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(encode_ppm(img))
        os.replace(tmp, path)
        paths.append(path)
    return paths
