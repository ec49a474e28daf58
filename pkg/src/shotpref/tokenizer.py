"""Trajectory tokenizer.

Layout: ``BOS, motion, scale, direction, angle, screen, (x y z yaw pitch roll
fov) * T, EOS``.  Frame 0 is quantised on absolute levels and every later
frame on per-frame deltas taken from the true trajectory, so each delta is
off by at most half a level and the reconstruction error grows at most
linearly with the frame index.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BadTokenRole, ClampWarning, LengthError
from .geometry import Frame, Trajectory
from .taxonomy import DIMENSIONS, N_TAG_VALUES, TAG_INDEX, VOCAB, ShotTags

CHANNELS = ("x", "y", "z", "yaw", "pitch", "roll", "fov")
N_CHANNELS = len(CHANNELS)
PERIODIC = (False, False, False, True, False, True, False)
N_CONDITION = 1 + len(DIMENSIONS)

ROLE_BOS = 0
ROLE_TAG0 = 1
ROLE_CHANNEL = 1 + len(DIMENSIONS)
ROLE_EOS = ROLE_CHANNEL + 1
N_ROLES = ROLE_EOS + 1

MIN_FOV = math.radians(1.0)
MAX_FOV = math.radians(170.0)


def _sym(r: float, bins: int) -> tuple[float, float]:
    # symmetric range trimmed so that zero is one of the levels
    return (-r, r * (bins / 2 - 1) / (bins / 2))


@dataclass(frozen=True)
class TokenSpec:
    bins: int = 64
    abs_ranges: tuple = (
        _sym(12.0, 64), (-6.0, 8.0), _sym(12.0, 64),
        _sym(math.pi, 64), _sym(math.pi / 2, 64), _sym(math.pi, 64),
        (math.radians(10.0), math.radians(120.0)),
    )
    delta_ranges: tuple = (
        _sym(0.25, 64), _sym(0.25, 64), _sym(0.25, 64),
        _sym(math.radians(6.0), 64), _sym(math.radians(6.0), 64), _sym(math.radians(6.0), 64),
        _sym(math.radians(2.0), 64),
    )

    def __post_init__(self):
        for lo, hi in self.abs_ranges + self.delta_ranges:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError("token ranges must be finite with min < max")

    # vocabulary layout
    @property
    def tag_offset(self) -> int:
        return self.bins

    @property
    def unspecified_offset(self) -> int:
        return self.bins + N_TAG_VALUES

    @property
    def bos(self) -> int:
        return self.unspecified_offset + len(DIMENSIONS)

    @property
    def eos(self) -> int:
        return self.bos + 1

    @property
    def vocab_size(self) -> int:
        return self.eos + 1

    def seq_len(self, T: int) -> int:
        return N_CONDITION + N_CHANNELS * T + 1

    def frames_from_len(self, n: int) -> int:
        body = n - N_CONDITION - 1
        if body < 2 * N_CHANNELS or body % N_CHANNELS:
            raise LengthError(f"token sequence of length {n} does not hold whole frames")
        return body // N_CHANNELS

    def role_masks(self) -> np.ndarray:
        """Boolean (N_ROLES, vocab) table of the tokens each role may take."""
        m = np.zeros((N_ROLES, self.vocab_size), dtype=bool)
        m[ROLE_BOS, self.bos] = True
        for k, dim in enumerate(DIMENSIONS):
            for v in VOCAB[dim]:
                m[ROLE_TAG0 + k, self.tag_offset + TAG_INDEX[(dim, v)]] = True
            m[ROLE_TAG0 + k, self.unspecified_offset + k] = True
        m[ROLE_CHANNEL, : self.bins] = True
        m[ROLE_EOS, self.eos] = True
        return m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TokenSpec":
        return cls(bins=d["bins"], abs_ranges=tuple(tuple(r) for r in d["abs_ranges"]),
                   delta_ranges=tuple(tuple(r) for r in d["delta_ranges"]))


def position_roles(T: int) -> np.ndarray:
    roles = np.full(N_CONDITION + N_CHANNELS * T + 1, ROLE_CHANNEL, dtype=np.int64)
    roles[0] = ROLE_BOS
    roles[1:N_CONDITION] = np.arange(ROLE_TAG0, ROLE_TAG0 + len(DIMENSIONS))
    roles[-1] = ROLE_EOS
    return roles


@dataclass(frozen=True, eq=False)
class TokenizedTrajectory:
    tokens: np.ndarray
    clamped: int = 0

    def __post_init__(self):
        t = np.array(self.tokens, dtype=np.int64)
        t.setflags(write=False)
        object.__setattr__(self, "tokens", t)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenizedTrajectory) and np.array_equal(self.tokens, other.tokens)

    def __hash__(self) -> int:
        return hash(self.tokens.tobytes())

    @property
    def frames(self) -> int:
        return (len(self.tokens) - N_CONDITION - 1) // N_CHANNELS

    def tolist(self) -> list[int]:
        return [int(t) for t in self.tokens]


def _levels(lo: float, hi: float, bins: int) -> float:
    return (hi - lo) / (bins - 1)


def quantize(values: np.ndarray, lo: float, hi: float, bins: int, periodic: bool = False) -> tuple[np.ndarray, int]:
    step = _levels(lo, hi, bins)
    idx = np.round((np.asarray(values, dtype=float) - lo) / step)
    if periodic and abs(bins * step - 2 * math.pi) < 1e-9:
        return (idx.astype(np.int64) % bins), 0
    clamped = int(np.sum((idx < 0) | (idx > bins - 1)))
    return np.clip(idx, 0, bins - 1).astype(np.int64), clamped


def dequantize(idx: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    return lo + np.asarray(idx, dtype=float) * _levels(lo, hi, bins)


def wrap_angle(a: np.ndarray) -> np.ndarray:
    return np.remainder(np.asarray(a) + math.pi, 2 * math.pi) - math.pi


def trajectory_channels(traj: Trajectory) -> np.ndarray:
    """(T, 7) array of x, y, z, yaw, pitch, roll, fov with intrinsic Y-X-Z angles."""
    q = traj.rotations
    euler = Rotation.from_quat(np.column_stack([q[:, 1:], q[:, :1]])).as_euler("YXZ")
    return np.column_stack([traj.positions, euler, traj.fovs])


def channels_to_trajectory(ch: np.ndarray, fps: float = 10.0) -> Trajectory:
    xyzw = Rotation.from_euler("YXZ", ch[:, 3:6]).as_quat()
    quats = np.column_stack([xyzw[:, 3:], xyzw[:, :3]])
    fovs = np.clip(ch[:, 6], MIN_FOV, MAX_FOV)
    return Trajectory(ch[:, :3], quats, fovs, fps=fps, frame=Frame.SUBJECT_LOCAL)


def tag_tokens(tags: ShotTags | None, spec: TokenSpec) -> list[int]:
    out = []
    for k, dim in enumerate(DIMENSIONS):
        v = getattr(tags, dim) if tags is not None else None
        out.append(spec.unspecified_offset + k if v is None else spec.tag_offset + TAG_INDEX[(dim, v)])
    return out


def tags_from_tokens(tokens, spec: TokenSpec) -> ShotTags:
    inv = {i: key for key, i in TAG_INDEX.items()}
    values = {}
    for k, dim in enumerate(DIMENSIONS):
        t = int(tokens[1 + k])
        if spec.tag_offset <= t < spec.unspecified_offset:
            values[dim] = inv[t - spec.tag_offset][1]
    return ShotTags(**values)


def channel_tokens(ch: np.ndarray, spec: TokenSpec) -> tuple[np.ndarray, int]:
    """(T, 7) channel values -> (T, 7) level indices and the number of clamped values."""
    T = len(ch)
    out = np.zeros((T, N_CHANNELS), dtype=np.int64)
    clamped = 0
    deltas = np.diff(ch, axis=0)
    for c in range(N_CHANNELS):
        if PERIODIC[c]:
            deltas[:, c] = wrap_angle(deltas[:, c])
        lo, hi = spec.abs_ranges[c]
        first, n0 = quantize(ch[:1, c], lo, hi, spec.bins, PERIODIC[c])
        out[0, c] = first[0]
        lo, hi = spec.delta_ranges[c]
        out[1:, c], n1 = quantize(deltas[:, c], lo, hi, spec.bins)
        clamped += n0 + n1
    return out, clamped


def tokenize(traj: Trajectory, tags: ShotTags | None, spec: TokenSpec = TokenSpec()) -> TokenizedTrajectory:
    """Quantise a subject-local trajectory; out-of-range values are clamped with a ClampWarning."""
    levels, clamped = channel_tokens(trajectory_channels(traj), spec)
    if clamped:
        warnings.warn(f"{clamped} trajectory values clamped to token ranges", ClampWarning, stacklevel=2)
    tokens = [spec.bos] + tag_tokens(tags, spec) + levels.ravel().tolist() + [spec.eos]
    return TokenizedTrajectory(tokens, clamped)


def check_roles(tokens, spec: TokenSpec) -> int:
    tokens = np.asarray(tokens, dtype=np.int64)
    T = spec.frames_from_len(len(tokens))
    roles = position_roles(T)
    masks = spec.role_masks()
    bad = (tokens < 0) | (tokens >= spec.vocab_size)
    if bad.any():
        raise BadTokenRole(f"token id out of vocabulary at position {int(np.argmax(bad))}")
    ok = masks[roles, tokens]
    if not ok.all():
        raise BadTokenRole(f"token {int(tokens[np.argmin(ok)])} not allowed at position {int(np.argmin(ok))}")
    return T


def levels_to_channels(levels: np.ndarray, spec: TokenSpec) -> np.ndarray:
    ch = np.zeros(levels.shape, dtype=float)
    for c in range(N_CHANNELS):
        lo, hi = spec.abs_ranges[c]
        ch[0, c] = dequantize(levels[0, c], lo, hi, spec.bins)
        lo, hi = spec.delta_ranges[c]
        ch[1:, c] = ch[0, c] + np.cumsum(dequantize(levels[1:, c], lo, hi, spec.bins))
    return ch


def detokenize(tokens, spec: TokenSpec = TokenSpec(), fps: float = 10.0, T: int | None = None) -> Trajectory:
    if isinstance(tokens, TokenizedTrajectory):
        tokens = tokens.tokens
    tokens = np.asarray(tokens, dtype=np.int64)
    if T is not None and len(tokens) != spec.seq_len(T):
        raise LengthError(f"expected {spec.seq_len(T)} tokens, got {len(tokens)}")
    n = check_roles(tokens, spec)
    levels = tokens[N_CONDITION:-1].reshape(n, N_CHANNELS)
    return channels_to_trajectory(levels_to_channels(levels, spec), fps)
