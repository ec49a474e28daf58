from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shotpref.errors import UnclassifiableFraming
from shotpref.geometry import CameraPose, Frame, SubjectProxy, Trajectory, look_at_pose
from shotpref.preview import anchor_pixel, decode_ppm, emit_preview, ANCHOR_COLOR
from shotpref.stage import (classify_motion, classify_shot_tags, framing_arrays, framing_report, miss_flags,
                            project_subject, scale_from_rho, screen_from_anchor, angle_from_elevation)
from shotpref.synth import synth_trajectory
from shotpref.taxonomy import ShotTags

IDENT = np.array([1.0, 0.0, 0.0, 0.0])
ASPECT = 16 / 9
SUBJECT = SubjectProxy()


def still(pos, q=IDENT, fov=math.radians(50), T=10, frame=Frame.WORLD):
    return Trajectory(np.tile(pos, (T, 1)), np.tile(q, (T, 1)), np.full(T, fov), frame=frame)


def pinhole_u(x_cam, depth, fov, aspect=ASPECT):
    """Independent pinhole formula for a point at camera-space x and depth."""
    fy = 1 / (2 * math.tan(fov / 2))
    return 0.5 + (fy / aspect) * x_cam / depth


# -- projection ----------------------------------------------------------------

def test_on_axis_anchor_is_centred():
    f = project_subject(CameraPose([0, 0.85, 4], IDENT, 1.0), SUBJECT)
    assert f.anchor_uv == pytest.approx((0.5, 0.5), abs=1e-12)
    assert f.visible and not f.in_border


def test_behind_camera_is_invisible():
    f = project_subject(CameraPose([0, 0.85, -4], IDENT, 1.0), SUBJECT)
    assert not f.visible and f.rho == 0.0 and not f.in_border


@pytest.mark.parametrize("fov_deg", [30, 50, 75])
def test_rho_matches_inverted_height_formula(fov_deg):
    fov = math.radians(fov_deg)
    d = 1.7 / (2 * 0.6 * math.tan(fov / 2))
    f = project_subject(CameraPose([0, 0.85, d], IDENT, fov), SUBJECT)
    assert f.rho == pytest.approx(0.6, abs=1e-6)


def test_off_axis_u_matches_pinhole_oracle():
    fov = math.radians(40)
    f = project_subject(CameraPose([-0.7, 0.85, 5.0], IDENT, fov), SUBJECT)
    assert f.anchor_uv[0] == pytest.approx(pinhole_u(0.7, 5.0, fov), abs=1e-12)


@given(st.lists(st.floats(-30, 30), min_size=3, max_size=3))
def test_projection_is_translation_invariant(shift):
    shift = np.array(shift)
    pose = look_at_pose([1.0, 1.5, 4.0], [0.2, 0.9, 0.0], fov=0.9)
    a = project_subject(pose, SUBJECT)
    moved = SubjectProxy(SUBJECT.feet + shift, SUBJECT.height, SUBJECT.facing)
    b = project_subject(CameraPose(pose.translation + shift, pose.rotation, pose.fov), moved)
    assert np.allclose(a.anchor_uv, b.anchor_uv, atol=1e-9) and a.rho == pytest.approx(b.rho, abs=1e-9)


# -- miss rate -----------------------------------------------------------------

def test_all_behind_camera_misses_everything():
    assert framing_report(still([0, 0.85, -3]), SUBJECT).miss_rate == 1.0


def test_three_of_ten_frames_in_border():
    fov = math.radians(50)
    fx = 1 / (2 * math.tan(fov / 2)) / ASPECT
    x_off = -0.4 * 5.0 / fx
    pos = np.tile([0.0, 0.85, 5.0], (10, 1))
    pos[[2, 5, 7], 0] = x_off
    traj = Trajectory(pos, np.tile(IDENT, (10, 1)), np.full(10, fov), frame=Frame.WORLD)
    rep = framing_report(traj, SUBJECT)
    assert rep.frames[2].anchor_uv[0] == pytest.approx(0.9, abs=1e-12)
    assert rep.miss_rate == pytest.approx(0.3, abs=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_miss_rate_recomputes_from_flags(seed):
    rng = np.random.default_rng(seed)
    T = 12
    q = rng.normal(size=(T, 4)) * [4, 1, 1, 1]
    traj = Trajectory(rng.uniform(-3, 3, (T, 3)) + [0, 0, 4], q / np.linalg.norm(q, axis=1, keepdims=True),
                      rng.uniform(0.4, 1.6, T), frame=Frame.WORLD)
    rep = framing_report(traj, SUBJECT)
    flags = [(not f.visible) or f.in_border for f in rep.frames]
    assert rep.miss_rate == sum(flags) / T
    assert all(f.visible for f in rep.frames if f.in_border)
    assert all(f.rho >= 0 for f in rep.frames)


# -- bands ---------------------------------------------------------------------

@pytest.mark.parametrize("rho,band", [(0.1, "extreme_long"), (0.15, "long"), (0.45, "medium"),
                                      (0.75, "medium_close_up"), (1.1, "close"), (2.0, "extreme_close")])
def test_scale_band_edges(rho, band):
    assert scale_from_rho(rho) == band


def test_angle_and_screen_edges():
    assert angle_from_elevation(math.radians(10)) == "eye_level"
    assert angle_from_elevation(math.radians(10.01)) == "high"
    assert angle_from_elevation(math.radians(-10.01)) == "low"
    assert screen_from_anchor(0.1, 0.1) == "up_left"
    assert screen_from_anchor(0.5, 0.5) == "middle_center"
    assert screen_from_anchor(0.9, 0.9) == "bottom_right"


# -- classification ------------------------------------------------------------

def test_constant_poses_are_static():
    traj = still([0, 0.85, 4.0], frame=Frame.SUBJECT_LOCAL)
    assert classify_motion(traj, SUBJECT, framing_arrays(traj, SUBJECT)) == "static"


def test_shrinking_fov_is_zoom_in():
    T = 10
    traj = Trajectory(np.tile([0, 0.85, 4.0], (T, 1)), np.tile(IDENT, (T, 1)),
                      np.linspace(math.radians(50), math.radians(35), T))
    assert classify_motion(traj, SUBJECT, framing_arrays(traj, SUBJECT)) == "zoom_in"


def test_lost_subject_is_unclassifiable():
    with pytest.raises(UnclassifiableFraming):
        classify_shot_tags(still([0, 0.85, -3.0], frame=Frame.SUBJECT_LOCAL), SUBJECT)


# -- previews ------------------------------------------------------------------

def test_preview_files_and_anchor_marker(tmp_path):
    tags = ShotTags("pan", "medium", "front", "eye_level", "middle_left")
    traj = synth_trajectory(tags, 6, rng_seed=4)
    paths = emit_preview(traj, SUBJECT, ASPECT, tmp_path, (160, 90))
    assert [p.rsplit("/", 1)[1] for p in paths] == [f"frame_{i:04d}.ppm" for i in range(6)]
    arrays = framing_arrays(traj, SUBJECT)
    for path, uv in zip(paths, arrays["anchor_uv"]):
        img = decode_ppm(open(path, "rb").read())
        assert img.shape == (90, 160, 3)
        x, y = anchor_pixel(uv, 160, 90)
        assert (x, y) == (round(uv[0] * 160), round(uv[1] * 90))
        assert tuple(img[y, x]) == ANCHOR_COLOR


def test_static_preview_frames_identical(tmp_path):
    traj = synth_trajectory(ShotTags("static", "long", "left", "high", "up_center"), 4, rng_seed=1)
    paths = emit_preview(traj, SUBJECT, ASPECT, tmp_path)
    blobs = {open(p, "rb").read() for p in paths}
    assert len(blobs) == 1
    assert next(iter(blobs)).startswith(b"P6\n320 180\n255\n")


def test_preview_bytes_are_deterministic(tmp_path):
    traj = synth_trajectory(ShotTags("rotate", "medium", "back", "low", "bottom_left"), 3, rng_seed=8)
    a = [open(p, "rb").read() for p in emit_preview(traj, SUBJECT, ASPECT, tmp_path / "a")]
    b = [open(p, "rb").read() for p in emit_preview(traj, SUBJECT, ASPECT, tmp_path / "b")]
    assert a == b
