from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from shotpref.geometry import Frame, SubjectProxy, Trajectory

torch.set_num_threads(1)

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_quats():
    return st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
        lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.asarray(v) / np.linalg.norm(v))


@st.composite
def trajectories(draw, T=None, frame=Frame.SUBJECT_LOCAL):
    n = draw(st.integers(2, 12)) if T is None else T
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-5, 5, size=(n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    fov = rng.uniform(math.radians(15), math.radians(110), size=n)
    return Trajectory(pos, q, fov, fps=float(draw(st.sampled_from([10.0, 24.0, 30.0]))), frame=frame)


@st.composite
def subjects(draw):
    ang = draw(st.floats(-math.pi, math.pi))
    feet = draw(st.lists(st.floats(-20, 20), min_size=3, max_size=3))
    feet[1] = draw(st.floats(-2, 2))
    height = draw(st.floats(1.0, 2.2))
    return SubjectProxy(np.array(feet), height, np.array([math.sin(ang), 0.0, math.cos(ang)]))


def random_trajectory(rng: np.random.Generator, T: int = 8, frame=Frame.SUBJECT_LOCAL) -> Trajectory:
    q = rng.normal(size=(T, 4))
    return Trajectory(rng.uniform(-5, 5, (T, 3)), q / np.linalg.norm(q, axis=1, keepdims=True),
                      rng.uniform(0.3, 1.8, T), fps=10.0, frame=frame)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_policy(frames: int = 2, seed: int = 0, scale: float | None = 0.5, double: bool = True):
    """A policy with under 1k parameters; ``scale`` re-draws weights so logits are far from uniform."""
    from shotpref.model import ModelDescriptor, PolicyModel
    model = PolicyModel(ModelDescriptor(frames=frames, width=3, depth=1, heads=1, mlp_ratio=1), seed=seed)
    if scale is not None:
        g = torch.Generator().manual_seed(seed + 100)
        with torch.no_grad():
            for p in model.parameters():
                p.normal_(0.0, scale, generator=g)
    return model.double() if double else model


def flat_grad(model) -> np.ndarray:
    return torch.cat([p.grad.flatten() for p in model.parameters()]).numpy().copy()


def central_differences(model, loss_fn, h: float = 1e-6) -> np.ndarray:
    out = []
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                out.append((up - down) / (2 * h))
    return np.array(out)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.fixture(scope="session")
def tiny_runs(tmp_path_factory):
    """Two complete runs of the bundled tiny config into separate directories."""
    from shotpref.config import bundled_config_path, load_config
    from shotpref.pipeline import run_stage
    cfg = load_config(bundled_config_path("tiny"))
    outs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(f"tiny_{name}")
        run_stage(cfg, "all", out)
        outs.append(out)
    return outs
