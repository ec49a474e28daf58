from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from shotpref.dpo import (DpoConfig, PreferencePair, build_preference_pairs, dpo_loss, dpo_loss_from_logprobs,
                          dpo_train, epoch_generator, pair_candidates, sample_candidates)
from shotpref.errors import DataTooSmall, DomainError, NoPairs
from shotpref.model import sample_batch
from shotpref.scoring import ScoreRecord, Strategy
from shotpref.taxonomy import ShotTags
from shotpref.tokenizer import TokenizedTrajectory

from conftest import central_differences, flat_grad, relative_error, tiny_policy

LN2 = math.log(2.0)
TAGS = ShotTags(motion="pan", scale="medium")


def seqs(n, seed=0, frames=2):
    model = tiny_policy(frames=frames, seed=seed, double=False)
    out = sample_batch(model, [TAGS] * n, 1.0, 64, torch.Generator().manual_seed(seed))
    return [TokenizedTrajectory(s) for s in out]


def random_pairs(n, seed=0):
    s = seqs(2 * n, seed)
    return [PreferencePair(TAGS, s[2 * i], s[2 * i + 1], 1.0, 0.0) for i in range(n) if s[2 * i] != s[2 * i + 1]]


# -- pair construction ---------------------------------------------------------

def test_pairs_examples():
    a, b, c, d = seqs(4, 1)
    pairs = build_preference_pairs([(a, 0.9), (b, 0.1)], 0.05)
    assert [(p.winner, p.loser) for p in pairs] == [(a, b)]
    pairs = build_preference_pairs([(c, 0.3), (a, 0.9), (d, 0.1), (b, 0.7)], 0.05)
    assert [(p.score_winner, p.score_loser) for p in pairs] == [(0.9, 0.1), (0.7, 0.3)]
    assert [(p.winner, p.loser) for p in pairs] == [(a, d), (b, c)]


def test_equal_scores_give_no_pairs():
    with pytest.raises(NoPairs):
        build_preference_pairs([(s, 0.4) for s in seqs(4)], 0.05)


def test_gap_threshold_is_respected():
    a, b, c, d = seqs(4, 2)
    pairs = build_preference_pairs([(a, 0.9), (b, 0.5), (c, 0.48), (d, 0.1)], 0.05)
    assert [(p.score_winner, p.score_loser) for p in pairs] == [(0.9, 0.1)]


def test_strategy_is_carried_from_records():
    a, b = seqs(2, 3)
    pairs = build_preference_pairs([(a, ScoreRecord(Strategy.TAG, 9.0)), (b, ScoreRecord(Strategy.TAG, 2.0))], 1.0)
    assert pairs[0].strategy == Strategy.TAG


@given(st.lists(st.floats(0, 1), min_size=8, max_size=8), st.randoms())
def test_pairs_are_permutation_invariant(scores, rnd):
    cands = seqs(8, 4)
    scored = list(zip(cands, scores))
    try:
        base = build_preference_pairs(scored, 0.05)
    except NoPairs:
        base = []
    rnd.shuffle(scored)
    try:
        moved = build_preference_pairs(scored, 0.05)
    except NoPairs:
        moved = []
    key = lambda p: (p.winner.tolist(), p.loser.tolist(), p.score_winner, p.score_loser)
    assert sorted(map(key, base)) == sorted(map(key, moved))


def test_pair_validation_and_records():
    a, b = seqs(2, 5)
    with pytest.raises(DomainError):
        PreferencePair(TAGS, a, b, 0.2, 0.5)
    with pytest.raises(DomainError):
        PreferencePair(TAGS, a, a, 0.9, 0.1)
    p = PreferencePair(TAGS, a, b, 0.9, 0.1)
    assert PreferencePair.from_record(p.to_record()) == p


# -- loss identities -----------------------------------------------------------

def test_loss_is_ln2_when_policy_equals_reference():
    ref = tiny_policy(frames=2, seed=1)
    policy = ref.clone()
    rng = np.random.default_rng(0)
    pairs = random_pairs(100, seed=7)
    assert len(pairs) >= 90
    for p in pairs:
        beta = float(rng.uniform(0.01, 5.0))
        assert abs(dpo_loss(policy, ref, p, beta).item() - LN2) < 1e-9


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 5))
def test_loss_is_monotone_decreasing_in_margin(m1, m2, beta):
    lo, hi = sorted((m1, m2))
    assert dpo_loss_from_logprobs(hi, 0.0, 0.0, 0.0, beta) <= dpo_loss_from_logprobs(lo, 0.0, 0.0, 0.0, beta)


def test_loss_limits():
    assert dpo_loss_from_logprobs(1e4, 0.0, 0.0, 0.0, 1.0) < 1e-12
    assert dpo_loss_from_logprobs(-1e4, 0.0, 0.0, 0.0, 1.0) == pytest.approx(1e4)


@given(st.lists(st.floats(-200, 0), min_size=4, max_size=4), st.floats(-100, 100), st.floats(0.01, 5))
def test_loss_ignores_common_shift(lps, c, beta):
    pw, pl, rw, rl = lps
    base = dpo_loss_from_logprobs(pw, pl, rw, rl, beta)
    shifted = dpo_loss_from_logprobs(pw + c, pl + c, rw + c, rl + c, beta)
    assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)


@given(st.floats(-40, 40), st.floats(0.01, 5))
def test_swapping_winner_and_loser(m, beta):
    total = dpo_loss_from_logprobs(m, 0.0, 0.0, 0.0, beta) + dpo_loss_from_logprobs(-m, 0.0, 0.0, 0.0, beta)
    assert total >= 2 * LN2 - 1e-12
    if abs(beta * m) > 1e-3:
        assert total > 2 * LN2


def test_tensor_and_float_paths_agree():
    m = torch.tensor([-3.0, 0.0, 2.5], dtype=torch.float64)
    z = torch.zeros(3, dtype=torch.float64)
    got = dpo_loss_from_logprobs(m, z, z, z, 0.7).numpy()
    assert np.allclose(got, [dpo_loss_from_logprobs(float(x), 0.0, 0.0, 0.0, 0.7) for x in m], atol=1e-15)


def test_dpo_gradient_matches_finite_differences():
    ref = tiny_policy(frames=2, seed=1)
    policy = tiny_policy(frames=2, seed=2)
    assert policy.n_params <= 1000
    pairs = random_pairs(6, seed=3)
    policy.zero_grad()
    dpo_loss(policy, ref, pairs, 0.5).backward()
    fd = central_differences(policy, lambda: dpo_loss(policy, ref, pairs, 0.5))
    assert relative_error(flat_grad(policy), fd) < 1e-3
    assert all(p.grad is None for p in ref.parameters())


def test_loss_rejects_non_positive_beta():
    ref = tiny_policy(frames=2)
    with pytest.raises(DomainError):
        dpo_loss(ref.clone(), ref, random_pairs(1), 0.0)


# -- training loop -------------------------------------------------------------

def _mean_x(i, trajs):
    return [math.tanh(float(t.positions[:, 0].mean())) for t in trajs]


def test_training_leaves_reference_untouched_and_lowers_loss():
    ref = tiny_policy(frames=2, seed=1, double=False)
    before = [p.detach().clone() for p in ref.parameters()]
    policy = ref.clone()
    config = DpoConfig(beta=0.5, candidates=4, lr=5e-3, epochs=3, min_gap=0.0, seed=2)
    seen = {}
    policy, logs = dpo_train(policy, ref, [TAGS] * 16, _mean_x, "cyclic", config,
                             pair_sink=lambda e, p: seen.setdefault(e, p))
    assert all(torch.equal(a, b) for a, b in zip(before, ref.parameters()))
    assert len(logs) == 3 and all(l.pairs >= 16 for l in logs)
    assert logs[0].loss < LN2 + 1e-6
    with torch.no_grad():
        assert dpo_loss(policy, ref, seen[0], config.beta).item() < LN2
    assert any(not torch.equal(a, b) for a, b in zip(policy.parameters(), ref.parameters()))


def test_no_usable_pairs_leaves_policy_unchanged():
    ref = tiny_policy(frames=2, seed=1, double=False)
    policy = ref.clone()
    with pytest.raises(DataTooSmall):
        dpo_train(policy, ref, [TAGS] * 8, lambda i, t: [0.5] * len(t), "cyclic", DpoConfig(candidates=4))
    assert all(torch.equal(a, b) for a, b in zip(policy.parameters(), ref.parameters()))


def test_training_is_deterministic_and_stored_pairs_match_sampling():
    ref = tiny_policy(frames=2, seed=1, double=False)
    config = DpoConfig(beta=0.5, candidates=4, lr=5e-3, epochs=2, min_gap=0.0, seed=3)
    prompts = [TAGS] * 16
    sunk = {}
    a, la = dpo_train(ref.clone(), ref, prompts, _mean_x, "cyclic", config,
                      pair_sink=lambda e, p: sunk.setdefault(e, p))
    cands = sample_candidates(ref, prompts, 4, 1.0, 50, epoch_generator(3, 0))
    stored, _ = pair_candidates(cands, prompts, _mean_x, Strategy.CYCLIC, 0.0, ref)
    assert [p.to_record() for p in stored] == [p.to_record() for p in sunk[0]]
    b, lb = dpo_train(ref.clone(), ref, prompts, _mean_x, "cyclic", config, initial_pairs=stored)
    assert [l.to_dict() for l in la] == [l.to_dict() for l in lb]
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_epoch_generators_are_independent():
    a = torch.rand(4, generator=epoch_generator(0, 0))
    b = torch.rand(4, generator=epoch_generator(0, 1))
    c = torch.rand(4, generator=epoch_generator(0, 0))
    assert torch.equal(a, c) and not torch.equal(a, b)
