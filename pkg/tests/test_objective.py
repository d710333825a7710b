import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcrd.divergence import kl
from vcrd.judge import JudgeConfig, OracleJudge
from vcrd.objective import (AMPLIFICATION, ATTENUATION, PARITY, LossTerm, RolloutPair,
                            TrainConfig, WeightSeries, apply_weight_rule, batch_objective,
                            classify_regime, clamp_weights, lv_skl_loss, lv_srkl_loss,
                            pair_objective, total_loss, uniform_weights, validity_weights)
from vcrd.policy import TabularPolicy, Trajectory, Vocab, sample_rollout
from vcrd.tasks import TaskSpec, generate, multipath_instance

RATIO = TrainConfig()


def random_policy(V, window, rng, states=30):
    vocab = Vocab(tuple(["<pad>"] + [f"s{i}" for i in range(1, V)]))
    pol = TabularPolicy(vocab, window)
    for _ in range(states):
        pol.logits[tuple(int(x) for x in rng.integers(V, size=window))] = rng.normal(size=V) * 2
    return pol


@pytest.mark.parametrize("r_s,r_t,w", [(0.847, 0.152, 5.57), (0.877, 0.601, 1.46), (0.589, 0.085, 6.97)])
def test_ratio_weights_reference_rows(r_s, r_t, w):
    # the third row's printed 6.97 comes from unrounded scores; 0.589 / 0.085 = 6.93
    tol = 0.05 if w == 6.97 else 0.005
    assert apply_weight_rule(r_s, r_t, RATIO) == pytest.approx(w, abs=tol)


def test_weight_rule_menu():
    assert apply_weight_rule(0.8, 0.8, RATIO) == pytest.approx(1.0, abs=1e-7)
    assert apply_weight_rule(0.589, 0.085, RATIO) == pytest.approx(6.93, abs=5e-3)
    assert apply_weight_rule(0.9, 0.2, TrainConfig(weight_rule="rs_only")) == 0.9
    assert apply_weight_rule(0.4, 0.4, TrainConfig(weight_rule="rs_minus_rt")) == 1.0
    assert apply_weight_rule(0.0, 0.3, TrainConfig(weight_rule="uniform")) == 1.0
    with pytest.raises(ValueError):
        apply_weight_rule(0.5, 0.5, TrainConfig(weight_rule="prm_free"))


def test_ratio_uses_epsilon_exactly():
    assert apply_weight_rule(0.3, 0.0, RATIO) == 0.3 / 1e-8
    assert apply_weight_rule(0.5, 0.25, RATIO) == 0.5 / (0.25 + 1e-8)


def test_regimes():
    assert classify_regime(1.0, 0.05) == PARITY
    assert classify_regime(0.4) == ATTENUATION
    assert classify_regime(5.57) == AMPLIFICATION


def test_clamp_weights():
    ws = WeightSeries(np.array([5.57, 0.4, 1.0]), np.array([1.0, 1.0, 2.0]))
    c = clamp_weights(ws)
    np.testing.assert_array_equal(c.w_teacher, [1.0, 0.4, 1.0])
    np.testing.assert_array_equal(c.w_student, [1.0, 1.0, 1.0])
    ones = uniform_weights(4)
    np.testing.assert_array_equal(clamp_weights(ones).w_teacher, ones.w_teacher)
    assert ones.regime_counts() == {PARITY: 8, ATTENUATION: 0, AMPLIFICATION: 0}


def test_hand_loss_value():
    # T=1, V=2: p=(0.75, 0.25), q=(0.5, 0.5), alpha=0, w=2 -> 2 KL(p||q)
    vocab = Vocab(("a", "b"))
    teacher = TabularPolicy(vocab, 1, logits={(0,): [math.log(3), 0.0]})
    student = TabularPolicy(vocab, 1)
    traj = Trajectory((0,), (0,), (math.log(0.75),))
    term = lv_skl_loss(teacher, student, traj, [2.0], alpha=0.0)
    assert term.value == pytest.approx(2 * 0.130812, abs=2e-6)
    assert term.value == pytest.approx(2 * kl([0.75, 0.25], [0.5, 0.5]), abs=1e-15)


def test_student_equal_teacher_is_stationary():
    rng = np.random.default_rng(0)
    teacher = random_policy(5, 2, rng)
    traj = sample_rollout(teacher, [1, 2], 6, rng)
    for fn in (lv_skl_loss, lv_srkl_loss):
        term = fn(teacher, teacher.copy(), traj, np.full(6, 3.0), 0.2)
        assert abs(term.value) < 1e-12
        assert all(np.max(np.abs(g)) < 1e-10 for g in term.grads.values())


def test_srkl_alpha_one_is_zero():
    rng = np.random.default_rng(1)
    t, s = random_policy(4, 2, rng), random_policy(4, 2, rng)
    traj = sample_rollout(s, [1], 5, rng)
    assert lv_srkl_loss(t, s, traj, np.full(5, 7.0), 1.0).value == 0.0


def test_srkl_alpha_zero_is_mean_reverse_kl():
    rng = np.random.default_rng(2)
    t, s = random_policy(4, 2, rng), random_policy(4, 2, rng)
    traj = sample_rollout(s, [1], 5, rng)
    expect = np.mean([kl(s.next_dist(traj.prefix(i)), t.next_dist(traj.prefix(i))) for i in range(5)])
    assert lv_srkl_loss(t, s, traj, np.ones(5), 0.0).value == pytest.approx(expect, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_linearity_in_weights(seed, scale):
    rng = np.random.default_rng(seed)
    t, s = random_policy(5, 2, rng), random_policy(5, 2, rng)
    traj = sample_rollout(s, [1, 3], 6, rng)
    w = rng.uniform(0, 3, size=6)
    for fn in (lv_skl_loss, lv_srkl_loss):
        a, b = fn(t, s, traj, w, 0.1), fn(t, s, traj, scale * w, 0.1)
        assert b.value == pytest.approx(scale * a.value, rel=1e-12, abs=1e-15)
        for k in a.grads:
            np.testing.assert_allclose(b.grads[k], scale * a.grads[k], rtol=1e-12, atol=1e-15)


def test_total_loss_combinations():
    a = LossTerm(0.3, {(1,): np.array([1.0, 0.0])}, np.array([0.3]))
    b = LossTerm(0.5, {(1,): np.array([0.0, 1.0])}, np.array([0.5]))
    assert total_loss(a, b, TrainConfig(lambda_teacher=1, lambda_student=0)).total == 0.3
    br = total_loss(a, b, TrainConfig(lambda_teacher=2, lambda_student=1.5))
    assert br.total == pytest.approx(2 * 0.3 + 1.5 * 0.5)
    np.testing.assert_allclose(br.grads[(1,)], [2.0, 1.5])
    zero = LossTerm(0.0, {}, np.zeros(0))
    assert total_loss(zero, zero, RATIO).total == 0.0
    with pytest.raises(ValueError):
        TrainConfig(lambda_student=-1)


def _multipath_setup():
    spec = TaskSpec("multipath", modulus=7, operand_count=2)
    inst = multipath_instance(spec, [2, 5])
    vocab = spec.build_vocab()
    return spec, inst, vocab


def test_validity_weights_rollout_tokens():
    spec, inst, vocab = _multipath_setup()
    judge = OracleJudge(JudgeConfig(), [inst])
    gold_a, gold_b = inst.gold_trajectories
    y_t = Trajectory(inst.prompt, gold_a, (0.0,) * 5)
    bad = (gold_b[0], vocab.index("6")) + gold_b[2:]
    y_s = Trajectory(inst.prompt, bad, (0.0,) * 5)
    ws = validity_weights(judge, RolloutPair(y_t, y_s), RATIO)
    # t=0: both first moves valid on the teacher prefix (multiple valid continuations)
    assert ws.w_teacher[0] == pytest.approx(1.0, abs=1e-7)
    # t=1: student writes a wrong partial sum under the teacher prefix
    assert ws.w_teacher[1] == pytest.approx(0.1, abs=1e-7)
    assert ws.regimes_teacher[1] == ATTENUATION
    # student prefix is off-path from t=2 on: both tokens score the floor
    assert ws.w_student[3] == pytest.approx(1.0, abs=1e-6)
    assert ws.scores_teacher[1] == (0.1, 1.0)


def test_prm_free_weights_bounded():
    spec = TaskSpec("multipath", modulus=7, operand_count=2)
    rng = np.random.default_rng(0)
    inst = generate(spec, 1, 0)[0]
    t = TabularPolicy(spec.build_vocab(), 5)
    s = TabularPolicy(spec.build_vocab(), 4)
    pair = RolloutPair(sample_rollout(t, inst.prompt, 5, rng), sample_rollout(s, inst.prompt, 5, rng))
    ws = validity_weights(None, pair, TrainConfig(weight_rule="prm_free"), teacher=t, student=s)
    assert np.all((ws.w_teacher >= 0.5) & (ws.w_teacher <= 2.0))


def test_batch_objective_is_prompt_mean():
    rng = np.random.default_rng(5)
    t, s = random_policy(4, 2, rng), random_policy(4, 2, rng)
    pairs = [RolloutPair(sample_rollout(t, [1], 4, rng), sample_rollout(s, [1], 4, rng)) for _ in range(3)]
    wss = [WeightSeries(rng.uniform(0, 2, 4), rng.uniform(0, 2, 4)) for _ in range(3)]
    parts = [pair_objective(t, s, p, w, RATIO) for p, w in zip(pairs, wss)]
    b = batch_objective(t, s, pairs, wss, RATIO)
    assert b.total == pytest.approx(np.mean([p.total for p in parts]), abs=1e-15)
