import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcrd.trust_region import (ETA_CAP, exp_tilt, expected_reward, first_order_residual,
                               solve_trust_region, stationarity_gap, tilt_kl, verify_optimality)

PI = np.array([0.5, 0.3, 0.2])
R = np.array([0.0, 1.0, 0.0])


def grid_eta(pi, r, delta, step=1e-4, top=3.0):
    """Dense scan for the eta whose tilt KL is closest to delta, computed from scratch."""
    best, arg = math.inf, 0.0
    for i in range(int(top / step) + 1):
        eta = i * step
        w = [p * math.exp(eta * x) for p, x in zip(pi, r)]
        z = sum(w)
        k = sum((wi / z) * math.log((wi / z) / p) for wi, p in zip(w, pi))
        if abs(k - delta) < best:
            best, arg = abs(k - delta), eta
    return arg


def test_tilt_examples():
    np.testing.assert_array_equal(exp_tilt(PI, R, 0.0), PI)
    np.testing.assert_allclose(exp_tilt(PI, [0.5, 0.5, 0.5], 3.0), PI, atol=1e-15)
    # (0.5, 0.3e, 0.2) / (0.7 + 0.3e)
    np.testing.assert_allclose(exp_tilt(PI, R, 1.0), [0.3300, 0.5381, 0.1320], atol=1e-4)


def test_expected_reward_examples():
    assert expected_reward([0, 1, 0], [0.2, 0.7, 0.1]) == 0.7
    assert expected_reward([1 / 3] * 3, R) == pytest.approx(1 / 3)
    assert expected_reward(PI, R) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        expected_reward([0.5, 0.5], R)


def test_solver_matches_grid_oracle():
    sol = solve_trust_region(PI, R, 0.05)
    assert sol.active
    assert abs(sol.achieved_kl - 0.05) <= 1e-9
    assert sol.eta == pytest.approx(grid_eta(PI, R, 0.05), abs=2e-4)
    assert sol.eta == pytest.approx(0.6477, abs=1e-3)
    # small-delta approximation sqrt(2 delta / Var) = 0.690 overshoots at this delta
    assert sol.eta < math.sqrt(2 * 0.05 / 0.21)


def test_solver_saturation_and_constant_reward():
    sat = solve_trust_region(PI, R, 2.0)  # sup KL = -ln 0.3 = 1.204
    assert not sat.active and sat.eta == ETA_CAP
    assert sat.achieved_kl < 2.0 and sat.tilted[1] > 1 - 1e-12
    flat = solve_trust_region(PI, [0.5, 0.5, 0.5], 0.1)
    assert flat.eta == 0.0 and not flat.active
    np.testing.assert_allclose(flat.tilted, PI)
    assert flat.expected_reward == pytest.approx(0.5)


def test_solver_input_errors():
    with pytest.raises(ValueError):
        solve_trust_region(PI, R, 0.0)
    with pytest.raises(ValueError):
        solve_trust_region([0.5, 0.0, 0.5], R, 0.1)
    with pytest.raises(ValueError):
        solve_trust_region(PI, [0.0, 1.0], 0.1)


def test_verify_optimality_examples():
    sol = solve_trust_region(PI, R, 0.05)
    rep = verify_optimality(PI, R, 0.05, sol, n_samples=5000)
    assert rep.passed and rep.stationarity_gap < 1e-9
    eta = 1.1 * sol.eta
    bumped = replace(sol, eta=eta, tilted=exp_tilt(PI, R, eta))
    assert not verify_optimality(PI, R, 0.05, bumped, n_samples=500).feasible
    frozen = replace(sol, eta=0.0, tilted=PI.copy())
    assert expected_reward(PI, R) < sol.expected_reward
    assert not verify_optimality(PI, R, 0.05, frozen, n_samples=2000).passed


def test_first_order_residual_examples():
    assert first_order_residual(PI, R, 0.0) == 0.0
    assert first_order_residual(PI, [1.0, 1.0, 1.0], 0.3) == pytest.approx(0.0, abs=1e-15)
    for eta in (1e-2, 5e-3, 2.5e-3):
        ratio = first_order_residual(PI, R, eta) / first_order_residual(PI, R, eta / 2)
        assert ratio == pytest.approx(4.0, abs=0.3)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_kl_and_reward_monotone_in_eta(V, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(V))
    r = rng.uniform(size=V)
    etas = np.linspace(0.0, 5.0, 40)
    kls = [tilt_kl(pi, r, e) for e in etas]
    rew = [expected_reward(exp_tilt(pi, r, e), r) for e in etas]
    assert all(b >= a - 1e-13 for a, b in zip(kls, kls[1:]))
    assert all(b >= a - 1e-13 for a, b in zip(rew, rew[1:]))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31), st.floats(1e-3, 0.5))
def test_stationarity_on_solved_instances(V, seed, delta):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(V) * 2)
    r = rng.uniform(size=V)
    sol = solve_trust_region(pi, r, delta)
    assert stationarity_gap(pi, r, sol) < 1e-9
    if sol.active:
        assert abs(sol.achieved_kl - delta) <= 1e-9
