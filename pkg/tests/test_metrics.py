import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscmdp.agents import PSRL_TRANSITIONS, preset, run_agent
from pscmdp.envs import make_env
from pscmdp.metrics import MetricsLog, compute_regret


def _random_log(rng, T, m=1):
    log = MetricsLog.allocate(T, m)
    log.rewards[:] = rng.random(T)
    log.costs[:] = rng.random((T, m))
    return log


def test_running_averages_are_prefix_means():
    rng = np.random.default_rng(0)
    log = _random_log(rng, 5000, 2)
    for t in rng.integers(1, 5001, size=20):
        assert log.running_avg_reward[t - 1] == pytest.approx(log.rewards[:t].mean(), abs=1e-12)
        assert np.allclose(log.running_avg_costs[t - 1], log.costs[:t].mean(axis=0), atol=1e-12, rtol=0)


def test_constant_reward_at_optimum_has_no_regret():
    log = MetricsLog.allocate(50, 1)
    log.rewards[:] = 0.4
    reg = compute_regret(log, 0.4, [0.2])
    assert np.all(reg.reward_regret == 0.0)
    assert np.all(reg.cost_regrets == 0.0)


def test_regret_matches_a_direct_loop():
    rng = np.random.default_rng(1)
    log = _random_log(rng, 100)
    reg = compute_regret(log, 0.6, [0.3])
    r_acc = c_acc = 0.0
    for t in range(100):
        r_acc += max(0.6 - log.rewards[t], 0.0)
        c_acc += max(log.costs[t, 0] - 0.3, 0.0)
        assert reg.reward_regret[t] == r_acc
        assert reg.cost_regrets[t, 0] == c_acc


def test_overspending_cannot_cancel_reward_regret():
    log = MetricsLog.allocate(2, 1)
    log.rewards[:] = [1.0, 0.0]
    reg = compute_regret(log, 0.5, [0.2])
    # unclipped the two steps would cancel to 0
    assert reg.reward_regret[-1] == 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1))
def test_regret_never_decreases(seed, r_star, tau):
    reg = compute_regret(_random_log(np.random.default_rng(seed), 200), r_star, [tau])
    assert np.all(np.diff(reg.reward_regret) >= 0)
    assert np.all(np.diff(reg.cost_regrets[:, 0]) >= 0)


def test_cost_regret_is_sublinear_on_corridor():
    env = make_env("corridor_1x2", 0.2)
    T = 100_000
    log = run_agent(env, preset("corridor_1x2", PSRL_TRANSITIONS), T, 0)
    reg = compute_regret(log, 0.5, env.cmdp.thresholds)
    assert reg.cost_regrets[-1, 0] / T < 0.05


def test_fingerprint_sees_every_array():
    log = MetricsLog.allocate(3, 1)
    base = log.fingerprint()
    log.epochs[2] = 1
    assert log.fingerprint() != base
