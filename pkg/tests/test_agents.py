import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pscmdp.agents import (ALGORITHMS, CUCRL_CONSERVATIVE, CUCRL_OPTIMISTIC, CUCRL_TRANSITIONS, PRESETS,
                           PSRL_LAGRANGIAN, PSRL_TRANSITIONS, AgentConfig, DualState, EpochSchedule,
                           cucrl_conservative_plan, cucrl_optimistic_plan, cucrl_transitions_plan,
                           doubling_should_end, epoch_count_bound, lp_policy, preset, psrl_lagrangian_plan,
                           psrl_transitions_plan, rng_stream, run_agent)
from pscmdp.cmdp import ContractViolation, MixturePolicy, average_values, mixture_update
from pscmdp.envs import make_env
from pscmdp.lp import solve_cmdp
from pscmdp.planners import ScalarizedMdp, value_iteration
from pscmdp.posterior import (BonusConfig, CountTables, EmpiricalEstimates, bonus, empirical_transitions,
                              sample_transitions)

from helpers import one_state, random_cmdp


def exact_tables(cmdp, n, skip=()):
    """Counts and sums as if every pair but ``skip`` had been tried ``n`` times."""
    S, A = cmdp.num_states, cmdp.num_actions
    counts = CountTables.zeros(S, A)
    counts.n_sas[:] = np.rint(cmdp.transitions * n).astype(np.int64)
    for s, a in skip:
        counts.n_sas[s, a] = 0
    counts.n_sa[:] = counts.n_sas.sum(axis=2)
    est = EmpiricalEstimates.zeros(S, A, cmdp.num_constraints)
    est.n_sa[:] = counts.n_sa
    est.reward_sums[:] = cmdp.reward * counts.n_sa
    est.cost_sums[:] = cmdp.costs * counts.n_sa[None]
    return counts, est


def _epoch_lengths(log):
    return np.bincount(log.epochs)[1:].tolist()


# schedules

def test_doubling_guard():
    counts = CountTables.zeros(1, 1)
    sched = EpochSchedule.doubling()
    counts.n_sa[0, 0] = 3
    sched.begin(0, counts)
    counts.n_sa[0, 0] = 5
    assert not doubling_should_end(sched, counts, 0, 0)
    counts.n_sa[0, 0] = 6
    assert doubling_should_end(sched, counts, 0, 0)


def test_first_visit_ends_epoch():
    counts = CountTables.zeros(1, 2)
    sched = EpochSchedule.doubling()
    sched.begin(0, counts)
    counts.n_sa[0, 1] = 1
    assert doubling_should_end(sched, counts, 0, 1)


def test_epoch_starts_must_increase():
    counts = CountTables.zeros(1, 1)
    sched = EpochSchedule.doubling()
    sched.begin(5, counts)
    with pytest.raises(ContractViolation):
        sched.begin(5, counts)


@pytest.mark.parametrize("algo", [PSRL_TRANSITIONS, PSRL_LAGRANGIAN, CUCRL_OPTIMISTIC])
def test_doubling_epochs_on_corridor(algo):
    env = make_env("corridor_1x2", 0.2)
    T = 10_000
    log = run_agent(env, preset("corridor_1x2", algo), T, 3)
    assert log.num_epochs <= epoch_count_bound(env.num_states, env.num_actions, T)
    # recount from the trace: every epoch but the last ends on a doubling
    S, A = env.num_states, env.num_actions
    n = np.zeros((S, A), dtype=int)
    starts = [e.start for e in log.events] + [T]
    for k in range(log.num_epochs):
        snap = n.copy()
        for t in range(starts[k], starts[k + 1]):
            n[log.states[t], log.actions[t]] += 1
        if k + 1 < log.num_epochs:
            s, a = log.states[starts[k + 1] - 1], log.actions[starts[k + 1] - 1]
            assert n[s, a] >= max(1, 2 * snap[s, a])


def test_linear_epoch_lengths():
    log = run_agent(make_env("one_state", 0.5), AgentConfig(CUCRL_CONSERVATIVE, random_steps=20), 200, 0)
    assert _epoch_lengths(log) == [20, 40, 60, 80]


def test_fixed_epoch_lengths():
    log = run_agent(make_env("one_state", 0.5), AgentConfig(CUCRL_TRANSITIONS), 1000, 0)
    # 1000 ** (1/3) is 10 up to rounding
    assert _epoch_lengths(log) == [10] * 100


def test_fixed_schedule_rounds_up():
    assert EpochSchedule.fixed(0.5, 10).length == 4
    with pytest.raises(ContractViolation):
        EpochSchedule.fixed(0.0, 10)


# configs

def test_presets_carry_the_selected_learning_rates():
    rates = {env: PRESETS[env][PSRL_LAGRANGIAN]["learning_rate"] for env in ("marsrover_4x4", "marsrover_8x8", "box")}
    assert rates == {"marsrover_4x4": 0.2, "marsrover_8x8": 35e-4, "box": 165e-6}
    assert PRESETS["box"][CUCRL_OPTIMISTIC]["bonus_coefficient"] == 0.5
    assert preset("box", CUCRL_CONSERVATIVE).random_steps == 1000


def test_config_validation():
    with pytest.raises(ContractViolation):
        AgentConfig("QLearning")
    with pytest.raises(ContractViolation):
        AgentConfig(PSRL_LAGRANGIAN, learning_rate=0.0)
    with pytest.raises(ContractViolation):
        AgentConfig(CUCRL_OPTIMISTIC, bonus_coefficient=-1.0)


def test_rng_streams_are_labelled():
    a = rng_stream(3, "env").random(4)
    assert np.array_equal(a, rng_stream(3, "env").random(4))
    assert not np.array_equal(a, rng_stream(3, "act").random(4))
    assert not np.array_equal(a, rng_stream(4, "env").random(4))


# dual

def test_dual_rejects_negative_multipliers():
    with pytest.raises(ContractViolation):
        DualState(np.array([-0.1]), 0.2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 5.0), st.floats(0, 1))
def test_multiplier_stays_non_negative(costs, eta, tau):
    dual = DualState.initial(1, eta)
    for c in costs:
        prev = dual.lambdas[0]
        dual = dual.step([c], [tau])
        assert dual.lambdas[0] >= 0.0
        assert dual.lambdas[0] == max(0.0, prev + eta * (c - tau))


def _one_state_tables():
    return exact_tables(one_state(0.5), 1)


def test_lambda_recurrence_on_one_state():
    cmdp = one_state(0.5)
    counts, est = _one_state_tables()
    rng = np.random.default_rng(0)
    dual = DualState.initial(1, 0.2)
    lams, costs, pols = [], [], []
    for _ in range(50):
        lams.append(float(dual.lambdas[0]))
        plan, dual = psrl_lagrangian_plan(counts, est, dual, cmdp, rng)
        pols.append(plan.policy)
        costs.append(average_values(plan.policy, cmdp).cost_rates[0])
    # scalar oracle: greedy between r=1,c=1 and r=0,c=0 under r + lam (0.5 - c)
    lam, ref = 0.0, []
    for _ in range(50):
        ref.append(lam)
        q0, q1 = 1.0 + lam * (0.5 - 1.0), lam * 0.5
        c = 1.0 if q0 >= q1 - 1e-12 else 0.0
        lam = max(0.0, lam + 0.2 * (c - 0.5))
    assert np.max(np.abs(np.array(lams) - ref)) <= 1e-12
    # the mixture of the first 50 still carries the ten warm-up epochs at cost 1
    mix = MixturePolicy.empty(1, 2)
    for k, p in enumerate(pols, 1):
        mix = mixture_update(mix, p, k)
    assert average_values(mix.as_policy(), cmdp).cost_rates[0] == pytest.approx(0.6, abs=1e-9)


def test_mixture_cost_settles_at_budget():
    cmdp = one_state(0.5)
    counts, est = _one_state_tables()
    rng = np.random.default_rng(1)
    dual = DualState.initial(1, 0.2)
    mix = MixturePolicy.empty(1, 2)
    for k in range(1, 1001):
        plan, dual = psrl_lagrangian_plan(counts, est, dual, cmdp, rng)
        mix = mixture_update(mix, plan.policy, k)
    assert average_values(mix.as_policy(), cmdp).cost_rates[0] == pytest.approx(0.5, abs=0.05)


def test_zero_lambda_is_plain_reward_planning():
    cmdp = random_cmdp(np.random.default_rng(4), 4, 3, threshold=0.3)
    counts, est = exact_tables(cmdp, 5)
    plan, _ = psrl_lagrangian_plan(counts, est, DualState.initial(1, 0.2), cmdp, np.random.default_rng(9))
    p = sample_transitions(counts, np.random.default_rng(9))
    ref, _ = value_iteration(ScalarizedMdp(p, est.mean_reward, cmdp.initial_dist), 0.95, 1e-3, 50_000)
    assert plan.policy.probs.tobytes() == ref.probs.tobytes()


def test_huge_lambda_minimises_cost():
    cmdp = random_cmdp(np.random.default_rng(5), 4, 3, threshold=0.3)
    counts, est = exact_tables(cmdp, 5)
    plan, _ = psrl_lagrangian_plan(counts, est, DualState(np.array([1e6]), 0.2), cmdp, np.random.default_rng(9))
    p = sample_transitions(counts, np.random.default_rng(9))
    ref, _ = value_iteration(ScalarizedMdp(p, -est.mean_costs[0], cmdp.initial_dist), 0.95, 1e-9, 50_000)
    assert plan.policy.probs.tobytes() == ref.probs.tobytes()
    plan, _ = psrl_lagrangian_plan(*_one_state_tables(), DualState(np.array([1e6]), 0.2), one_state(0.5),
                                   np.random.default_rng(0))
    assert plan.policy.probs[0].tolist() == [0.0, 1.0]


# posterior sampling with transitions

def test_huge_counts_recover_true_lp():
    env = make_env("marsrover_4x4", 0.2)
    counts, est = exact_tables(env.cmdp, 10**7)
    plan = psrl_transitions_plan(counts, est, env.cmdp, np.random.default_rng(0))
    got = average_values(plan.policy, env.cmdp)
    _, opt = solve_cmdp(env.cmdp)
    assert got.reward_rate == pytest.approx(opt.reward_rate, abs=1e-2)
    assert got.cost_rates[0] == pytest.approx(opt.cost_rates[0], abs=1e-2)


def test_one_state_policy_ignores_samples():
    counts, est = _one_state_tables()
    for seed in range(5):
        plan = psrl_transitions_plan(counts, est, one_state(0.5), np.random.default_rng(seed))
        assert plan.policy.probs[0] == pytest.approx([0.5, 0.5], abs=1e-9)


def test_same_seed_same_policy():
    cmdp = random_cmdp(np.random.default_rng(6), 5, 3, threshold=0.4)
    counts, est = exact_tables(cmdp, 3)
    a = psrl_transitions_plan(counts, est, cmdp, np.random.default_rng(1)).policy.probs
    b = psrl_transitions_plan(counts, est, cmdp, np.random.default_rng(1)).policy.probs
    assert a.tobytes() == b.tobytes()


# optimistic baselines

def _plain(counts, est, cmdp):
    return lp_policy(cmdp.replace(transitions=empirical_transitions(counts), reward=est.mean_reward,
                                  costs=est.mean_costs))


@pytest.mark.parametrize("plan_fn", [cucrl_optimistic_plan, cucrl_conservative_plan])
def test_zero_bonus_is_plain_empirical_lp(plan_fn):
    cmdp = random_cmdp(np.random.default_rng(7), 4, 2, threshold=0.6)
    counts, est = exact_tables(cmdp, 7)
    got = plan_fn(counts, est, BonusConfig(0.0), cmdp, 100)
    assert got.policy.probs.tobytes() == _plain(counts, est, cmdp).policy.probs.tobytes()


def test_huge_bonus_frees_the_constraint():
    cmdp = random_cmdp(np.random.default_rng(8), 4, 2, threshold=0.0)
    counts, est = exact_tables(cmdp, 7)
    plan = cucrl_optimistic_plan(counts, est, BonusConfig(1e3), cmdp, 100)
    # every clipped cost is 0 and every clipped reward 1
    assert not plan.fallback
    assert plan.info["lp_value"] == pytest.approx(1.0, abs=1e-9)


def test_under_visited_pair_gains_and_inflated_costs_lose():
    cmdp = random_cmdp(np.random.default_rng(11), 3, 2, threshold=0.5)
    counts, est = exact_tables(cmdp, 10**4, skip=[(1, 0)])
    plain = _plain(counts, est, cmdp)
    opt = cucrl_optimistic_plan(counts, est, BonusConfig(1e-2), cmdp, 10**5)
    cons = cucrl_conservative_plan(counts, est, BonusConfig(1e-2), cmdp, 10**5)
    assert not (plain.fallback or opt.fallback or cons.fallback)
    assert opt.info["lp_value"] >= plain.info["lp_value"] - 1e-9
    # the conservative agent also inflates rewards, so hold those fixed: only
    # the shrunken feasible region separates it from this LP
    b = bonus(counts, 10**5, BonusConfig(1e-2))
    same_reward = lp_policy(cmdp.replace(transitions=empirical_transitions(counts),
                                         reward=np.clip(est.mean_reward + b, 0, 1), costs=est.mean_costs))
    assert cons.info["lp_value"] <= same_reward.info["lp_value"] + 1e-9


def test_confidence_planner_radius_zero_and_one_state():
    cmdp = random_cmdp(np.random.default_rng(12), 3, 2, threshold=0.5)
    counts, est = exact_tables(cmdp, 50)
    got = cucrl_transitions_plan(counts, est, BonusConfig(0.0), cmdp, 100)
    plain = _plain(counts, est, cmdp)
    assert got.info["objectives"][-1] == pytest.approx(plain.info["lp_value"], abs=1e-9)
    counts, est = _one_state_tables()
    got = cucrl_transitions_plan(counts, est, BonusConfig(1.0), one_state(0.5), 100)
    assert got.policy.probs[0] == pytest.approx([0.5, 0.5], abs=1e-9)


def test_confidence_planner_is_optimistic_on_two_states():
    cmdp = random_cmdp(np.random.default_rng(13), 2, 2, threshold=0.5)
    counts, est = exact_tables(cmdp, 20)
    got = cucrl_transitions_plan(counts, est, BonusConfig(0.05), cmdp, 1000)
    assert got.info["objectives"][-1] >= _plain(counts, est, cmdp).info["lp_value"] - 1e-9


# consistency given the true model

@pytest.mark.parametrize("algo", [PSRL_TRANSITIONS, CUCRL_OPTIMISTIC, CUCRL_CONSERVATIVE, CUCRL_TRANSITIONS])
def test_true_model_consistency(algo):
    env = make_env("marsrover_4x4", 0.2)
    counts, est = exact_tables(env.cmdp, 10**9)
    zero = BonusConfig(0.0)
    if algo == PSRL_TRANSITIONS:
        plan = psrl_transitions_plan(counts, est, env.cmdp, np.random.default_rng(0))
    elif algo == CUCRL_OPTIMISTIC:
        plan = cucrl_optimistic_plan(counts, est, zero, env.cmdp, 10)
    elif algo == CUCRL_CONSERVATIVE:
        plan = cucrl_conservative_plan(counts, est, zero, env.cmdp, 10)
    else:
        plan = cucrl_transitions_plan(counts, est, zero, env.cmdp, 10)
    got = average_values(plan.policy, env.cmdp)
    _, opt = solve_cmdp(env.cmdp)
    assert got.reward_rate == pytest.approx(opt.reward_rate, abs=1e-3)
    assert got.cost_rates[0] == pytest.approx(opt.cost_rates[0], abs=1e-3)


def test_true_model_consistency_lagrangian_mixture():
    # the mixture only approaches the optimum as epochs accumulate; a large
    # step size keeps the warm-up to a couple of epochs
    cmdp = one_state(0.5)
    counts, est = _one_state_tables()
    rng = np.random.default_rng(2)
    dual = DualState.initial(1, 1.0)
    mix = MixturePolicy.empty(1, 2)
    for k in range(1, 4001):
        plan, dual = psrl_lagrangian_plan(counts, est, dual, cmdp, rng)
        mix = mixture_update(mix, plan.policy, k)
    got = average_values(mix.as_policy(), cmdp)
    assert got.reward_rate == pytest.approx(0.5, abs=1e-3)
    assert got.cost_rates[0] == pytest.approx(0.5, abs=1e-3)


# full runs

@pytest.mark.parametrize("algo", ALGORITHMS)
def test_single_step_run(algo):
    log = run_agent(make_env("one_state", 0.5), preset("one_state", algo), 1, 0)
    assert len(log) == 1 and log.num_epochs == 1


def test_zero_horizon_is_rejected():
    with pytest.raises(ContractViolation):
        run_agent(make_env("one_state", 0.5), preset("one_state", PSRL_TRANSITIONS), 0, 0)


@pytest.mark.parametrize("algo", ALGORITHMS)
def test_runs_are_deterministic(algo):
    env = make_env("marsrover_4x4", 0.2)
    cfg = preset("marsrover_4x4", algo)
    a = run_agent(env, cfg, 400, 5, diagnostics=False)
    b = run_agent(env, cfg, 400, 5, diagnostics=False)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != run_agent(env, cfg, 400, 6, diagnostics=False).fingerprint()


def test_logged_multipliers_follow_the_dual_step():
    env = make_env("marsrover_4x4", 0.2)
    log = run_agent(env, preset("marsrover_4x4", PSRL_LAGRANGIAN), 300, 0)
    lam = [e.info["lambda"][0] for e in log.events]
    for k in range(len(lam) - 1):
        step = lam[k] + 0.2 * (log.events[k].info["planned_cost"][0] - 0.2)
        assert lam[k + 1] == pytest.approx(max(0.0, step), abs=1e-12)
    assert all("mixture_true" in e.info for e in log.events)


# The Lagrangian agent executes the uniform mixture of every epoch policy. On
# this two-state corridor the many short early epochs keep a weight that
# holds its average reward near 0.457 at this horizon; see the decisions log.
_CORRIDOR = [pytest.param(a, marks=pytest.mark.xfail(strict=True, reason="early epochs dominate the mixture"))
             if a == PSRL_LAGRANGIAN else a for a in ALGORITHMS]


@pytest.mark.parametrize("algo", _CORRIDOR)
def test_corridor_reaches_lp_optimum(algo):
    env = make_env("corridor_1x2", 0.2)
    _, opt = solve_cmdp(env.cmdp)
    log = run_agent(env, preset("corridor_1x2", algo), 100_000, 0)
    assert log.rewards.mean() == pytest.approx(opt.reward_rate, abs=0.02)
    assert log.costs.mean() <= env.cmdp.thresholds[0] + 0.02
