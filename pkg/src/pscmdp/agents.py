"""The five learning agents and the epoch schedules that drive them.

Every agent plans at the start of an epoch and then acts without replanning
until its schedule says the epoch is over:

* PSRLTransitions: LP on a Dirichlet-sampled model, doubling epochs.
* PSRLLagrangian: value iteration on a sampled model with a Lagrangian
  pseudo-reward, projected dual step, executes the running mixture policy.
* CUCRLOptimistic: LP on ``r + b`` and ``c - b``, doubling epochs.
* CUCRLConservative: LP on ``r + b`` and ``c + b``; epoch ``k`` lasts ``k h``
  steps and opens with ``h`` uniform-random steps.
* CUCRLTransitions: alternating bilinear plan over a box of transitions,
  epochs of ``ceil(T ** alpha)`` steps.
"""
from __future__ import annotations

import logging
import math
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .cmdp import (AverageValues, Cmdp, ContractViolation, ConvergenceError, MixturePolicy, Policy,
                   average_values, induced_chain, mixture_update, occupancy_to_policy)
from .envs import TabularEnv
from .lp import InfeasibleError, max_slack_occupancy, solve_cmdp
from .metrics import EpochEvent, MetricsLog
from .planners import ConfidenceSet, ScalarizedMdp, bilinear_plan, value_iteration
from .posterior import (BonusConfig, CountTables, EmpiricalEstimates, bonus, empirical_transitions,
                        sample_transitions)

log = logging.getLogger(__name__)

PSRL_TRANSITIONS = "PSRLTransitions"
PSRL_LAGRANGIAN = "PSRLLagrangian"
CUCRL_OPTIMISTIC = "CUCRLOptimistic"
CUCRL_CONSERVATIVE = "CUCRLConservative"
CUCRL_TRANSITIONS = "CUCRLTransitions"
ALGORITHMS = (PSRL_TRANSITIONS, PSRL_LAGRANGIAN, CUCRL_OPTIMISTIC, CUCRL_CONSERVATIVE, CUCRL_TRANSITIONS)

# added to relaxed thresholds in the infeasible fallback so the re-solve is
# strictly feasible despite simplex rounding
FALLBACK_MARGIN = 1e-9

DOUBLING, LINEAR, FIXED = "doubling", "linear", "fixed"


@dataclass
class EpochSchedule:
    kind: str
    h: int = 0
    length: int = 0
    epoch_index: int = 0
    epoch_start: int = 0
    snapshot: np.ndarray | None = None

    @classmethod
    def doubling(cls) -> "EpochSchedule":
        return cls(DOUBLING)

    @classmethod
    def linear(cls, h: int) -> "EpochSchedule":
        if h < 1:
            raise ContractViolation("h must be >= 1")
        return cls(LINEAR, h=int(h))

    @classmethod
    def fixed(cls, alpha: float, horizon: int) -> "EpochSchedule":
        if not 0.0 < alpha <= 1.0:
            raise ContractViolation("alpha must lie in (0, 1]")
        # the small slack keeps exact powers such as 1000 ** (1/3) from rounding up
        return cls(FIXED, length=max(1, math.ceil(horizon ** alpha - 1e-9)))

    def begin(self, t: int, counts: CountTables) -> None:
        if self.epoch_index and t <= self.epoch_start:
            raise ContractViolation("epoch boundaries must be strictly increasing")
        self.epoch_index += 1
        self.epoch_start = t
        self.snapshot = counts.n_sa.copy()

    def planned_length(self) -> int | None:
        """Length of the current epoch; ``None`` for doubling epochs."""
        if self.kind == LINEAR:
            return self.epoch_index * self.h
        if self.kind == FIXED:
            return self.length
        return None


def doubling_should_end(schedule: EpochSchedule, counts: CountTables, s: int, a: int) -> bool:
    """True once the pair just visited has doubled its epoch-start count.

    A pair never visited before the epoch ends it on its first visit.
    """
    return bool(counts.n_sa[s, a] >= max(1, 2 * int(schedule.snapshot[s, a])))


def epoch_count_bound(num_states: int, num_actions: int, horizon: int) -> float:
    """``sqrt(2 S A T ln T)``, the usual ceiling on doubling epochs."""
    return math.sqrt(2 * num_states * num_actions * horizon * math.log(horizon))


@dataclass(frozen=True)
class DualState:
    lambdas: np.ndarray
    learning_rate: float

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1)
        if self.learning_rate <= 0:
            raise ContractViolation("learning rate must be positive")
        if np.any(lam < 0):
            raise ContractViolation("multipliers must be non-negative")
        object.__setattr__(self, "lambdas", lam)

    @classmethod
    def initial(cls, num_constraints: int, learning_rate: float) -> "DualState":
        return cls(np.zeros(num_constraints), learning_rate)

    def step(self, cost_rates, thresholds) -> "DualState":
        grad = np.asarray(cost_rates, dtype=float) - np.asarray(thresholds, dtype=float)
        return DualState(np.maximum(0.0, self.lambdas + self.learning_rate * grad), self.learning_rate)


@dataclass(frozen=True)
class AgentConfig:
    algorithm: str
    bonus_coefficient: float = 0.0
    learning_rate: float = 0.2
    discount: float = 0.95
    tolerance: float = 1e-3
    max_iter: int = 50_000
    random_steps: int = 20
    alpha: float = 1.0 / 3.0
    bilinear_max_iter: int = 20

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractViolation(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.bonus_coefficient < 0:
            raise ContractViolation("bonus coefficient must be non-negative")
        if self.learning_rate <= 0:
            raise ContractViolation("learning rate must be positive")
        if not 0.0 < self.discount < 1.0 or self.tolerance <= 0 or self.max_iter < 1:
            raise ContractViolation("bad planner settings")
        if self.random_steps < 1 or self.bilinear_max_iter < 1 or not 0.0 < self.alpha <= 1.0:
            raise ContractViolation("bad schedule settings")

    def schedule(self, horizon: int) -> EpochSchedule:
        if self.algorithm == CUCRL_CONSERVATIVE:
            return EpochSchedule.linear(self.random_steps)
        if self.algorithm == CUCRL_TRANSITIONS:
            return EpochSchedule.fixed(self.alpha, horizon)
        return EpochSchedule.doubling()

    @property
    def bonus_config(self) -> BonusConfig:
        return BonusConfig(self.bonus_coefficient)


# Selected hyperparameters per environment. The learning rate belongs to the
# Lagrangian agent, which is the only one with a dual step.
PRESETS: dict[str, dict[str, dict]] = {
    "marsrover_4x4": {
        CUCRL_OPTIMISTIC: dict(bonus_coefficient=1e-2),
        CUCRL_CONSERVATIVE: dict(bonus_coefficient=1e-2, random_steps=20),
        CUCRL_TRANSITIONS: dict(bonus_coefficient=1e-2, alpha=1 / 3, bilinear_max_iter=20),
        PSRL_LAGRANGIAN: dict(learning_rate=0.2),
        PSRL_TRANSITIONS: dict(),
    },
    "marsrover_8x8": {
        CUCRL_OPTIMISTIC: dict(bonus_coefficient=1e-2),
        CUCRL_CONSERVATIVE: dict(bonus_coefficient=1e-2, random_steps=1000),
        PSRL_LAGRANGIAN: dict(learning_rate=35e-4),
        PSRL_TRANSITIONS: dict(),
    },
    "box": {
        CUCRL_OPTIMISTIC: dict(bonus_coefficient=0.5),
        CUCRL_CONSERVATIVE: dict(bonus_coefficient=0.5, random_steps=1000),
        PSRL_LAGRANGIAN: dict(learning_rate=165e-6),
        PSRL_TRANSITIONS: dict(),
    },
}
# the small sanity instances borrow the 4x4 settings
PRESETS["corridor_1x2"] = PRESETS["marsrover_4x4"]
PRESETS["one_state"] = PRESETS["marsrover_4x4"]


def preset(env_name: str, algorithm: str, **overrides) -> AgentConfig:
    table = PRESETS.get(env_name, PRESETS["marsrover_4x4"])
    return AgentConfig(algorithm, **{**table.get(algorithm, {}), **overrides})


@dataclass
class PlanResult:
    policy: Policy
    fallback: bool = False
    info: dict = field(default_factory=dict)


def _unit(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def lp_policy(model: Cmdp) -> PlanResult:
    """Policy from the occupancy LP, with the least-violation fallback.

    When no policy meets every threshold, the smallest slack ``z*`` is
    maximised first; thresholds are then lifted by ``-z*`` and the LP is
    re-solved, so the policy earns the most reward among least-violating ones.
    """
    try:
        occ, values = solve_cmdp(model)
        return PlanResult(occupancy_to_policy(occ), False, {"lp_value": values.reward_rate})
    except InfeasibleError:
        pass
    occ, slack = max_slack_occupancy(model)
    relaxed = model.replace(thresholds=model.thresholds - min(slack, 0.0) + FALLBACK_MARGIN)
    try:
        occ, _ = solve_cmdp(relaxed)
    except InfeasibleError:
        log.warning("relaxed LP failed; keeping the max-slack occupancy")
    return PlanResult(occupancy_to_policy(occ), True, {"slack": slack})


def robust_average_values(policy: Policy, cmdp: Cmdp) -> AverageValues:
    """``average_values`` with a direct linear solve if power iteration stalls."""
    try:
        return average_values(policy, cmdp)
    except ConvergenceError as err:
        log.warning("power iteration stalled (%s); solving the balance equations directly", err)
    P = induced_chain(policy, cmdp.transitions)
    S = P.shape[0]
    lhs = np.vstack([P.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[S] = 1.0
    d = np.clip(np.linalg.lstsq(lhs, rhs, rcond=None)[0], 0.0, None)
    d /= d.sum()
    return AverageValues(float(d @ np.sum(policy.probs * cmdp.reward, axis=1)),
                         np.einsum("s,sa,isa->i", d, policy.probs, cmdp.costs))


def _empirical_model(estimates: EmpiricalEstimates, shell: Cmdp, transitions: np.ndarray,
                     reward=None, costs=None) -> Cmdp:
    reward = estimates.mean_reward if reward is None else reward
    costs = estimates.mean_costs if costs is None else costs
    return shell.replace(transitions=transitions, reward=_unit(reward), costs=_unit(costs))


def psrl_transitions_plan(counts: CountTables, estimates: EmpiricalEstimates, shell: Cmdp,
                          rng: np.random.Generator) -> PlanResult:
    p = sample_transitions(counts, rng)
    return lp_policy(_empirical_model(estimates, shell, p))


def psrl_lagrangian_plan(counts: CountTables, estimates: EmpiricalEstimates, dual: DualState, shell: Cmdp,
                         rng: np.random.Generator, discount: float = 0.95, tolerance: float = 1e-3,
                         max_iter: int = 50_000) -> tuple[PlanResult, DualState]:
    """Greedy policy for ``r + lambda (tau - c)`` on a sampled model, then one dual step.

    The dual gradient is the policy's cost rate on that same sampled model.
    """
    p = sample_transitions(counts, rng)
    model = _empirical_model(estimates, shell, p)
    slack = model.thresholds[:, None, None] - model.costs
    pseudo = model.reward + np.tensordot(dual.lambdas, slack, axes=1)
    policy, vf = value_iteration(ScalarizedMdp(p, pseudo, model.initial_dist), discount, tolerance, max_iter)
    if not vf.converged:
        log.warning("value iteration stopped at delta %.3e after %d sweeps", vf.last_delta, vf.iterations)
    planned = robust_average_values(policy, model)
    new_dual = dual.step(planned.cost_rates, model.thresholds)
    info = {"lambda": dual.lambdas.tolist(), "planned_cost": planned.cost_rates.tolist(),
            "vi_converged": vf.converged, "vi_sweeps": vf.iterations}
    return PlanResult(policy, False, info), new_dual


def cucrl_optimistic_plan(counts: CountTables, estimates: EmpiricalEstimates, bonus_cfg: BonusConfig,
                          shell: Cmdp, t: int) -> PlanResult:
    b = bonus(counts, t, bonus_cfg)
    model = _empirical_model(estimates, shell, empirical_transitions(counts),
                             estimates.mean_reward + b, estimates.mean_costs - b[None])
    return lp_policy(model)


def cucrl_conservative_plan(counts: CountTables, estimates: EmpiricalEstimates, bonus_cfg: BonusConfig,
                            shell: Cmdp, t: int) -> PlanResult:
    b = bonus(counts, t, bonus_cfg)
    model = _empirical_model(estimates, shell, empirical_transitions(counts),
                             estimates.mean_reward + b, estimates.mean_costs + b[None])
    return lp_policy(model)


def cucrl_transitions_plan(counts: CountTables, estimates: EmpiricalEstimates, bonus_cfg: BonusConfig,
                           shell: Cmdp, t: int, max_iter: int = 20) -> PlanResult:
    center = empirical_transitions(counts)
    conf = ConfidenceSet(center, bonus(counts, t, bonus_cfg))
    try:
        res = bilinear_plan(_unit(estimates.mean_reward), _unit(estimates.mean_costs), conf, shell, max_iter)
    except InfeasibleError:
        return lp_policy(_empirical_model(estimates, shell, center))
    info = {"objectives": res.objectives, "hit_infeasible": res.hit_infeasible}
    return PlanResult(occupancy_to_policy(res.occupancy), res.hit_infeasible, info)


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Generator for one named purpose; streams with different labels are independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


def _action_rows(policy: Policy) -> list:
    """Per state, either a single action or a cumulative distribution."""
    rows = []
    for row in policy.probs:
        nz = np.flatnonzero(row > 0)
        if nz.size == 1:
            rows.append(int(nz[0]))
            continue
        cum = np.cumsum(row)
        cum[nz[-1]:] = 1.0
        rows.append(cum.tolist())
    return rows


def _fold(counts: CountTables, estimates: EmpiricalEstimates, s, a, s2, r, c) -> None:
    """Batch version of ``record_step`` for one finished epoch."""
    np.add.at(counts.n_sa, (s, a), 1)
    np.add.at(counts.n_sas, (s, a, s2), 1)
    np.add.at(estimates.n_sa, (s, a), 1)
    np.add.at(estimates.reward_sums, (s, a), r)
    for i in range(c.shape[1]):
        np.add.at(estimates.cost_sums[i], (s, a), c[:, i])


def run_agent(env: TabularEnv, config: AgentConfig, horizon: int, seed: int,
              diagnostics: bool = True) -> MetricsLog:
    """One learning run of ``horizon`` steps.

    The environment, the planner's posterior draws and action selection each
    read their own random stream derived from ``seed``. With ``diagnostics``
    the Lagrangian agent records, per epoch, the true-model values of both the
    planned policy and the executed mixture.
    """
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    shell = env.cmdp
    S, A, m = env.num_states, env.num_actions, env.num_constraints
    smp = env.sampler()
    model_rng = rng_stream(seed, "model")
    env_u = rng_stream(seed, "env").random(horizon + 1).tolist()
    act_u = rng_stream(seed, "act").random(horizon).tolist()

    counts = CountTables.zeros(S, A)
    estimates = EmpiricalEstimates.zeros(S, A, m, env.unvisited_reward)
    schedule = config.schedule(horizon)
    dual = DualState.initial(m, config.learning_rate)
    mixture = MixturePolicy.empty(S, A)
    algo = config.algorithm

    states, actions, nexts, rewards, costs, epochs = [], [], [], [], [], []
    events: list[EpochEvent] = []
    n_flat = [0] * (S * A)
    s = bisect_right(smp.start_cdf, env_u[0])
    t = 0
    while t < horizon:
        schedule.begin(t, counts)
        k = schedule.epoch_index
        step_t = max(t, 1)
        try:
            if algo == PSRL_TRANSITIONS:
                plan = psrl_transitions_plan(counts, estimates, shell, model_rng)
            elif algo == PSRL_LAGRANGIAN:
                plan, dual = psrl_lagrangian_plan(counts, estimates, dual, shell, model_rng,
                                                  config.discount, config.tolerance, config.max_iter)
            elif algo == CUCRL_OPTIMISTIC:
                plan = cucrl_optimistic_plan(counts, estimates, config.bonus_config, shell, step_t)
            elif algo == CUCRL_CONSERVATIVE:
                plan = cucrl_conservative_plan(counts, estimates, config.bonus_config, shell, step_t)
            else:
                plan = cucrl_transitions_plan(counts, estimates, config.bonus_config, shell, step_t,
                                              config.bilinear_max_iter)
        except (InfeasibleError, ContractViolation) as err:
            log.warning("epoch %d: planner failed (%s); acting uniformly", k, err)
            plan = PlanResult(Policy.uniform(S, A), True, {"error": str(err)})

        executed = plan.policy
        if algo == PSRL_LAGRANGIAN:
            mixture = mixture_update(mixture, plan.policy, k)
            executed = mixture.as_policy()
            if diagnostics:
                pv = robust_average_values(plan.policy, shell)
                mv = robust_average_values(executed, shell)
                plan.info.update(planned_true=[pv.reward_rate, *pv.cost_rates.tolist()],
                                 mixture_true=[mv.reward_rate, *mv.cost_rates.tolist()])
        events.append(EpochEvent(k, t, plan.fallback, plan.info))

        rows = _action_rows(executed)
        random_steps = config.random_steps if algo == CUCRL_CONSERVATIVE else 0
        length = schedule.planned_length()
        end_at = horizon if length is None else min(horizon, t + length)
        doubling = schedule.kind == DOUBLING
        thresh = [max(1, 2 * n) for n in n_flat]
        t0 = t
        support, cdf, rew, cst = smp.support, smp.cdf, smp.rewards, smp.costs
        while t < end_at:
            u = act_u[t]
            if t - t0 < random_steps:
                a = min(int(u * A), A - 1)
            else:
                row = rows[s]
                a = row if row.__class__ is int else bisect_right(row, u)
            sup = support[s][a]
            j = 0 if len(sup) == 1 else bisect_right(cdf[s][a], env_u[t + 1])
            s2 = sup[j]
            states.append(s)
            actions.append(a)
            nexts.append(s2)
            rewards.append(rew[s][a][j])
            costs.append(cst[s][a][j])
            idx = s * A + a
            n_flat[idx] += 1
            t += 1
            s = s2
            if doubling and n_flat[idx] >= thresh[idx]:
                break
        epochs.extend([k] * (t - t0))
        _fold(counts, estimates, np.array(states[t0:t]), np.array(actions[t0:t]), np.array(nexts[t0:t]),
              np.array(rewards[t0:t]), np.array(costs[t0:t], dtype=float).reshape(t - t0, m))

    return MetricsLog(np.array(states, dtype=np.int64), np.array(actions, dtype=np.int64),
                      np.array(nexts, dtype=np.int64), np.array(rewards, dtype=float),
                      np.array(costs, dtype=float).reshape(horizon, m), np.array(epochs, dtype=np.int64),
                      events)
