"""Dynamic-programming planner for scalarised MDPs and the alternating
planner for box confidence sets over transitions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cmdp import Cmdp, ContractViolation, OccupancyMeasure, Policy, _check_rows
from .lp import OPTIMAL, InfeasibleError, build_cmdp_lp, solve_lp

TIE_TOL = 1e-12


@dataclass(frozen=True)
class ScalarizedMdp:
    transitions: np.ndarray
    pseudo_reward: np.ndarray
    initial_dist: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.pseudo_reward, dtype=float)
        if p.shape != r.shape + (r.shape[0],):
            raise ContractViolation("transition tensor and pseudo-reward table disagree in shape")
        _check_rows(p, "transitions")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "pseudo_reward", r)
        rho = self.initial_dist
        rho = np.full(r.shape[0], 1.0 / r.shape[0]) if rho is None else np.asarray(rho, dtype=float)
        object.__setattr__(self, "initial_dist", rho)


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    gain: float
    converged: bool = True
    iterations: int = 0
    last_delta: float = 0.0


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Argmax per row; near-ties go to the lowest action index."""
    best = q.max(axis=1, keepdims=True)
    scale = np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - TIE_TOL * scale, axis=1)


def value_iteration(mdp: ScalarizedMdp, discount: float = 0.95, tolerance: float = 1e-3,
                    max_iter: int = 50_000) -> tuple[Policy, ValueFunction]:
    """Discounted value iteration, used as a proxy for the average-reward
    Bellman equation.

    Stops once the sup-norm change between two sweeps is at most
    ``tolerance``. The reported gain is ``(1 - discount) * rho @ v``.
    """
    if not 0.0 < discount < 1.0:
        raise ContractViolation("discount must lie in (0, 1)")
    if tolerance <= 0:
        raise ContractViolation("tolerance must be positive")
    P, r = mdp.transitions, mdp.pseudo_reward
    v = np.zeros(r.shape[0])
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        v_new = (r + discount * (P @ v)).max(axis=1)
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta <= tolerance:
            break
    q = r + discount * (P @ v)
    policy = Policy.deterministic(greedy_actions(q), r.shape[1])
    gain = (1.0 - discount) * float(mdp.initial_dist @ v)
    return policy, ValueFunction(v, gain, converged=delta <= tolerance, iterations=it, last_delta=delta)


def bellman_residual(mdp: ScalarizedMdp, values: np.ndarray, discount: float) -> float:
    tv = (mdp.pseudo_reward + discount * (mdp.transitions @ values)).max(axis=1)
    return float(np.max(np.abs(tv - values)))


@dataclass(frozen=True)
class ConfidenceSet:
    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.radius) < 0):
            raise ContractViolation("confidence radius must be non-negative")

    def contains(self, transitions: np.ndarray, tol: float = 1e-9) -> bool:
        gap = np.abs(transitions - self.center) - self.radius[..., None]
        return bool(np.all(gap <= tol))


def optimistic_rows(center: np.ndarray, radius: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per (s, a), the row inside ``|p - center| <= radius`` on the simplex
    maximising ``p @ values``.

    Every entry starts at its lower bound; leftover mass is handed out to
    next states in decreasing order of ``values`` up to their upper bounds.
    """
    lo = np.clip(center - radius[..., None], 0.0, 1.0)
    hi = np.clip(center + radius[..., None], 0.0, 1.0)
    order = np.argsort(-values, kind="stable")
    out = lo.copy()
    left = 1.0 - lo.sum(axis=-1)
    for s_next in order:
        give = np.minimum(hi[..., s_next] - lo[..., s_next], np.maximum(left, 0.0))
        out[..., s_next] += give
        left = left - give
    return out / out.sum(axis=-1, keepdims=True)


@dataclass
class BilinearResult:
    occupancy: OccupancyMeasure
    transitions: np.ndarray
    objectives: list[float] = field(default_factory=list)
    hit_infeasible: bool = False


def bilinear_plan(mean_reward: np.ndarray, mean_costs: np.ndarray, conf: ConfidenceSet,
                  shell: Cmdp, max_iter: int = 20, improvement_tol: float = 1e-6) -> BilinearResult:
    """Alternate between the occupancy LP for fixed transitions and an
    optimistic choice of transitions for the LP's flow prices.

    A candidate transition tensor is kept only if its LP optimum does not
    fall below the incumbent, so the objective sequence never decreases.
    """
    if max_iter < 1:
        raise ContractViolation("max_iter must be >= 1")
    model = shell.replace(transitions=conf.center, reward=mean_reward, costs=mean_costs)
    sol = solve_lp(build_cmdp_lp(model))
    if sol.status != OPTIMAL:
        raise InfeasibleError(f"bilinear plan: first LP {sol.status}")
    S, A = mean_reward.shape
    best_p, best_sol = conf.center, sol
    result = BilinearResult(OccupancyMeasure(sol.x.reshape(S, A)), best_p, [sol.objective_value])
    for _ in range(max_iter - 1):
        # flow-row duals act as relative state values
        prices = best_sol.duals_eq[:S]
        cand = optimistic_rows(conf.center, conf.radius, prices)
        cand_sol = solve_lp(build_cmdp_lp(model.replace(transitions=cand)))
        if cand_sol.status != OPTIMAL:
            result.hit_infeasible = True
            break
        if cand_sol.objective_value < best_sol.objective_value + improvement_tol:
            break
        best_p, best_sol = cand, cand_sol
        result.objectives.append(cand_sol.objective_value)
    result.occupancy = OccupancyMeasure(best_sol.x.reshape(S, A))
    result.transitions = best_p
    return result
