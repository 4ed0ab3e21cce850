"""Tabular constrained MDPs, stationary policies and occupancy measures.

Arrays follow one layout everywhere in the package:

* ``transitions[s, a, s']``
* ``reward[s, a]``
* ``costs[i, s, a]`` for cost channel ``i``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_TOL = 1e-9
POWER_TOL = 1e-8
POWER_MAX_SWEEPS = 100_000
ZERO_MASS_TOL = 1e-12


class ContractViolation(ValueError):
    """An argument broke the documented contract of an operation."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _check_rows(probs: np.ndarray, what: str, tol: float = ROW_TOL) -> None:
    if np.any(probs < -tol):
        raise ContractViolation(f"{what} has negative entries")
    bad = np.abs(probs.sum(axis=-1) - 1.0) > tol
    if np.any(bad):
        raise ContractViolation(f"{what} rows must sum to 1 (first bad row {np.argwhere(bad)[0].tolist()})")


@dataclass(frozen=True)
class Cmdp:
    transitions: np.ndarray
    reward: np.ndarray
    costs: np.ndarray
    thresholds: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        S, A = r.shape
        c = np.asarray(self.costs, dtype=float).reshape(-1, S, A)
        tau = np.asarray(self.thresholds, dtype=float).reshape(-1)
        rho = np.asarray(self.initial_dist, dtype=float)
        if p.shape != (S, A, S):
            raise ContractViolation(f"transitions shape {p.shape} does not match reward shape {r.shape}")
        if tau.shape[0] != c.shape[0]:
            raise ContractViolation("one threshold per cost channel is required")
        if rho.shape != (S,):
            raise ContractViolation("initial_dist must be a vector over states")
        _check_rows(p, "transitions")
        _check_rows(rho, "initial_dist")
        for name, table in (("reward", r), ("costs", c)):
            if np.any(table < 0.0) or np.any(table > 1.0):
                raise ContractViolation(f"{name} entries must lie in [0, 1]")
        for name, value in (("transitions", p), ("reward", r), ("costs", c),
                            ("thresholds", tau), ("initial_dist", rho)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.costs.shape[0]

    def replace(self, **changes) -> "Cmdp":
        fields = dict(transitions=self.transitions, reward=self.reward, costs=self.costs,
                      thresholds=self.thresholds, initial_dist=self.initial_dist)
        fields.update(changes)
        return Cmdp(**fields)


@dataclass(frozen=True)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ContractViolation("policy table must be 2-d (states x actions)")
        _check_rows(probs, "policy")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, num_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class MixturePolicy:
    """Running average of per-episode policies.

    ``episode_index == 0`` is the all-zero starting table; from episode 1 on
    every row is a probability vector.
    """

    probs: np.ndarray
    episode_index: int = 0

    @classmethod
    def empty(cls, num_states: int, num_actions: int) -> "MixturePolicy":
        return cls(np.zeros((num_states, num_actions)), 0)

    def as_policy(self) -> Policy:
        if self.episode_index < 1:
            raise ContractViolation("the empty mixture is not a policy yet")
        return Policy(self.probs)


@dataclass(frozen=True)
class OccupancyMeasure:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim != 2:
            raise ContractViolation("occupancy measure must be 2-d (states x actions)")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    def flow_residual(self, transitions: np.ndarray) -> float:
        """Largest violation of the balance equations under ``transitions``."""
        inflow = np.einsum("sa,sat->t", self.mu, transitions)
        return float(np.max(np.abs(self.mu.sum(axis=1) - inflow)))


@dataclass(frozen=True)
class AverageValues:
    reward_rate: float
    cost_rates: np.ndarray = field(default_factory=lambda: np.zeros(0))


def induced_chain(policy: Policy, transitions: np.ndarray) -> np.ndarray:
    """State-to-state matrix ``P_pi[s, s']`` of the chain under ``policy``."""
    return np.einsum("sa,sat->st", policy.probs, transitions)


def stationary_distribution(policy: Policy, cmdp: Cmdp, start=None,
                            tol: float = POWER_TOL, max_sweeps: int = POWER_MAX_SWEEPS) -> np.ndarray:
    """Long-run state distribution reached from ``start`` (default: the initial distribution).

    Power iteration runs on the lazy chain ``(I + P_pi) / 2``, which has the
    same fixed point as ``P_pi`` but no periodicity, so deterministic cycles
    converge too.
    """
    P = induced_chain(policy, cmdp.transitions)
    d = np.array(cmdp.initial_dist if start is None else start, dtype=float)
    total = d.sum()
    if total <= 0:
        raise ContractViolation("start vector must have positive mass")
    d /= total
    residual = np.inf
    for _ in range(max_sweeps):
        dP = d @ P
        residual = float(np.max(np.abs(dP - d)))
        if residual <= tol:
            return dP / dP.sum()
        d = 0.5 * (d + dP)
    raise ConvergenceError("power iteration did not converge", residual)


def average_values(policy: Policy, cmdp: Cmdp, **kwargs) -> AverageValues:
    d = stationary_distribution(policy, cmdp, **kwargs)
    reward_rate = float(d @ np.sum(policy.probs * cmdp.reward, axis=1))
    cost_rates = np.einsum("s,sa,isa->i", d, policy.probs, cmdp.costs)
    return AverageValues(reward_rate, cost_rates)


def occupancy_to_policy(occupancy: OccupancyMeasure, mass_tol: float = ZERO_MASS_TOL) -> Policy:
    """``mu(s, a) / sum_a mu(s, a)``; states with mass at most ``mass_tol`` get uniform rows.

    The tolerance matters: an LP basis can leave rounding residue such as
    1e-18 on a state the optimum never visits, which would otherwise pin a
    deterministic action there.
    """
    mu = np.clip(occupancy.mu, 0.0, None)
    mass = mu.sum(axis=1, keepdims=True)
    mass = np.where(mass > mass_tol, mass, 0.0)
    A = mu.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(mass > 0, mu / np.where(mass > 0, mass, 1.0), 1.0 / A)
    # renormalise once more so rows are exact to rounding
    probs /= probs.sum(axis=1, keepdims=True)
    return Policy(probs)


def policy_to_occupancy(policy: Policy, cmdp: Cmdp, **kwargs) -> OccupancyMeasure:
    d = stationary_distribution(policy, cmdp, **kwargs)
    return OccupancyMeasure(d[:, None] * policy.probs)


def occupancy_values(occupancy: OccupancyMeasure, cmdp: Cmdp) -> AverageValues:
    """Reward and cost rates of an occupancy measure (the LP objective side)."""
    mu = occupancy.mu
    return AverageValues(float(np.sum(mu * cmdp.reward)),
                         np.einsum("sa,isa->i", mu, cmdp.costs))


def mixture_update(prev: MixturePolicy, new_policy: Policy, k: int) -> MixturePolicy:
    if k < 1:
        raise ContractViolation(f"episode index must be >= 1, got {k}")
    if prev.episode_index != k - 1:
        raise ContractViolation(
            f"mixture holds episode {prev.episode_index}, cannot fold in episode {k}")
    if prev.probs.shape != new_policy.probs.shape:
        raise ContractViolation("policy shapes differ")
    probs = prev.probs + (new_policy.probs - prev.probs) / k
    return MixturePolicy(probs, k)
