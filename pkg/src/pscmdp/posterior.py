"""Visit counts, empirical means, Dirichlet posterior draws and exploration bonuses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cmdp import ContractViolation


@dataclass
class CountTables:
    n_sa: np.ndarray
    n_sas: np.ndarray

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> "CountTables":
        return cls(np.zeros((num_states, num_actions), dtype=np.int64),
                   np.zeros((num_states, num_actions, num_states), dtype=np.int64))

    def copy(self) -> "CountTables":
        return CountTables(self.n_sa.copy(), self.n_sas.copy())

    def consistent(self) -> bool:
        return bool(np.array_equal(self.n_sas.sum(axis=2), self.n_sa))


@dataclass
class EmpiricalEstimates:
    """Running sums behind the sample-mean reward and cost tables.

    ``unvisited_reward`` is the origin of the environment's native reward
    scale: the mean is taken on rewards shifted by it, so a never-visited
    pair reads exactly that value. With the default 0 this is the plain
    ``sum / max(N, 1)``.
    """

    reward_sums: np.ndarray
    cost_sums: np.ndarray
    n_sa: np.ndarray
    unvisited_reward: float = 0.0

    @classmethod
    def zeros(cls, num_states: int, num_actions: int, num_constraints: int,
              unvisited_reward: float = 0.0) -> "EmpiricalEstimates":
        return cls(np.zeros((num_states, num_actions)),
                   np.zeros((num_constraints, num_states, num_actions)),
                   np.zeros((num_states, num_actions), dtype=np.int64),
                   float(unvisited_reward))

    @property
    def mean_reward(self) -> np.ndarray:
        o = self.unvisited_reward
        return o + (self.reward_sums - o * self.n_sa) / np.maximum(self.n_sa, 1)

    @property
    def mean_costs(self) -> np.ndarray:
        return self.cost_sums / np.maximum(self.n_sa, 1)[None]


def record_step(counts: CountTables, estimates: EmpiricalEstimates, s: int, a: int, s_next: int,
                reward: float, costs) -> None:
    """Fold one observed transition into the tables, in place."""
    if not 0.0 <= reward <= 1.0:
        raise ContractViolation(f"reward {reward} outside [0, 1]")
    for i, c in enumerate(costs):
        if not 0.0 <= c <= 1.0:
            raise ContractViolation(f"cost {c} outside [0, 1]")
        estimates.cost_sums[i, s, a] += c
    counts.n_sa[s, a] += 1
    counts.n_sas[s, a, s_next] += 1
    estimates.reward_sums[s, a] += reward
    estimates.n_sa[s, a] += 1


def empirical_transitions(counts: CountTables) -> np.ndarray:
    """Sample-mean transitions; never-visited pairs get the uniform row."""
    S = counts.n_sas.shape[2]
    n = counts.n_sa[..., None]
    return np.where(n > 0, counts.n_sas / np.maximum(n, 1), 1.0 / S)


def standard_gamma(shape, rng: np.random.Generator) -> np.ndarray:
    """Gamma(shape, 1) variates by Marsaglia and Tsang's squeeze method.

    Shapes below 1 use the ``G(a + 1) * U ** (1 / a)`` boost. Rejected
    entries are redrawn in vectorised rounds, in index order, so the output
    depends only on the generator state.
    """
    alpha = np.asarray(shape, dtype=float)
    if np.any(alpha <= 0):
        raise ContractViolation("gamma shape must be positive")
    flat = alpha.reshape(-1)
    boost = flat < 1.0
    a = np.where(boost, flat + 1.0, flat)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        x = rng.standard_normal(todo.size)
        u = rng.random(todo.size)
        v = (1.0 + c[todo] * x) ** 3
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            logv = np.log(np.where(ok, v, 1.0))
        accept = ok & ((u < 1.0 - 0.0331 * x ** 4) |
                       (np.log(u) < 0.5 * x * x + d[todo] * (1.0 - v + logv)))
        out[todo[accept]] = d[todo[accept]] * v[accept]
        todo = todo[~accept]
    if np.any(boost):
        idx = np.flatnonzero(boost)
        out[idx] *= rng.random(idx.size) ** (1.0 / flat[idx])
    return out.reshape(alpha.shape)


def dirichlet(alpha, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draws along the last axis of ``alpha``."""
    g = standard_gamma(alpha, rng)
    return g / g.sum(axis=-1, keepdims=True)


def sample_transitions(counts: CountTables, rng: np.random.Generator, prior: float = 1.0) -> np.ndarray:
    """One transition tensor from the posterior ``Dir(N(s, a, .) + prior)``."""
    return dirichlet(counts.n_sas + prior, rng)


@dataclass(frozen=True)
class BonusConfig:
    coefficient: float = 0.0

    def __post_init__(self):
        if self.coefficient < 0:
            raise ContractViolation("bonus coefficient must be non-negative")


def bonus(counts: CountTables, t: int, config: BonusConfig) -> np.ndarray:
    """Hoeffding-style bonus ``coef * sqrt(ln(2 S A t) / max(1, N))`` clipped to [0, 1]."""
    if t < 1:
        raise ContractViolation("t must be >= 1")
    S, A = counts.n_sa.shape
    log_term = math.log(2 * S * A * t)
    b = config.coefficient * np.sqrt(log_term / np.maximum(counts.n_sa, 1))
    return np.clip(b, 0.0, 1.0)
