"""Per-step traces of a run and the clipped regret series built from them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EpochEvent:
    """What happened at one replanning point."""

    index: int
    start: int
    fallback: bool = False
    info: dict = field(default_factory=dict)


@dataclass
class MetricsLog:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray  # (T, m)
    epochs: np.ndarray
    events: list[EpochEvent] = field(default_factory=list)

    @classmethod
    def allocate(cls, horizon: int, num_constraints: int) -> "MetricsLog":
        return cls(np.zeros(horizon, dtype=np.int64), np.zeros(horizon, dtype=np.int64),
                   np.zeros(horizon, dtype=np.int64), np.zeros(horizon),
                   np.zeros((horizon, num_constraints)), np.zeros(horizon, dtype=np.int64))

    def __len__(self) -> int:
        return self.rewards.size

    @property
    def num_epochs(self) -> int:
        return len(self.events)

    @property
    def running_avg_reward(self) -> np.ndarray:
        return np.cumsum(self.rewards) / np.arange(1, len(self) + 1)

    @property
    def running_avg_costs(self) -> np.ndarray:
        return np.cumsum(self.costs, axis=0) / np.arange(1, len(self) + 1)[:, None]

    def fingerprint(self) -> bytes:
        """Byte string covering every per-step array, for determinism checks."""
        parts = [self.states, self.actions, self.next_states, self.rewards, self.costs, self.epochs]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


@dataclass(frozen=True)
class RegretSeries:
    reward_regret: np.ndarray
    cost_regrets: np.ndarray  # (T, m)
    r_star: float


def compute_regret(log: MetricsLog, r_star: float, thresholds) -> RegretSeries:
    """Cumulative ``[r* - r_t]_+`` and ``[c_i,t - tau_i]_+``.

    The unclipped reward term can go negative while a policy overspends its
    budget, which is why both terms are clipped before summing.
    """
    tau = np.asarray(thresholds, dtype=float).reshape(1, -1)
    reward = np.cumsum(np.maximum(r_star - log.rewards, 0.0))
    costs = np.cumsum(np.maximum(log.costs - tau, 0.0), axis=0)
    return RegretSeries(reward, costs, float(r_star))
