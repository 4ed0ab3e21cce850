"""Gridworld CMDPs: Marsrover and Box.

Grid files are plain text. The first line is a header ``slip_prob=<p>``,
every further line is one row of cells::

    #  wall        .  empty      S  start
    G  goal        R  risky      B  box (Box layouts only)

Actions are ``up, down, right, left`` (indices 0..3). A move succeeds with
probability ``1 - slip_prob`` and otherwise goes to one of the two
perpendicular directions. Entering the goal pays reward 1; any action taken
at the goal returns the agent (and the box) to the initial configuration.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import NamedTuple

import numpy as np

from .cmdp import Cmdp

WALL, EMPTY, START, GOAL, RISKY, BOX = "#", ".", "S", "G", "R", "B"
CELL_CHARS = {WALL, EMPTY, START, GOAL, RISKY, BOX}
ACTIONS = ("up", "down", "right", "left")
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))
PERPENDICULAR = ((3, 2), (3, 2), (0, 1), (0, 1))
MAX_STATES = 100_000

Coord = tuple[int, int]


class GridParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = "" if line is None else f"line {line}" + ("" if column is None else f", column {column}")
        super().__init__(f"{where}: {message}" if where else message)
        self.line, self.column = line, column


class StateSpaceTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    rows: tuple[str, ...]
    slip_prob: float = 0.1
    slip_text: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.slip_text:
            object.__setattr__(self, "slip_text", repr(float(self.slip_prob)))
        if not 0.0 <= self.slip_prob < 1.0:
            raise GridParseError(f"slip_prob must lie in [0, 1), got {self.slip_prob}")

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    def tag(self, pos: Coord) -> str:
        r, c = pos
        if 0 <= r < self.height and 0 <= c < self.width:
            return self.rows[r][c]
        return WALL

    def cells(self, tag: str) -> list[Coord]:
        return [(r, c) for r, row in enumerate(self.rows) for c, ch in enumerate(row) if ch == tag]

    @property
    def start(self) -> Coord:
        return self.cells(START)[0]

    @property
    def goals(self) -> frozenset[Coord]:
        return frozenset(self.cells(GOAL))

    def free_cells(self) -> list[Coord]:
        return [(r, c) for r, row in enumerate(self.rows) for c, ch in enumerate(row) if ch != WALL]

    def slip_fraction(self) -> Fraction:
        return Fraction(self.slip_text)


@dataclass(frozen=True)
class BoxSpec:
    base: GridSpec
    box_start: Coord

    @property
    def slip_prob(self) -> float:
        return self.base.slip_prob

    def is_corner(self, pos: Coord) -> bool:
        walls = sum(self.base.tag((pos[0] + dr, pos[1] + dc)) == WALL for dr, dc in MOVES)
        return walls >= 2

    @property
    def corners(self) -> frozenset[Coord]:
        return frozenset(p for p in self.base.free_cells() if self.is_corner(p))


class EnvState(NamedTuple):
    agent: Coord
    box: Coord | None = None


def parse_grid_spec(text: str) -> GridSpec | BoxSpec:
    lines = [ln.rstrip() for ln in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise GridParseError("empty grid file")
    key, sep, value = lines[0].partition("=")
    if key.strip() != "slip_prob" or not sep:
        raise GridParseError("header must read 'slip_prob=<value>'", 1)
    slip_text = value.strip()
    try:
        slip = float(Fraction(slip_text))
    except (ValueError, ZeroDivisionError):
        raise GridParseError(f"bad slip_prob {slip_text!r}", 1) from None
    rows = lines[1:]
    if not rows:
        raise GridParseError("grid has no rows", 2)
    width = len(rows[0])
    starts, goals, boxes, risky = [], [], [], []
    for i, row in enumerate(rows):
        lineno = i + 2
        if len(row) != width:
            raise GridParseError(f"row has {len(row)} cells, expected {width}", lineno)
        for j, ch in enumerate(row):
            if ch not in CELL_CHARS:
                raise GridParseError(f"unknown cell character {ch!r}", lineno, j + 1)
            if ch == START:
                if starts:
                    first = starts[0]
                    raise GridParseError(
                        f"duplicate start 'S' (first start at line {first[0]}, column {first[1]})",
                        lineno, j + 1)
                starts.append((lineno, j + 1))
            elif ch == GOAL:
                goals.append((i, j))
            elif ch == BOX:
                if boxes:
                    raise GridParseError("duplicate box 'B'", lineno, j + 1)
                boxes.append((i, j))
            elif ch == RISKY:
                risky.append((lineno, j + 1))
    if not starts:
        raise GridParseError("grid has no start 'S'")
    if not goals:
        raise GridParseError("grid has no goal 'G'")
    if not boxes:
        return GridSpec(tuple(rows), slip, slip_text)
    if risky:
        raise GridParseError("Box layouts cannot contain risky cells", *risky[0])
    base = GridSpec(tuple(row.replace(BOX, EMPTY) for row in rows), slip, slip_text)
    spec = BoxSpec(base, boxes[0])
    if not spec.corners:
        raise GridParseError("Box layout has no corner cell")
    return spec


def serialize_grid_spec(spec: GridSpec | BoxSpec) -> str:
    grid = spec.base if isinstance(spec, BoxSpec) else spec
    rows = [list(row) for row in grid.rows]
    if isinstance(spec, BoxSpec):
        r, c = spec.box_start
        rows[r][c] = BOX
    return "\n".join([f"slip_prob={grid.slip_text}"] + ["".join(row) for row in rows]) + "\n"


ASSETS = ("marsrover_4x4", "marsrover_8x8", "box", "corridor_1x2")


def asset_text(name: str) -> str:
    try:
        return resources.files("pscmdp.assets").joinpath(f"{name}.txt").read_text()
    except FileNotFoundError:
        raise KeyError(f"unknown grid asset {name!r}; shipped: {', '.join(ASSETS)}") from None


def load_asset(name: str) -> GridSpec | BoxSpec:
    return parse_grid_spec(asset_text(name))


class GridWorld:
    """Enumerated state space and exact dynamics of a grid spec."""

    def __init__(self, spec: GridSpec | BoxSpec):
        self.spec = spec
        self.is_box = isinstance(spec, BoxSpec)
        self.grid = spec.base if self.is_box else spec
        self.initial = EnvState(self.grid.start, spec.box_start if self.is_box else None)
        self._slip = self.grid.slip_fraction()
        self.states = self._enumerate()
        self.index = {st: i for i, st in enumerate(self.states)}

    @property
    def num_states(self) -> int:
        return len(self.states)

    num_actions = len(ACTIONS)
    num_constraints = 1

    def _blocked_for_agent(self, pos: Coord) -> bool:
        return self.grid.tag(pos) == WALL

    def _blocked_for_box(self, pos: Coord) -> bool:
        return self.grid.tag(pos) in (WALL, GOAL)

    def move(self, state: EnvState, direction: int) -> EnvState:
        """Deterministic effect of moving in ``direction`` from ``state``."""
        dr, dc = MOVES[direction]
        r, c = state.agent
        target = (r + dr, c + dc)
        if self._blocked_for_agent(target):
            return state
        if state.box is not None and target == state.box:
            behind = (target[0] + dr, target[1] + dc)
            if self._blocked_for_box(behind):
                return state
            return EnvState(target, behind)
        return EnvState(target, state.box)

    def at_goal(self, state: EnvState) -> bool:
        return state.agent in self.grid.goals

    def cost(self, state: EnvState, next_state: EnvState) -> int:
        if self.is_box:
            return int(self.spec.is_corner(state.box))
        return int(self.grid.tag(next_state.agent) == RISKY)

    def reward(self, state: EnvState, next_state: EnvState) -> int:
        return int(not self.at_goal(state) and self.at_goal(next_state))

    def outcomes(self, state: EnvState, action: int) -> dict[EnvState, Fraction]:
        """Exact next-state distribution."""
        if self.at_goal(state):
            return {self.initial: Fraction(1)}
        dist: dict[EnvState, Fraction] = {}
        slip = self._slip
        branches = [(action, 1 - slip)] + [(d, slip / 2) for d in PERPENDICULAR[action]]
        for direction, prob in branches:
            if prob == 0:
                continue
            nxt = self.move(state, direction)
            dist[nxt] = dist.get(nxt, Fraction(0)) + prob
        return dist

    def _enumerate(self) -> list[EnvState]:
        seen = {self.initial}
        queue = deque([self.initial])
        while queue:
            st = queue.popleft()
            for a in range(len(ACTIONS)):
                for nxt in self.outcomes(st, a):
                    if nxt not in seen:
                        seen.add(nxt)
                        if len(seen) > MAX_STATES:
                            raise StateSpaceTooLarge(f"more than {MAX_STATES} reachable states")
                        queue.append(nxt)
        return sorted(seen, key=lambda st: (st.agent, st.box or (-1, -1)))

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Transitions, per-transition reward and cost, and their expectations.

        Probabilities are accumulated as fractions and rounded once.
        """
        S, A = self.num_states, self.num_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A, S))
        C = np.zeros((1, S, A, S))
        r_mean = np.zeros((S, A))
        c_mean = np.zeros((1, S, A))
        for i, st in enumerate(self.states):
            for a in range(A):
                exp_r, exp_c = Fraction(0), Fraction(0)
                for nxt, prob in self.outcomes(st, a).items():
                    j = self.index[nxt]
                    P[i, a, j] = float(prob)
                    R[i, a, j] = self.reward(st, nxt)
                    C[0, i, a, j] = self.cost(st, nxt)
                    exp_r += prob * R[i, a, j]
                    exp_c += prob * int(C[0, i, a, j])
                r_mean[i, a] = float(exp_r)
                c_mean[0, i, a] = float(exp_c)
        return P, R, C, r_mean, c_mean

    def true_cmdp(self, thresholds=(0.2,)) -> Cmdp:
        P, _, _, r, c = self.tables()
        rho = np.zeros(self.num_states)
        rho[self.index[self.initial]] = 1.0
        return Cmdp(P, r, c, np.asarray(thresholds, dtype=float), rho)

    def step(self, state: EnvState, action: int, rng: np.random.Generator):
        dist = self.outcomes(state, action)
        u = rng.random()
        acc = 0.0
        items = list(dist.items())
        nxt = items[-1][0]
        for cand, prob in items:
            acc += float(prob)
            if u < acc:
                nxt = cand
                break
        return nxt, float(self.reward(state, nxt)), (float(self.cost(state, nxt)),)


@functools.lru_cache(maxsize=32)
def grid_world(spec: GridSpec | BoxSpec) -> GridWorld:
    return GridWorld(spec)


def step(state: EnvState, action: int, spec: GridSpec | BoxSpec, rng: np.random.Generator):
    """Sample one transition: ``(next_state, reward, costs)``."""
    return grid_world(spec).step(state, action, rng)


def true_cmdp(spec: GridSpec | BoxSpec, thresholds=(0.2,)) -> Cmdp:
    return grid_world(spec).true_cmdp(thresholds)


@dataclass(frozen=True)
class TabularEnv:
    """Simulator driven by exported tables.

    ``reward_sas[s, a, s']`` and ``cost_sas[i, s, a, s']`` are the realised
    signals of a transition; ``cmdp`` carries their expectations.
    ``unvisited_reward`` is where the native reward scale has its zero; the
    learners' empirical means start there (see ``EmpiricalEstimates``).
    """

    name: str
    cmdp: Cmdp
    reward_sas: np.ndarray
    cost_sas: np.ndarray
    unvisited_reward: float = 0.0

    @property
    def num_states(self) -> int:
        return self.cmdp.num_states

    @property
    def num_actions(self) -> int:
        return self.cmdp.num_actions

    @property
    def num_constraints(self) -> int:
        return self.cmdp.num_constraints

    def with_thresholds(self, thresholds) -> "TabularEnv":
        return TabularEnv(self.name, self.cmdp.replace(thresholds=np.asarray(thresholds, dtype=float)),
                          self.reward_sas, self.cost_sas, self.unvisited_reward)

    def sampler(self) -> "_Sampler":
        return _Sampler(self)


class _Sampler:
    """Plain-Python lookup tables for the hot simulation loop."""

    def __init__(self, env: TabularEnv):
        P = env.cmdp.transitions
        S, A, _ = P.shape
        self.support, self.cdf, self.rewards, self.costs = [], [], [], []
        for s in range(S):
            sup_s, cdf_s, rew_s, cost_s = [], [], [], []
            for a in range(A):
                nz = np.flatnonzero(P[s, a] > 0)
                cum = np.cumsum(P[s, a, nz])
                cum[-1] = 1.0
                sup_s.append(nz.tolist())
                cdf_s.append(cum.tolist())
                rew_s.append(env.reward_sas[s, a, nz].tolist())
                cost_s.append([tuple(env.cost_sas[:, s, a, j].tolist()) for j in nz])
            self.support.append(sup_s)
            self.cdf.append(cdf_s)
            self.rewards.append(rew_s)
            self.costs.append(cost_s)
        rho = env.cmdp.initial_dist
        self.start_cdf = np.cumsum(rho).tolist()
        self.start_cdf[-1] = 1.0


# Gridworlds natively pay -1 per step and 0 on reaching the goal; the tables
# use that plus one, so the native zero sits at 1.
GRID_UNVISITED_REWARD = 1.0


def grid_env(spec: GridSpec | BoxSpec, thresholds=(0.2,), name: str = "grid") -> TabularEnv:
    world = grid_world(spec)
    P, R, C, r, c = world.tables()
    rho = np.zeros(world.num_states)
    rho[world.index[world.initial]] = 1.0
    return TabularEnv(name, Cmdp(P, r, c, np.asarray(thresholds, dtype=float), rho), R, C,
                      GRID_UNVISITED_REWARD)


def cmdp_env(cmdp: Cmdp, name: str = "cmdp") -> TabularEnv:
    """Simulator whose signals are the expected tables themselves."""
    S = cmdp.num_states
    R = np.repeat(cmdp.reward[:, :, None], S, axis=2)
    C = np.repeat(cmdp.costs[:, :, :, None], S, axis=3)
    return TabularEnv(name, cmdp, R, C)


def one_state_cmdp(threshold: float = 0.5) -> Cmdp:
    """Single state; action 0 pays reward 1 at cost 1, action 1 pays nothing."""
    return Cmdp(np.ones((1, 2, 1)), np.array([[1.0, 0.0]]), np.array([[[1.0, 0.0]]]),
                np.array([threshold]), np.array([1.0]))


BUILTIN_ENVS = ("one_state",)


def make_env(name: str, budget: float) -> TabularEnv:
    """Environment by name: a grid asset or a built-in instance."""
    if name == "one_state":
        return cmdp_env(one_state_cmdp(budget), name)
    return grid_env(load_asset(name), (budget,), name)
