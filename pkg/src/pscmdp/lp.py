"""Linear programming over occupancy measures.

``solve_lp`` is a two-phase revised simplex. It handles problems of the form::

    maximize    c @ x
    subject to  A_eq @ x == b_eq
                A_ub @ x <= b_ub
                x >= 0
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .cmdp import AverageValues, Cmdp, ContractViolation, OccupancyMeasure, occupancy_values

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
HARRIS_TOL = 1e-9
TIE_TOL = 1e-12
PERTURB = 1e-7
PERTURB_SHRINK = (1.0, 1e-2, 1e-4)
BLAND_AFTER = 50

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


class InfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class LpProblem:
    objective: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        n = c.size
        A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if b_eq.size != A_eq.shape[0] or b_ub.size != A_ub.shape[0]:
            raise ContractViolation("constraint matrices and right-hand sides disagree in size")
        if not (np.all(np.isfinite(b_eq)) and np.all(np.isfinite(b_ub))):
            raise ContractViolation("right-hand sides must be finite")
        for name, value in (("objective", c), ("A_eq", A_eq), ("b_eq", b_eq),
                            ("A_ub", A_ub), ("b_ub", b_ub)):
            object.__setattr__(self, name, value)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def max_violation(self, x: np.ndarray) -> float:
        viol = [float(np.max(-x, initial=0.0))]
        if self.b_eq.size:
            viol.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.b_ub.size:
            viol.append(float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        return max(viol)


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: np.ndarray
    objective_value: float
    duals_eq: np.ndarray | None = None
    duals_ub: np.ndarray | None = None
    iterations: int = 0


class _RevisedSimplex:
    """Revised simplex over ``M z = rhs, z >= 0``.

    The basis matrix is refactorised at every pivot, which keeps long runs
    of degenerate pivots from accumulating rounding error.
    """

    def __init__(self, M: np.ndarray, rhs: np.ndarray, basis: list[int]):
        self.M, self.rhs = M, rhs
        self.basis = list(basis)
        self.pivots = 0

    def _factor(self):
        return lu_factor(self.M[:, self.basis])

    def basic_values(self) -> np.ndarray:
        return lu_solve(self._factor(), self.rhs)

    def duals(self, c: np.ndarray) -> np.ndarray:
        return lu_solve(self._factor(), c[self.basis], trans=1)

    def run(self, c: np.ndarray, allowed: np.ndarray, budget: int, frozen=None, evict=None) -> str:
        """Maximise ``c @ z`` from the current basis.

        Pricing is Dantzig's largest reduced cost. After ``BLAND_AFTER``
        degenerate pivots in a row it switches to Bland's smallest-index rule,
        which cannot cycle, until a pivot makes progress again. The ratio test
        is Harris's two-pass variant, which prefers large pivot elements.

        Columns flagged in ``frozen`` never leave the basis; they mark
        dependent rows whose direction entries are zero up to rounding.
        Columns flagged in ``evict`` win ratio-test ties outside Bland mode,
        which is how phase 1 flushes artificials out of a degenerate basis.
        """
        M = self.M
        stalled = 0
        while True:
            lu = self._factor()
            xb = lu_solve(lu, self.rhs)
            y = lu_solve(lu, c[self.basis], trans=1)
            d = c - y @ M
            d[self.basis] = 0.0
            candidates = np.flatnonzero((d > OPT_TOL) & allowed)
            if candidates.size == 0:
                return OPTIMAL
            if self.pivots >= budget:
                return ITERATION_LIMIT
            bland = stalled >= BLAND_AFTER
            j = int(candidates[0] if bland else candidates[np.argmax(d[candidates])])
            w = lu_solve(lu, M[:, j])
            eligible = w > PIVOT_TOL
            if frozen is not None:
                eligible &= ~frozen[self.basis]
            rows = np.flatnonzero(eligible)
            if rows.size == 0:
                return UNBOUNDED
            xr = np.maximum(xb[rows], 0.0)
            wr = w[rows]
            ratios = xr / wr
            if bland:
                # textbook Bland: exact minimum-ratio ties, smallest index
                ok = ratios <= ratios.min() + TIE_TOL
            else:
                # Harris pass 1 bounds the step with basics relaxed by
                # HARRIS_TOL; pass 2 takes the largest pivot under that bound
                ok = ratios <= float(np.min((xr + HARRIS_TOL) / wr))
            if evict is not None and not bland:
                out = ok & evict[self.basis][rows]
                if out.any():
                    ok = out
            if bland:
                r = min(rows[ok], key=lambda i: self.basis[i])
            else:
                r = rows[ok][np.argmax(wr[ok])]
            step = max(xb[r], 0.0) / w[r]
            stalled = stalled + 1 if step <= HARRIS_TOL else 0
            self.basis[int(r)] = j
            self.pivots += 1


def solve_lp(problem: LpProblem, max_pivots: int | None = None) -> LpSolution:
    c, n = problem.objective, problem.num_vars
    p, q = problem.b_eq.size, problem.b_ub.size
    m = p + q

    # standard form: [A_eq 0; A_ub I] [x; s] = [b_eq; b_ub], plus one
    # artificial per row that has no usable slack
    rhs = np.concatenate([problem.b_eq, problem.b_ub])
    core = np.zeros((m, n + q))
    core[:p, :n] = problem.A_eq
    core[p:, :n] = problem.A_ub
    core[p:, n:] = np.eye(q)
    sign = np.where(rhs < 0, -1.0, 1.0)
    core *= sign[:, None]
    rhs = rhs * sign

    needs_art = [i for i in range(m) if i < p or sign[i] < 0]
    n_art = len(needs_art)
    N = n + q + n_art
    M = np.zeros((m, N))
    M[:, :n + q] = core
    basis = [n + (i - p) for i in range(m)]
    for k, i in enumerate(needs_art):
        M[i, n + q + k] = 1.0
        basis[i] = n + q + k
    if max_pivots is None:
        max_pivots = 50 * (m + N)
    if m == 0:
        if np.any(c > 0):
            return LpSolution(UNBOUNDED, np.zeros(n), float("nan"))
        return LpSolution(OPTIMAL, np.zeros(n), 0.0, np.zeros(0), np.zeros(0))

    is_art = np.zeros(N, dtype=bool)
    is_art[n + q:] = True
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    # Flow rows all have zero right-hand side, so vertices are massively
    # degenerate. Pivoting happens on rhs + M delta for a small random
    # delta > 0 on the non-artificial columns, i.e. with lower bounds shifted
    # to -delta. Unlike a raw rhs bump this stays consistent when rows are
    # dependent. The final basis is re-checked against the true rhs; if it is
    # infeasible there (a feasible set thinner than delta), the solve restarts
    # with a smaller delta, and finally without perturbation.
    shape = M[:, :n + q] @ (1.0 + np.random.default_rng(0).random(n + q))
    works = [rhs + PERTURB * scale * f * shape for f in PERTURB_SHRINK] + [rhs]
    for work in works:
        sol = _two_phase(M, rhs, work, basis, is_art, c, n, q, sign, scale, max_pivots)
        if sol is not None:
            return sol
    return LpSolution(ITERATION_LIMIT, np.zeros(n), float("nan"))


def _two_phase(M, rhs, work, basis, is_art, c, n, q, sign, scale, max_pivots):
    """Phases 1 and 2 pivoting on ``work``; ``None`` if the resulting basis is
    infeasible for the true ``rhs``."""
    m, N = M.shape
    p = m - q
    tol = FEAS_TOL * scale
    spx = _RevisedSimplex(M, work, basis)

    def true_values():
        return lu_solve(spx._factor(), rhs)

    if is_art.any():
        # artificials may leave but never re-enter
        status = spx.run(np.where(is_art, -1.0, 0.0), ~is_art, max_pivots, evict=is_art)
        if status == ITERATION_LIMIT:
            return LpSolution(ITERATION_LIMIT, np.zeros(n), float("nan"), iterations=spx.pivots)
        xb = true_values()
        if xb.min() < -tol:
            return None
        infeasibility = float(sum(v for v, b in zip(xb, spx.basis) if is_art[b]))
        if infeasibility > tol:
            return LpSolution(INFEASIBLE, np.zeros(n), float("nan"), iterations=spx.pivots)
        # swap artificials for structural columns; rows where no swap keeps
        # the basis nonsingular are dependent and keep theirs
        for r in range(m):
            if not is_art[spx.basis[r]]:
                continue
            lu = spx._factor()
            row = lu_solve(lu, np.eye(m)[r], trans=1) @ M[:, :n + q]
            for j in np.flatnonzero(np.abs(row) > 1e-7):
                if int(j) not in spx.basis:
                    spx.basis[r] = int(j)
                    break

    c2 = np.zeros(N)
    c2[:n] = c
    status = spx.run(c2, ~is_art, max_pivots, frozen=is_art)
    if status != OPTIMAL:
        return LpSolution(status, np.zeros(n), float("nan"), iterations=spx.pivots)
    xb = true_values()
    if xb.min() < -tol:
        return None
    z = np.zeros(N)
    z[spx.basis] = xb
    x = np.clip(z[:n], 0.0, None)
    y = spx.duals(c2) * sign
    return LpSolution(OPTIMAL, x, float(c @ x), duals_eq=y[:p], duals_ub=y[p:], iterations=spx.pivots)


def build_cmdp_lp(cmdp: Cmdp) -> LpProblem:
    """Occupancy-measure LP; variable ``s * A + a`` is ``mu(s, a)``."""
    S, A = cmdp.num_states, cmdp.num_actions
    out = np.kron(np.eye(S), np.ones((1, A)))
    inflow = cmdp.transitions.reshape(S * A, S).T
    A_eq = np.vstack([out - inflow, np.ones((1, S * A))])
    b_eq = np.zeros(S + 1)
    b_eq[S] = 1.0
    A_ub = cmdp.costs.reshape(cmdp.num_constraints, S * A)
    return LpProblem(cmdp.reward.reshape(-1), A_eq, b_eq, A_ub, np.asarray(cmdp.thresholds))


def solve_cmdp_lp(cmdp: Cmdp) -> LpSolution:
    return solve_lp(build_cmdp_lp(cmdp))


def solve_cmdp(cmdp: Cmdp) -> tuple[OccupancyMeasure, AverageValues]:
    sol = solve_cmdp_lp(cmdp)
    if sol.status != OPTIMAL:
        raise InfeasibleError(f"occupancy LP not solved: {sol.status}")
    occ = OccupancyMeasure(sol.x.reshape(cmdp.num_states, cmdp.num_actions))
    return occ, occupancy_values(occ, cmdp)


def max_slack_occupancy(cmdp: Cmdp) -> tuple[OccupancyMeasure, float]:
    """Occupancy maximising the smallest cost slack ``tau_i - J(c_i)``.

    A negative slack means no policy meets every threshold.
    """
    base = build_cmdp_lp(cmdp)
    n = base.num_vars
    # free slack variable z = z_plus - z_minus appended to mu
    obj = np.concatenate([np.zeros(n), [1.0, -1.0]])
    A_eq = np.hstack([base.A_eq, np.zeros((base.A_eq.shape[0], 2))])
    A_ub = np.hstack([base.A_ub, np.ones((base.A_ub.shape[0], 1)), -np.ones((base.A_ub.shape[0], 1))])
    sol = solve_lp(LpProblem(obj, A_eq, base.b_eq, A_ub, base.b_ub))
    if sol.status != OPTIMAL:
        raise InfeasibleError(f"max-slack LP not solved: {sol.status}")
    mu = sol.x[:n].reshape(cmdp.num_states, cmdp.num_actions)
    return OccupancyMeasure(mu), float(sol.x[n] - sol.x[n + 1])
