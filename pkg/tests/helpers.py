"""Small instances and brute-force oracles shared by the tests."""
import numpy as np

from pscmdp.cmdp import Cmdp


def one_state(threshold=0.5):
    """a0 pays reward 1 at cost 1; a1 pays nothing."""
    return Cmdp(np.ones((1, 2, 1)), [[1.0, 0.0]], [[[1.0, 0.0]]], [threshold], [1.0])


def random_cmdp(rng, S, A, m=1, threshold=None):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    r = rng.random((S, A))
    c = rng.random((m, S, A))
    tau = rng.random(m) if threshold is None else np.full(m, threshold)
    rho = np.zeros(S)
    rho[0] = 1.0
    return Cmdp(P, r, c, tau, rho)


def _values_2x2(cmdp, p, q):
    """Closed-form average reward and cost of the policy playing a0 with prob p in s0, q in s1.

    ``p`` and ``q`` broadcast against each other.
    """
    P, r, c = cmdp.transitions, cmdp.reward, cmdp.costs[0]
    p, q = np.broadcast_arrays(np.asarray(p, float), np.asarray(q, float))
    away = p * P[0, 0, 1] + (1 - p) * P[0, 1, 1]   # s0 -> s1
    back = q * P[1, 0, 0] + (1 - q) * P[1, 1, 0]   # s1 -> s0
    tot = away + back
    # with both states absorbing the chain stays where it starts, which is s0
    d0 = np.where(tot > 0, back / np.where(tot > 0, tot, 1.0), 1.0)
    rew = d0 * (p * r[0, 0] + (1 - p) * r[0, 1]) + (1 - d0) * (q * r[1, 0] + (1 - q) * r[1, 1])
    cost = d0 * (p * c[0, 0] + (1 - p) * c[0, 1]) + (1 - d0) * (q * c[1, 0] + (1 - q) * c[1, 1])
    return rew, cost


def _best_over_q(cmdp, p):
    """Best feasible reward for each first-state probability in ``p``.

    For fixed ``p`` both rates are ratios of affine functions of ``q``, hence
    monotone in ``q``: the feasible ``q`` form an interval found by bisection
    and the best ``q`` is one of its ends.
    """
    tau = float(cmdp.thresholds[0]) + 1e-12
    p = np.asarray(p, float)
    _, c0 = _values_2x2(cmdp, p, 0.0)
    _, c1 = _values_2x2(cmdp, p, 1.0)
    lo, hi = np.zeros_like(p), np.ones_like(p)
    # keep lo on the feasible side wherever exactly one end is feasible
    flip = (c1 <= tau) & (c0 > tau)
    lo[flip], hi[flip] = 1.0, 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        ok = _values_2x2(cmdp, p, mid)[1] <= tau
        lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
    best = np.full(p.shape, -np.inf)
    for q in (np.zeros_like(p), np.ones_like(p), lo):
        rew, cost = _values_2x2(cmdp, p, q)
        best = np.maximum(best, np.where(cost <= tau, rew, -np.inf))
    return best


def grid_search_2x2(cmdp, step=0.02, min_width=1e-10):
    """Best feasible randomised policy on a 2-state, 2-action, 1-constraint CMDP.

    Scans the probability of action 0 in the first state on a grid (the
    second state's probability is resolved by bisection), then refines
    around the best point with a local stencil, halving its width whenever
    a sweep finds nothing better. Returns ``-inf`` when nothing is feasible.
    """
    grid = np.round(np.arange(0.0, 1.0 + 1e-9, step), 10)
    vals = _best_over_q(cmdp, grid)
    i = int(np.argmax(vals))
    best, arg = vals[i], grid[i]
    if not np.isfinite(best):
        return -np.inf
    offsets = np.linspace(-1.0, 1.0, 5)
    width = step
    while width > min_width:
        ps = np.clip(arg + width * offsets, 0, 1)
        vals = _best_over_q(cmdp, ps)
        j = int(np.argmax(vals))
        if vals[j] > best + 1e-15:
            best, arg = vals[j], ps[j]
        else:
            width /= 2
    return float(best)
