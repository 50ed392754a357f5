"""Independent reference computations used by the tests.

Nothing here calls the package's solvers: the forward-solution oracle
integrates characteristics with scipy, and the path oracle enumerates
grid paths with its own per-step root finder.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

# lower forward solution of lam*u + p^2/2 + p*sin(x) = 0 at lam = 0.5, from
# the characteristic oracle below (rtol 1e-12), frozen to 8 digits
W_PLUS_HALF = {0.3: -0.11188854, 1.0: -1.17718370, np.pi / 2: -2.66611645,
               2.0: -3.96649704, 3.0: -6.96026344}


@lru_cache(maxsize=None)
def w_plus_characteristic(lam: float, x: float, eps: float = 1e-7) -> float:
    """Value of the lower forward solution at x in (0, pi), V = sin.

    Its graph is the unstable branch (in reversed time) of the rest point
    (0, 0, 0); we leave along the eigendirection p = -(2 + lam) x and stop
    when the orbit reaches x.  For x in (pi, 2 pi) use the reflection
    w(2 pi - x) = w(x).
    """
    def rhs(t, y):
        q, p, u = y
        return [-(p + np.sin(q)), p * (np.cos(q) + lam), -(0.5 * p * p - lam * u)]

    k = -(2.0 + lam)
    y0 = [eps, k * eps, 0.5 * k * eps**2]

    def hit(t, y):
        return y[0] - x
    hit.terminal = True
    sol = solve_ivp(rhs, [0.0, 400.0], y0, method="DOP853", rtol=1e-12, atol=1e-14, events=hit)
    if not sol.t_events[0].size:
        raise RuntimeError(f"characteristic did not reach x={x}")
    return float(sol.y_events[0][0][2])


def _arc(a, b, C):
    return np.mod(b - a + 0.5 * C, C) - 0.5 * C


def _solve_step(a, mid, vel, dt, lagr, tol=1e-13):
    """w = a + dt * L(mid, vel, w) by bisection (the map is a contraction)."""
    g = lambda w: w - a - dt * lagr(mid, vel, w)
    lo = a - 1.0 - np.abs(a)
    hi = a + 1.0 + np.abs(a)
    # widen until the brackets change sign everywhere
    for _ in range(200):
        bad = g(lo) > 0
        if not bad.any():
            break
        lo = np.where(bad, lo - 2 * (hi - lo), lo)
    for _ in range(200):
        bad = g(hi) < 0
        if not bad.any():
            break
        hi = np.where(bad, hi + 2 * (hi - lo), hi)
    for _ in range(200):
        m = 0.5 * (lo + hi)
        neg = g(m) < 0
        lo = np.where(neg, m, lo)
        hi = np.where(neg, hi, m)
        if np.max(hi - lo) < tol:
            break
    return 0.5 * (lo + hi)


def brute_force_forward(lagr, n_points: int, C: float, i0: int, u0: float, dt: float,
                        n_steps: int) -> np.ndarray:
    """min over every grid path i0 -> ... -> j of the terminal value, per j.

    Steps are straight chords along the shorter arc, evaluated at the chord
    midpoint; each step solves the implicit update on its own.  All paths
    are carried at once, so this is for small grids only.
    """
    x = np.arange(n_points) * C / n_points
    paths = np.array(list(itertools.product(range(n_points), repeat=n_steps - 1)), dtype=int)
    paths = np.hstack([np.full((paths.shape[0], 1), i0), paths]) if n_steps > 1 \
        else np.full((1, 1), i0)
    a = np.full(paths.shape[0], float(u0))
    for s in range(paths.shape[1] - 1):
        d = _arc(x[paths[:, s]], x[paths[:, s + 1]], C)
        a = _solve_step(a, x[paths[:, s]] + 0.5 * d, d / dt, dt, lagr)
    best = np.full(n_points, np.inf)
    last = paths[:, -1]
    for j in range(n_points):
        d = _arc(x[last], x[j], C)
        w = _solve_step(a, x[last] + 0.5 * d, d / dt, dt, lagr)
        best[j] = np.min(w)
    return best
