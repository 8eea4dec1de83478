"""Projected first-order minimization.

One workhorse serves every inner problem in the package: projected
(sub)gradient descent with Armijo backtracking and geometric step regrowth,
plus a diminishing-step escape phase for nonsmooth objectives.  Support
functions put kinks exactly where minimizers like to sit, and monotone line
search alone stalls there: when no Armijo step is accepted, the method
switches to plain subgradient steps with c/sqrt(j) sizes, keeps the best
point seen, and resumes the monotone phase if the excursion found a better
one.  Smooth problems never enter the escape phase and pay nothing for it.
Problems here are small and dense, so robustness beats sophistication.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["OptResult", "minimize_projected", "maximize_projected"]

_ARMIJO = 1e-4
_STEP_GROW = 2.0
_STEP_SHRINK = 0.5
_MIN_STEP = 1e-20
_ESCAPE_ROUNDS = 10
_ESCAPE_ITERS = 60


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    step: float


def minimize_projected(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray],
    rtol: float = 1e-8,
    max_iter: int = 2000,
    step0: float = 1.0,
) -> OptResult:
    """Minimize a convex function over a convex set.

    Parameters
    ----------
    fun : callable
        x -> (value, subgradient).  Values of +inf are allowed outside the
        effective domain; the search backs away from them.
    x0 : ndarray
        Starting point; projected onto the set before the first evaluation.
    project : callable
        Euclidean projection onto the feasible set.
    rtol : float
        Relative tolerance on the objective decrease; the monotone phase
        pauses after the decrease stays below rtol * max(1, |f|) on three
        consecutive accepted steps, or when no step is accepted at all, and
        the escape phase then decides whether anything better is reachable.
    """
    x = project(np.asarray(x0, dtype=float))
    f, g = fun(x)
    if not np.isfinite(f):
        raise ValueError("starting point has non-finite objective")
    best_x, best_f, best_g = x.copy(), f, g.copy()
    step = float(step0)
    it = 0
    rounds = 0
    converged = False

    while it < max_iter:
        # monotone phase: Armijo along the projected arc
        calm = 0
        paused = False
        while it < max_iter:
            it += 1
            accepted = False
            # keep trial points out of overflow territory
            g_n = float(np.linalg.norm(g))
            cap = 1e9 * (1.0 + float(np.linalg.norm(x)))
            while step * g_n > cap:
                step *= _STEP_SHRINK
            while step >= _MIN_STEP:
                cand = project(x - step * g)
                move = cand - x
                if float(move @ move) == 0.0:
                    break
                f_c, g_c = fun(cand)
                if np.isfinite(f_c) and f_c <= f + _ARMIJO * float(g @ move):
                    accepted = True
                    break
                step *= _STEP_SHRINK
            if not accepted:
                paused = True
                break
            drop = f - f_c
            x, f, g = cand, f_c, g_c
            if f < best_f:
                best_f, best_x, best_g = f, x.copy(), g.copy()
            if drop <= rtol * max(1.0, abs(f)):
                calm += 1
                if calm >= 3:
                    paused = True
                    break
            else:
                calm = 0
            step *= _STEP_GROW
        if not paused:
            break  # monotone phase ran out of budget
        converged = True

        # escape phase: diminishing plain subgradient steps from the pause
        # point; each later round explores at half the previous scale
        rounds += 1
        if rounds > _ESCAPE_ROUNDS:
            break
        mark = best_f
        c = (0.5 ** (rounds - 1)) * (1.0 + np.linalg.norm(best_x)) \
            / (np.linalg.norm(best_g) + 1e-12)
        xe, ge = best_x.copy(), best_g.copy()
        for j in range(1, _ESCAPE_ITERS + 1):
            if it >= max_iter:
                break
            it += 1
            d = (c / np.sqrt(j)) * np.clip(ge, -1e100, 1e100)
            dn = float(np.linalg.norm(d))
            lim = 1e3 * (1.0 + float(np.linalg.norm(xe)))
            if dn > lim:
                d *= lim / dn
            xe = project(xe - d)
            fe, ge_new = fun(xe)
            if np.isfinite(fe):
                ge = ge_new
                if fe < best_f:
                    best_f, best_x, best_g = fe, xe.copy(), ge_new.copy()
            else:
                xe, ge = best_x.copy(), best_g.copy()
                c *= _STEP_SHRINK
        if best_f < mark - rtol * max(1.0, abs(mark)):
            x, f, g = best_x.copy(), best_f, best_g.copy()
            step = max(step, float(step0)) * _STEP_SHRINK ** 4
            converged = False
            continue
        break  # nothing materially better nearby

    return OptResult(best_x, best_f, it, converged, step)


def maximize_projected(fun, x0, project, rtol: float = 1e-8,
                       max_iter: int = 2000, step0: float = 1.0) -> OptResult:
    """Maximize a concave function over a convex set; see minimize_projected."""

    def neg(x):
        v, g = fun(x)
        return -v, -g

    res = minimize_projected(neg, x0, project, rtol=rtol, max_iter=max_iter, step0=step0)
    return OptResult(res.x, -res.value, res.iterations, res.converged, res.step)
