"""Choosing among candidate estimates with a certified margin.

Each of L candidate values for the affine quantity G mu owns a Voronoi
cell in the estimate space.  For a candidate to survive, its cell (red)
must win a pairwise test against every chunk of parameter space where a
rival estimate is better by at least a margin delta (blue).  Batteries,
shifts, and acceptance reuse the multiple-hypothesis machinery; pair
detectors come from the closed-form route, since every hypothesis here is
a mean set under one shared covariance bound.

The margin is either supplied, calibrated by shrinking from the problem
diameter until the per-level risk budget breaks, or, for the pure
sub-Gaussian case, written down directly from the fast-path formula.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detectors import GaussianPairSpec, gaussian_symmetric_detector
from .errors import InfeasibleError
from .multitest import (ClosenessRelation, PairwiseBattery, ShiftedBattery,
                        infer_color, run_multitest, shift_battery)
from .sets import ConvexSet, halfspaces, linear_image

__all__ = ["AggregationProblem", "VoronoiGeometry", "voronoi_geometry",
           "LevelSets", "purify", "LevelTest", "build_level_tests",
           "individual_inference", "CalibrationResult", "calibrate_delta",
           "AggregateResult", "aggregate", "cell_violation",
           "subgaussian_fast_path_deltas", "subgaussian_fast_path",
           "FastPathResult"]

_EMPTY_RESIDUAL = 1e-7
_RED, _BLUE = 0, 1


@dataclass
class AggregationProblem:
    """Candidate estimates for G mu observed through sub-Gaussian noise."""

    estimates: np.ndarray            # (L, m) candidate values
    parameter_sets: list             # admissible parameter components in R^d
    G: np.ndarray                    # (m, d)
    Theta: np.ndarray                # (m, m) sub-Gaussian matrix per observation
    images: list = field(default_factory=list)  # G(M_i), filled on init

    def __post_init__(self):
        self.estimates = np.atleast_2d(np.asarray(self.estimates, dtype=float))
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.Theta = np.atleast_2d(np.asarray(self.Theta, dtype=float))
        L, m = self.estimates.shape
        if L < 2:
            raise ValueError("need at least two candidate estimates")
        if self.G.shape[0] != m or self.Theta.shape != (m, m):
            raise ValueError("estimate, map, and covariance dimensions disagree")
        if not self.parameter_sets:
            raise ValueError("need at least one parameter component")
        for s in self.parameter_sets:
            if s.dim != self.G.shape[1]:
                raise ValueError("parameter sets must match the map's domain")
            if s.bound_radius is None:
                raise ValueError("parameter components must be bounded")
        if not self.images:
            self.images = [linear_image(s, self.G) for s in self.parameter_sets]

    @property
    def count(self) -> int:
        return self.estimates.shape[0]


@dataclass(frozen=True)
class VoronoiGeometry:
    u: np.ndarray   # (L, L, m); u[l, lp] points from estimate l toward lp
    v: np.ndarray   # (L, L) cell boundary offsets along u


def voronoi_geometry(estimates) -> VoronoiGeometry:
    g = np.atleast_2d(np.asarray(estimates, dtype=float))
    L, m = g.shape
    u = np.zeros((L, L, m))
    v = np.zeros((L, L))
    for l in range(L):
        for lp in range(L):
            if l == lp:
                continue
            diff = g[lp] - g[l]
            n = float(np.linalg.norm(diff))
            if n <= 1e-12:
                raise ValueError(f"estimates {l} and {lp} coincide")
            u[l, lp] = diff / n
            v[l, lp] = float(u[l, lp] @ (g[l] + g[lp])) / 2.0
    return VoronoiGeometry(u, v)


def _feasible(s: ConvexSet, A: np.ndarray, b: np.ndarray, base: ConvexSet,
              seed: np.ndarray) -> bool:
    x = s.project(seed)
    resid = max(float(np.max(A @ x - b)), base.distance(x))
    return resid <= _EMPTY_RESIDUAL * (1.0 + float(np.linalg.norm(x)))


@dataclass
class LevelSets:
    level: int
    reds: list     # (component index, mean set)
    blues: list    # (rival level, component index, mean set)


def purify(problem: AggregationProblem, deltas) -> list:
    """Cut cells and margin chunks out of the images, dropping empty pieces."""
    geo = voronoi_geometry(problem.estimates)
    L = problem.count
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (L,))
    out = []
    for l in range(L):
        others = [lp for lp in range(L) if lp != l]
        A_cell = np.stack([geo.u[l, lp] for lp in others])
        b_cell = np.array([geo.v[l, lp] for lp in others])
        reds = []
        for i, img in enumerate(problem.images):
            cell = halfspaces(A_cell, b_cell, base=img)
            if _feasible(cell, A_cell, b_cell, img, problem.estimates[l]):
                reds.append((i, cell))
        blues = []
        for lp in others:
            A_ch = -geo.u[l, lp][None, :]
            b_ch = np.array([-(geo.v[l, lp] + deltas[l])])
            for i, img in enumerate(problem.images):
                chunk = halfspaces(A_ch, b_ch, base=img)
                if _feasible(chunk, A_ch, b_ch, img, problem.estimates[lp]):
                    blues.append((lp, i, chunk))
        out.append(LevelSets(l, reds, blues))
    return out


@dataclass
class LevelTest:
    level: int
    alive: bool
    shifted: Optional[ShiftedBattery] = None
    colors: tuple = ()

    @property
    def eps_hat(self) -> float:
        return self.shifted.eps_hat if self.alive else 0.0


def build_level_tests(problem: AggregationProblem, deltas, repetitions: int):
    """One red-versus-blues battery per level, with balanced shifts."""
    tests = []
    for level_sets in purify(problem, deltas):
        if not level_sets.reds:
            tests.append(LevelTest(level_sets.level, alive=False))
            continue
        mean_sets = [s for _, s in level_sets.reds] + [s for *_, s in level_sets.blues]
        colors = tuple([_RED] * len(level_sets.reds) + [_BLUE] * len(level_sets.blues))
        J = len(mean_sets)
        close = np.ones((J, J), dtype=bool)
        for i in range(J):
            for j in range(J):
                if colors[i] != colors[j]:
                    close[i, j] = False
        rel = ClosenessRelation(close)
        detectors, risks = {}, np.zeros((J, J))
        for i in range(J):
            for j in range(i + 1, J):
                if rel.close(i, j):
                    continue
                res = gaussian_symmetric_detector(
                    GaussianPairSpec(mean_sets[i], mean_sets[j], problem.Theta))
                detectors[(i, j)] = res.detector
                risks[i, j] = risks[j, i] = res.detector.risk
        battery = PairwiseBattery(mean_sets, rel, detectors, risks)
        tests.append(LevelTest(level_sets.level, True,
                               shift_battery(battery, repetitions), colors))
    return tests


def individual_inference(test: LevelTest, observations) -> bool:
    """Does this level's cell win against every margin chunk?"""
    if not test.alive:
        return False
    res = run_multitest(test.shifted, observations)
    return infer_color(res, test.colors) == _RED


@dataclass
class CalibrationResult:
    delta: float
    risk: float          # worst per-level risk at the returned margin
    target: float
    tests: list
    floored: bool = False


def calibrate_delta(problem: AggregationProblem, eps: float, repetitions: int,
                    kappa: float = 0.5, floor: float = 1e-6) -> CalibrationResult:
    """Shrink the margin geometrically until the risk budget breaks.

    Returns the last margin whose worst per-level risk stayed within
    eps / L.  If the margin falls below the floor without ever violating
    the budget, that margin is returned with a warning.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    if not (0.0 < kappa < 1.0):
        raise ValueError("kappa must lie in (0, 1)")
    L = problem.count
    target = eps / L
    delta = 2.0 * max(img.bound_radius for img in problem.images)
    last = None
    while True:
        tests = build_level_tests(problem, delta, repetitions)
        risk = max(t.eps_hat for t in tests)
        if risk > target:
            if last is None:
                raise InfeasibleError(
                    f"even margin {delta:g} exceeds the per-level risk budget")
            return CalibrationResult(last[0], last[1], target, last[2])
        last = (delta, risk, tests)
        if delta < floor:
            _warnings.warn("margin shrank below the floor without ever "
                           "violating the risk budget")
            return CalibrationResult(delta, risk, target, tests, floored=True)
        delta *= kappa


@dataclass
class AggregateResult:
    index: int
    red: tuple           # per-level survival flags
    delta: np.ndarray    # margins actually used
    risk: float          # sum of per-level risks (whole-procedure budget)


def aggregate(problem: AggregationProblem, observations, *,
              eps: Optional[float] = None, deltas=None,
              tests: Optional[list] = None) -> AggregateResult:
    """Pick the lowest surviving estimate index, or 0 when none survives.

    Margins come from (in order of precedence) prebuilt level tests, an
    explicit deltas array, or calibration against the risk budget eps.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    K = obs.shape[0]
    L = problem.count
    if tests is not None:
        used = np.full(L, np.nan)
    elif deltas is not None:
        used = np.broadcast_to(np.asarray(deltas, dtype=float), (L,)).copy()
        tests = build_level_tests(problem, used, K)
    else:
        if eps is None:
            raise ValueError("need tests, deltas, or eps")
        cal = calibrate_delta(problem, eps, K)
        used = np.full(L, cal.delta)
        tests = cal.tests
    red = tuple(individual_inference(t, obs) for t in tests)
    index = next((l for l, r in enumerate(red) if r), 0)
    return AggregateResult(index, red, used, float(sum(t.eps_hat for t in tests)))


def cell_violation(geometry: VoronoiGeometry, chosen: int, point, delta) -> bool:
    """Did the chosen estimate's inflated cell miss the true quantity?"""
    x = np.asarray(point, dtype=float)
    L = geometry.v.shape[0]
    for lp in range(L):
        if lp != chosen and geometry.u[chosen, lp] @ x > geometry.v[chosen, lp] + delta:
            return True
    return False


# ---------------------------------------------------------------------------
# pure sub-Gaussian fast path: margins and statistics in closed form

def subgaussian_fast_path_deltas(estimates, Theta, eps: float, repetitions: int):
    g = np.atleast_2d(np.asarray(estimates, dtype=float))
    Theta = np.asarray(Theta, dtype=float)
    L = g.shape[0]
    if L < 2:
        raise ValueError("need at least two candidate estimates")
    if not eps * repetitions < L * np.sqrt(L - 1.0):
        raise ValueError("eps * repetitions must stay below L * sqrt(L - 1)")
    geo = voronoi_geometry(g)
    log_term = np.log(L * np.sqrt(L - 1.0) / (eps * repetitions))
    deltas = np.zeros(L)
    for l in range(L):
        worst = 0.0
        for lp in range(L):
            if lp != l:
                q = float(geo.u[l, lp] @ (Theta @ geo.u[l, lp]))
                worst = max(worst, np.sqrt(log_term * q))
        deltas[l] = worst
    return deltas


@dataclass
class FastPathResult:
    index: int
    red: tuple
    deltas: np.ndarray
    psi: np.ndarray      # (L, L) shifted statistics, nan on the diagonal


def subgaussian_fast_path(estimates, Theta, eps: float, observations) -> FastPathResult:
    """Closed-form aggregation for sub-Gaussian observations of the estimates."""
    g = np.atleast_2d(np.asarray(estimates, dtype=float))
    Theta = np.asarray(Theta, dtype=float)
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    K = obs.shape[0]
    L = g.shape[0]
    deltas = subgaussian_fast_path_deltas(g, Theta, eps, K)
    geo = voronoi_geometry(g)
    total = obs.sum(axis=0)
    psi = np.full((L, L), np.nan)
    for l in range(L):
        for lp in range(L):
            if lp == l:
                continue
            u = geo.u[l, lp]
            q = float(u @ (Theta @ u))
            w = 0.5 * (g[l] + g[lp] + deltas[l] * u)
            psi[l, lp] = deltas[l] / (2.0 * q) * float(u @ (K * w - total)) \
                + 0.5 * np.log(L - 1.0)
    red = tuple(bool(np.all(psi[l][np.arange(L) != l] > 0.0)) for l in range(L))
    index = next((l for l, r in enumerate(red) if r), 0)
    return FastPathResult(index, red, deltas, psi)
