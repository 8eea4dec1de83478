import numpy as np
import pytest

from detector_forge.aggregate import (AggregationProblem, aggregate,
                                      calibrate_delta, cell_violation,
                                      purify, subgaussian_fast_path,
                                      subgaussian_fast_path_deltas,
                                      voronoi_geometry)
from detector_forge.errors import InfeasibleError
from detector_forge.sets import ball, box


def line_problem():
    # two candidates for a scalar quantity, parameter box wide enough
    # that cells and margin chunks stay nonempty down to delta = 2
    return AggregationProblem(
        estimates=[[-1.0], [1.0]],
        parameter_sets=[box([-4.0], [4.0])],
        G=np.eye(1),
        Theta=np.eye(1),
    )


def test_voronoi_geometry_line():
    geo = voronoi_geometry([[0.0], [2.0]])
    assert geo.u[0, 1] == pytest.approx([1.0])
    assert geo.u[1, 0] == pytest.approx([-1.0])
    assert geo.v[0, 1] == pytest.approx(1.0)
    assert geo.v[1, 0] == pytest.approx(-1.0)


def test_voronoi_rejects_duplicates():
    with pytest.raises(ValueError, match="coincide"):
        voronoi_geometry([[1.0, 2.0], [1.0, 2.0], [3.0, 4.0]])


def test_purify_drops_unreachable_cell():
    # the third candidate's cell starts at x = 3, outside the box [-2, 2]
    prob = AggregationProblem(
        estimates=[[-1.0], [1.0], [5.0]],
        parameter_sets=[box([-2.0], [2.0])],
        G=np.eye(1),
        Theta=np.eye(1),
    )
    levels = purify(prob, 0.1)
    assert [len(l.reds) for l in levels] == [1, 1, 0]
    # margin chunks pointing at the dead cell vanish too
    assert all(lp != 2 for l in levels for lp, _, _ in l.blues)


def test_purify_keeps_boundary_touching_cell():
    # the second cell meets the box only at the single point x = 0
    prob = AggregationProblem(
        estimates=[[-1.0], [1.0]],
        parameter_sets=[box([-2.0], [0.0])],
        G=np.eye(1),
        Theta=np.eye(1),
    )
    levels = purify(prob, 0.5)
    assert len(levels[1].reds) == 1


def test_fast_path_deltas_frozen_pair():
    deltas = subgaussian_fast_path_deltas([[0.0], [1.0]], np.eye(1),
                                          eps=0.05, repetitions=1)
    assert deltas == pytest.approx(np.sqrt(np.log(40.0)))
    assert deltas[0] == pytest.approx(1.9206, abs=1e-4)


def test_fast_path_deltas_frozen_quadruple():
    est = 3.0 * np.eye(4)
    deltas = subgaussian_fast_path_deltas(est, np.eye(4), eps=0.1,
                                          repetitions=20)
    want = np.sqrt(np.log(4.0 * np.sqrt(3.0) / 2.0))
    assert deltas == pytest.approx(np.full(4, want))
    assert deltas[0] == pytest.approx(1.1147, abs=1e-4)


def test_fast_path_budget_validation():
    with pytest.raises(ValueError, match="must stay below"):
        subgaussian_fast_path_deltas([[0.0], [1.0]], np.eye(1),
                                     eps=0.5, repetitions=4)


def test_fast_path_noiseless_pick():
    est = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    obs = np.tile(est[1], (8, 1))
    res = subgaussian_fast_path(est, np.eye(2), eps=0.1, observations=obs)
    assert res.index == 1
    assert res.red == (False, True, False)
    assert np.all(res.psi[1][[0, 2]] > 0.0)


def test_aggregate_generic_noiseless():
    est = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    prob = AggregationProblem(
        estimates=est,
        parameter_sets=[ball([0.0, 0.0], 10.0)],
        G=np.eye(2),
        Theta=np.eye(2),
    )
    obs = np.tile(est[1], (8, 1))
    deltas = subgaussian_fast_path_deltas(est, np.eye(2), eps=0.1,
                                          repetitions=8)
    res = aggregate(prob, obs, deltas=deltas)
    assert res.index == 1
    assert res.red == (False, True, False)
    # the certified union bound is loose at the closed-form margin but
    # must stay on the sane side of vacuous
    assert 0.0 < res.risk < 1.0


def test_calibrate_delta_halving():
    # margins walk 8 -> 4 -> 2 -> 1; per-level risk exp(-6 d^2 / 8)
    # first exceeds 0.1 at d = 1, so calibration settles on d = 2
    cal = calibrate_delta(line_problem(), eps=0.2, repetitions=6)
    assert cal.delta == pytest.approx(2.0)
    assert cal.risk == pytest.approx(np.exp(-3.0), rel=1e-4)
    assert cal.risk <= cal.target == pytest.approx(0.1)
    assert not cal.floored


def test_calibrate_delta_infeasible():
    # cells touch the box only at its endpoints, so even the opening
    # margin (twice the radius) leaves a risky pair
    prob = AggregationProblem(
        estimates=[[-1.5], [-0.5]],
        parameter_sets=[box([-1.0], [1.0])],
        G=np.eye(1),
        Theta=np.eye(1),
    )
    with pytest.raises(InfeasibleError):
        calibrate_delta(prob, eps=0.5, repetitions=1)


def test_aggregate_with_calibration():
    prob = line_problem()
    obs = np.full((6, 1), -1.0)
    res = aggregate(prob, obs, eps=0.2)
    assert res.index == 0
    assert res.red == (True, False)
    assert res.delta == pytest.approx([2.0, 2.0])
    assert res.risk == pytest.approx(2.0 * np.exp(-3.0), rel=1e-4)


def test_aggregate_requires_some_margin_source():
    prob = line_problem()
    with pytest.raises(ValueError, match="tests, deltas, or eps"):
        aggregate(prob, np.zeros((3, 1)))


def test_cell_violation_flags_deep_misses_only():
    geo = voronoi_geometry([[0.0, 0.0], [4.0, 0.0]])
    assert cell_violation(geo, 0, [3.0, 0.0], 0.5)
    assert not cell_violation(geo, 0, [2.2, 0.0], 0.5)
    assert not cell_violation(geo, 1, [3.0, 0.0], 0.5)


def test_generic_route_matches_fast_path():
    est = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    prob = AggregationProblem(
        estimates=est,
        parameter_sets=[ball([0.0, 0.0], 30.0)],
        G=np.eye(2),
        Theta=np.eye(2),
    )
    rng = np.random.default_rng(3)
    for truth in (est[0], est[1], est[2]):
        obs = truth + 0.5 * rng.standard_normal((10, 2))
        fast = subgaussian_fast_path(est, np.eye(2), eps=0.1, observations=obs)
        gen = aggregate(prob, obs, deltas=fast.deltas)
        assert gen.index == fast.index
        assert gen.red == fast.red
