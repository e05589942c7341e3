import numpy as np
import pytest

from chanceplan.planner import (EpisodeConfig, PlanProblem, SeparationConstraint, _unconstrained, audit_plan,
                                desired_endpoint, five_sigma_boxes, plan_cost, run_receding_horizon, solve_opt_e)
from chanceplan.scenarios import Lane, Obstacle, Scenario, default_library, run_episode
from chanceplan.uncertainty import Gaussian, ObstacleField
from chanceplan.vehicle import VehicleParams, VehicleState, simulate

PARAMS = VehicleParams()
GOBS = np.diag([2.4, 1.0])


@pytest.fixture(scope="module")
def library():
    return default_library(PARAMS)


def straight_tubes(library, z0):
    return [t for t in library.candidates(z0) if t.family == "speed_change"]


def static_field(x, n, sd=(4.0, 0.55)):
    g = Gaussian([x, 0.0], np.diag(np.square(sd)))
    return ObstacleField({(1, j): g for j in range(1, n + 1)}, GOBS, n)


def test_endpoint_matches_simulated_position(library):
    tube = straight_tubes(library, VehicleState(0, 0, 0, 15.0))[0]
    z0 = VehicleState(3.0, -1.0, 0.2, 15.0)
    p = np.array([tube.p_hi[0], 0.0])
    tr = simulate(tube.trajectory(p, 15.0, 0.2), z0, PARAMS)
    k = int(round(tube.t_m / 1e-3))
    assert np.allclose(desired_endpoint(tube, p, z0), tr.states[k, :2], atol=0.05)


def test_empty_field_gives_unconstrained_optimum(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    tubes = library.candidates(z0)
    n = max(t.n_intervals for t in tubes)
    prob = PlanProblem(z0, [60.0, 3.7], 0.05, tubes, ObstacleField({}, GOBS, n), strict_time=False)
    out = solve_opt_e(prob)
    assert out.feasible
    assert out.certified_risk < 1e-10
    best = min(_unconstrained(t, prob)[0] for t in tubes)
    assert out.cost == pytest.approx(best, abs=1e-9)


def test_zero_threshold_is_infeasible(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    tubes = straight_tubes(library, z0)
    n = max(t.n_intervals for t in tubes)
    out = solve_opt_e(PlanProblem(z0, [200.0, 0.0], 0.0, tubes, static_field(70.0, n, (4.0, 0.55)),
                                  strict_time=False))
    assert out.status == "infeasible"


def test_tight_gap_needs_a_loose_threshold(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    tubes = straight_tubes(library, z0)
    n = max(t.n_intervals for t in tubes)
    fld = static_field(70.0, n)
    loose = solve_opt_e(PlanProblem(z0, [200.0, 0.0], 0.2, tubes, fld, strict_time=False))
    tight = solve_opt_e(PlanProblem(z0, [200.0, 0.0], 0.01, tubes, fld, strict_time=False))
    assert loose.feasible and loose.certified_risk <= 0.2
    assert tight.status == "infeasible"
    # the sampled risk of the loose plan lies between the two thresholds
    risk, se = audit_plan(loose, z0, fld, 20_000, seed=1)
    assert 0.01 < risk - 3 * se and risk <= loose.certified_risk + 3 * se


def test_certified_plan_is_conservative(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    tubes = straight_tubes(library, z0)
    n = max(t.n_intervals for t in tubes)
    fld = static_field(80.0, n)
    out = solve_opt_e(PlanProblem(z0, [200.0, 0.0], 0.05, tubes, fld, strict_time=False))
    assert out.feasible
    risk, se = audit_plan(out, z0, fld, 20_000, seed=2)
    assert out.certified_risk >= risk - 3 * se


def test_evaluation_budget_is_respected(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    tubes = library.candidates(z0)
    n = max(t.n_intervals for t in tubes)
    out = solve_opt_e(PlanProblem(z0, [200.0, 0.0], 0.0, tubes, static_field(40.0, n), max_evals=10,
                                  strict_time=False))
    assert out.evaluations <= 10
    assert out.status == "timeout"


def test_solve_is_deterministic(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    tubes = straight_tubes(library, z0)
    n = max(t.n_intervals for t in tubes)
    prob = PlanProblem(z0, [200.0, 0.0], 0.1, tubes, static_field(75.0, n), strict_time=False)
    a, b = solve_opt_e(prob), solve_opt_e(prob)
    assert a.status == b.status and a.certified_risk == b.certified_risk
    assert np.array_equal(a.p, b.p)


def test_separation_constraint_sign():
    field_ = ObstacleField({(1, 1): Gaussian([10.0, 0.0], np.eye(2) * 0.04)}, GOBS, 1)
    boxes = five_sigma_boxes(field_)
    regions = [(np.zeros(2), np.array([[1.0, 0.0], [0.0, 0.0]]), np.diag([2.4, 1.0]))]
    con = SeparationConstraint(regions, boxes, [0.0, 0.0], [10.0, 0.0])
    assert con.evaluate([0.0, 0.0]).total == 0.0
    # just inside the front face: moving further ahead deepens the overlap
    hit = con.evaluate([5.0, 0.0])
    assert hit.total == pytest.approx(0.8 + 1e-3)
    assert hit.gradient[0] == pytest.approx(1.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        PlanProblem(VehicleState(), [0, 0], 1.5, [], ObstacleField({}, GOBS, 1))
    with pytest.raises(ValueError):
        PlanProblem(VehicleState(), [0, 0], 0.1, [], ObstacleField({}, GOBS, 1), mode="reckless")


def straight_road(obstacles=(), x_goal=120.0, u0=15.0):
    lanes = [Lane("x", k * 3.7, 0.0) for k in range(3)]
    return Scenario("highway", lanes, list(obstacles), VehicleState(0.0, 0.0, 0.0, u0),
                    (x_goal, float("inf"), -float("inf"), float("inf")))


def test_empty_road_reaches_goal(library):
    s = straight_road()
    log = run_episode(s, library, PARAMS, EpisodeConfig(t_max=30.0), traffic_seed=0)
    assert log.outcome == "success"
    assert all(r.status == "feasible" for r in log.iterations)
    # no braking fallback: speed never drops below the start speed by much
    before = log.t <= log.time_to_goal
    assert log.states[before, 3].min() > 10.0


def test_wall_across_all_lanes_blocks_start(library):
    wall = [Obstacle(25.0, k * 3.7, 0.0) for k in range(3)]
    s = straight_road(wall)
    log = run_episode(s, library, PARAMS, EpisodeConfig(t_max=30.0), traffic_seed=0)
    assert log.iterations[0].status != "feasible"
    assert log.outcome == "other"
    assert len(log.t) == 1 and log.states[0, 0] == 0.0


def test_receding_horizon_outcome_without_collisions(library):
    z0 = VehicleState(0, 0, 0, 15.0)
    n = max(t.n_intervals for t in library.tubes)
    log = run_receding_horizon(
        z0, library, PARAMS, field_source=lambda t0, k: ObstacleField({}, GOBS, k),
        waypoint_fn=lambda t0, st: np.array([st.x + 90.0, 0.0]),
        goal_fn=lambda ss: np.atleast_2d(ss)[:, 0] >= 80.0, config=EpisodeConfig(t_max=20.0))
    assert log.outcome == "success"
    assert log.time_to_goal is not None and log.crash_time is None
    view = log.deterministic_view()
    assert "solve_time" not in view["iterations"][0]
