import math

import networkx as nx
import numpy as np
import pytest

from crowdnav.datasets import Track
from crowdnav.navigation import (
    NoPath,
    PipelineConfig,
    RobotLimits,
    RobotState,
    Scenario,
    ScenarioError,
    count_intrusions,
    control_grid,
    gvo_step,
    path_length,
    plan_global,
    point_segment_distance,
    run_navigation,
    segment_distance,
    unicycle_arc,
)
from crowdnav.prediction import PredictedTrack
from crowdnav.proxemics import ProxemicProfile
from crowdnav.rvo import MotionModel, Obstacle
from crowdnav.synthetic import crossing_scenario

PROFILE = ProxemicProfile(134.24, 267.97)


def _walker(pid, start, vel, n=300, t0=0.0):
    k = np.arange(n)[:, None]
    return Track(pid, t0, 0.1, np.asarray(start, float) + 0.1 * k * np.asarray(vel, float))


def _as_prediction(track):
    return PredictedTrack(track.pedestrian_id, track.t0, track.dt, track.positions)


def _grid_shortest(start, goal, obstacles, radius, lo=-1.0, hi=11.0, h=0.1):
    """8-connected A* on a grid whose nodes keep a conservative margin, so
    every grid path is feasible for the real radius."""
    n = int(round((hi - lo) / h)) + 1
    xs = lo + h * np.arange(n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    clear = np.full(len(pts), np.inf)
    for o in obstacles:
        a, b = np.array(o.a), np.array(o.b)
        d = b - a
        s = np.clip(((pts - a) @ d) / (d @ d), 0.0, 1.0)
        clear = np.minimum(clear, np.hypot(*(pts - a - s[:, None] * d).T))
    free = (clear >= radius + h).reshape(n, n)
    g = nx.Graph()
    for i in range(n):
        for j in range(n):
            if not free[i, j]:
                continue
            for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
                a, b = i + di, j + dj
                if 0 <= a < n and 0 <= b < n and free[a, b]:
                    g.add_edge((i, j), (a, b), weight=h * math.hypot(di, dj))
    s = tuple(int(round((c - lo) / h)) for c in start)
    e = tuple(int(round((c - lo) / h)) for c in goal)
    heur = lambda u, v: h * math.hypot(u[0] - v[0], u[1] - v[1])
    return nx.astar_path_length(g, s, e, heuristic=heur, weight="weight")


def test_geometry_helpers():
    assert point_segment_distance([0, 1], [-1, 0], [1, 0]) == pytest.approx(1.0)
    assert point_segment_distance([3, 0], [-1, 0], [1, 0]) == pytest.approx(2.0)
    assert segment_distance([0, -1], [0, 1], [-1, 0], [1, 0]) == 0.0
    assert segment_distance([0, 1], [1, 1], [0, 0], [1, 0]) == pytest.approx(1.0)
    assert path_length([[0, 0], [3, 4], [3, 5]]) == pytest.approx(6.0)


def test_plan_empty():
    route = plan_global([0, 0], [5, 5], [])
    assert len(route) == 2
    np.testing.assert_array_equal(route[0], [0, 0])
    np.testing.assert_array_equal(route[1], [5, 5])


def test_plan_around_wall():
    wall = Obstacle((5, -2), (5, 2))
    route = plan_global([0, 0], [10, 0], [wall], radius=0.3)
    assert len(route) >= 3
    for p, q in zip(route, route[1:]):
        assert segment_distance(p, q, wall.a, wall.b) >= 0.3 - 1e-9


def test_plan_blocked_start():
    with pytest.raises(NoPath):
        plan_global([0, 0.1], [5, 5], [Obstacle((-1, 0), (1, 0))])


def test_plan_unreachable():
    box = [Obstacle((4, 4), (6, 4)), Obstacle((6, 4), (6, 6)), Obstacle((6, 6), (4, 6)), Obstacle((4, 6), (4, 4))]
    with pytest.raises(NoPath):
        plan_global([0, 0], [5, 5], box, radius=0.3)


@pytest.mark.parametrize("seed", range(12))
def test_plan_against_grid_search(seed):
    rng = np.random.default_rng(seed)
    radius = 0.3
    obstacles = []
    while len(obstacles) < 10:
        a = rng.uniform([1.5, 0.5], [8.5, 9.5])
        ang = rng.uniform(0, np.pi)
        b = a + rng.uniform(1.0, 3.0) * np.array([np.cos(ang), np.sin(ang)])
        obstacles.append(Obstacle(tuple(a), tuple(np.clip(b, 1.2, 8.8))))
    start, goal = (0.0, 5.0), (10.0, 5.0)
    try:
        route = plan_global(start, goal, obstacles, radius)
    except NoPath:
        with pytest.raises(nx.NetworkXNoPath):
            _grid_shortest(start, goal, obstacles, radius)
        return
    for p, q in zip(route, route[1:]):
        for o in obstacles:
            assert segment_distance(p, q, o.a, o.b) >= radius - 1e-9
    try:
        grid = _grid_shortest(start, goal, obstacles, radius)
    except nx.NetworkXNoPath:
        return
    assert path_length(route) <= grid * 1.02


def test_unicycle_arc_straight_and_turning():
    x, y, th = unicycle_arc(np.zeros(2), 0.0, 1.0, 0.0, 2.0)
    assert (float(x), float(y), float(th)) == pytest.approx((2.0, 0.0, 0.0))
    # quarter circle of radius 1
    x, y, th = unicycle_arc(np.zeros(2), 0.0, 1.0, 1.0, math.pi / 2)
    assert (float(x), float(y), float(th)) == pytest.approx((1.0, 1.0, math.pi / 2))


def test_control_grid_covers_limits():
    g = control_grid(RobotLimits())
    assert len(g) == 225
    assert g[:, 0].min() == 0.0 and g[:, 0].max() == 1.5
    assert g[:, 1].min() == -1.5 and g[:, 1].max() == 1.5


def test_limits_validation():
    with pytest.raises(ScenarioError):
        RobotLimits(v_max=0)
    with pytest.raises(ScenarioError):
        Scenario([], [0, 0], [0.1, 0])
    with pytest.raises(ScenarioError):
        Scenario([], [0, 0], [5, 0], timeout=0)
    with pytest.raises(ScenarioError):
        PipelineConfig(prediction="psychic")


def test_gvo_turns_toward_waypoint():
    robot = RobotState([0, 0], math.pi / 2)
    d = gvo_step(robot, {}, {}, [5, 0])
    before = abs(math.pi / 2)
    after = abs(math.atan2(-d.state.p[1], 5 - d.state.p[0]) - d.state.heading)
    assert after < before
    assert not d.emergency


def test_gvo_full_speed_when_aligned():
    d = gvo_step(RobotState([0, 0], 0.1), {}, {}, [8, 0])
    assert d.control[0] == 1.5


def test_gvo_personal_space_hard_constraint():
    ped = _walker(1, [4.0, 0.0], [-1.2, 0.0], n=60)
    robot = RobotState([0, 0], 0.0, 1.0, 0.0, 0.0)
    d = gvo_step(robot, {1: _as_prediction(ped)}, {1: PROFILE}, [10, 0])
    assert not d.emergency
    v, w = d.control
    t = 0.1 * np.arange(1, 21)
    x, y, _ = unicycle_arc(robot.p, robot.heading, v, w, t)
    gap = np.hypot(x - ped.positions[1:21, 0], y - ped.positions[1:21, 1]) - 0.3
    assert gap.min() >= PROFILE.personal_m - 1e-6


def test_gvo_emergency_when_boxed_in():
    peds = {i: PredictedTrack(i, 0.0, 0.1, np.tile([math.cos(a), math.sin(a)], (30, 1)))
            for i, a in enumerate(np.linspace(0, 2 * np.pi, 8, endpoint=False))}
    d = gvo_step(RobotState([0, 0], 0.0), peds, {i: PROFILE for i in peds}, [5, 0])
    assert d.emergency


def test_social_on_keeps_more_clearance():
    ped = _walker(1, [6.0, 0.2], [-1.1, 0.0], n=400)
    base = dict(tracks=[ped], start=[0, 0], goal=[12, 0], models={1: MotionModel(15, 10, 30, 0.3, 1.1)})
    cfg = PipelineConfig(prediction="oracle")
    on = run_navigation(Scenario(social_mode=True, **base), cfg)
    off = run_navigation(Scenario(social_mode=False, **base), cfg)
    assert on.min_clearance >= off.min_clearance
    assert on.personal_intrusions == 0
    assert on.reached_goal and off.reached_goal


def test_count_intrusions_far():
    path = np.array([[0.1 * k, 0.1 * k, 5.0] for k in range(50)])
    ped = _walker(1, [0, 0], [0.1, 0], n=50)
    assert count_intrusions(path, [ped], {1: PROFILE}) == (0, 0)


def test_count_intrusions_single_event():
    ped = Track(1, 0.0, 0.1, np.zeros((20, 2)))
    ys = np.full(20, 5.0)
    ys[8:13] = 1.0  # five consecutive steps inside d_p
    path = np.stack([0.1 * np.arange(20), np.zeros(20), ys], axis=1)
    assert count_intrusions(path, [ped], {1: PROFILE}) == (1, 1)


def test_count_intrusions_social_only():
    peds = [Track(1, 0.0, 0.1, np.tile([3.0, 2.0], (40, 1))), Track(2, 0.0, 0.1, np.tile([7.0, -2.0], (40, 1)))]
    path = np.stack([0.1 * np.arange(40), 0.25 * np.arange(40), np.zeros(40)], axis=1)
    assert count_intrusions(path, peds, {1: PROFILE, 2: PROFILE}) == (0, 2)


def test_free_run_travel_time():
    res = run_navigation(Scenario([], [0, 0], [10, 0]), PipelineConfig(prediction="oracle"))
    assert res.reached_goal
    assert res.travel_time == pytest.approx(10 / 1.5, rel=0.1)
    assert res.personal_intrusions == 0 and res.social_intrusions == 0


def test_free_run_social_modes_identical():
    cfg = PipelineConfig(prediction="oracle")
    on = run_navigation(Scenario([], [0, 0], [6, 4], social_mode=True), cfg)
    off = run_navigation(Scenario([], [0, 0], [6, 4], social_mode=False), cfg)
    assert np.array_equal(on.path, off.path)


def test_run_with_wall():
    sc = Scenario([], [0, 0], [10, 0], obstacles=[Obstacle((5, -2), (5, 2))])
    res = run_navigation(sc, PipelineConfig(prediction="oracle"))
    assert res.reached_goal
    for row in res.path:
        assert point_segment_distance(row[1:3], (5, -2), (5, 2)) > 0.0


def test_timeout_reported():
    res = run_navigation(Scenario([], [0, 0], [50, 0], timeout=3.0), PipelineConfig(prediction="oracle"))
    assert not res.reached_goal
    assert res.travel_time == pytest.approx(3.0)


def test_kinematic_feasibility():
    sim, start, goal = crossing_scenario("perpendicular", seed=1)
    res = run_navigation(Scenario(sim.tracks, start, goal, models=sim.models), PipelineConfig(prediction="oracle"))
    p = res.path
    for prev, cur in zip(p, p[1:]):
        x, y, th = unicycle_arc(prev[1:3], prev[3], cur[4], cur[5], cur[0] - prev[0])
        assert float(x) == pytest.approx(cur[1], abs=1e-9)
        assert float(y) == pytest.approx(cur[2], abs=1e-9)
        assert math.remainder(float(th) - cur[3], 2 * math.pi) == pytest.approx(0.0, abs=1e-9)
        assert 0.0 <= cur[4] <= 1.5 and abs(cur[5]) <= 1.5


def test_crossing_scene_safety_and_determinism():
    sim, start, goal = crossing_scenario("counterflow", seed=2)
    cfg = PipelineConfig(prediction="oracle")
    sc = lambda social: Scenario(sim.tracks, start, goal, social_mode=social, models=sim.models)
    on = run_navigation(sc(True), cfg)
    again = run_navigation(sc(True), cfg)
    off = run_navigation(sc(False), cfg)
    assert on.personal_intrusions == 0
    assert on.min_clearance >= off.min_clearance
    assert np.array_equal(on.path, again.path)
    assert on.to_json() == again.to_json()


def test_constant_velocity_mode_runs():
    sim, start, goal = crossing_scenario("diagonal", seed=0)
    res = run_navigation(Scenario(sim.tracks, start, goal, models=sim.models), PipelineConfig(prediction="constant_velocity"))
    assert res.reached_goal
