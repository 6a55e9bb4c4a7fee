"""Socially-aware robot navigation.

A visibility-graph roadmap supplies waypoints; a sampled generalized velocity
obstacle step picks unicycle controls that keep out of each predicted
pedestrian's personal space (hard) and pay for entering social space (soft).
The robot takes full responsibility: pedestrians never react to it.
"""

from __future__ import annotations

import logging
import math
import time as wallclock
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from .datasets import Track, frames as crowd_frames
from .personality import traits_from_params
from .prediction import (
    BenchmarkConfig,
    BehaviorTracker,
    PredictedTrack,
    PredictionConfig,
    _rollout_prediction,
    constant_velocity_predict,
)
from .proxemics import ProxemicProfile, profile_from_traits
from .rvo import DEFAULT_MODEL, MotionModel, Obstacle

log = logging.getLogger(__name__)

V_MAX = 1.5
OMEGA_MAX = 1.5
ROBOT_RADIUS = 0.3
PLANNING_HORIZON = 2.0
CONTROL_GRID = 15
GOAL_TOLERANCE = 0.3
WAYPOINT_TOLERANCE = 0.5
TIMEOUT = 120.0
PREDICTION_REFRESH = 1.0
# a social-space traversal lasting the whole horizon costs this much progress
SOCIAL_WEIGHT = 2.0
TIME_WEIGHT = 0.05
CIRCLE_NODES = 16

PREDICTION_MODES = ("oracle", "estimated", "constant_velocity")


class NoPath(RuntimeError):
    """The goal is unreachable on the roadmap."""


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class RobotLimits:
    v_max: float = V_MAX
    omega_max: float = OMEGA_MAX
    radius: float = ROBOT_RADIUS

    def __post_init__(self):
        if not (self.v_max > 0 and self.omega_max > 0 and self.radius > 0):
            raise ScenarioError("robot limits must be positive")


@dataclass(frozen=True)
class RobotState:
    p: np.ndarray
    heading: float
    v: float = 0.0
    omega: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))


@dataclass
class Scenario:
    """Robot task in a scene of replayed pedestrians.

    ``models`` optionally gives each pedestrian's motion model; it is used
    for the proxemic profiles and radii when prediction is exact.
    """

    tracks: list[Track]
    start: np.ndarray
    goal: np.ndarray
    obstacles: list[Obstacle] = field(default_factory=list)
    limits: RobotLimits = field(default_factory=RobotLimits)
    social_mode: bool = True
    seed: int = 0
    timeout: float = TIMEOUT
    models: dict[int, MotionModel] | None = None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(2)
        self.goal = np.asarray(self.goal, dtype=float).reshape(2)
        if np.hypot(*(self.goal - self.start)) < GOAL_TOLERANCE:
            raise ScenarioError("start and goal coincide")
        if not self.timeout > 0:
            raise ScenarioError("timeout must be positive")
        dts = {round(tr.dt, 12) for tr in self.tracks}
        if len(dts) > 1:
            raise ScenarioError("tracks must share one time step")


@dataclass(frozen=True)
class PipelineConfig:
    prediction: str = "estimated"
    dt: float = 0.1
    refresh: float = PREDICTION_REFRESH
    horizon: float = PLANNING_HORIZON
    ensemble_size: int = 50
    em_iterations: int = 3

    def __post_init__(self):
        if self.prediction not in PREDICTION_MODES:
            raise ScenarioError(f"unknown prediction mode {self.prediction!r}")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")


@dataclass
class NavResult:
    path: np.ndarray  # rows: t, x, y, heading, v, omega
    travel_time: float
    personal_intrusions: int
    social_intrusions: int
    min_clearance: float
    reached_goal: bool
    emergency_steps: int = 0
    proxemics_time_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "travel_time": round(self.travel_time, 6),
            "personal_intrusions": self.personal_intrusions,
            "social_intrusions": self.social_intrusions,
            "min_clearance": None if not math.isfinite(self.min_clearance) else round(self.min_clearance, 6),
            "reached_goal": self.reached_goal,
            "emergency_steps": self.emergency_steps,
            "steps": int(len(self.path) - 1),
        }


# ---------------------------------------------------------------- geometry


def point_segment_distance(q, a, b) -> float:
    q, a, b = (np.asarray(x, dtype=float) for x in (q, a, b))
    d = b - a
    denom = float(d @ d)
    s = 0.0 if denom == 0 else min(1.0, max(0.0, float((q - a) @ d) / denom))
    return float(np.hypot(*(q - a - s * d)))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def segments_intersect(p1, p2, q1, q2) -> bool:
    d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
    d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def segment_distance(p1, p2, q1, q2) -> float:
    if segments_intersect(p1, p2, q1, q2):
        return 0.0
    return min(
        point_segment_distance(p1, q1, q2),
        point_segment_distance(p2, q1, q2),
        point_segment_distance(q1, p1, p2),
        point_segment_distance(q2, p1, p2),
    )


def _clear_point(q, obstacles, radius) -> bool:
    return all(point_segment_distance(q, o.a, o.b) >= radius for o in obstacles)


def _clear_edge(p, q, obstacles, radius) -> bool:
    return all(segment_distance(p, q, o.a, o.b) >= radius for o in obstacles)


def path_length(waypoints) -> float:
    w = np.asarray(waypoints, dtype=float)
    return float(np.sum(np.hypot(*np.diff(w, axis=0).T))) if len(w) > 1 else 0.0


def plan_global(start, goal, obstacles: Sequence[Obstacle] = (), radius: float = ROBOT_RADIUS) -> list[np.ndarray]:
    """Shortest path on a visibility graph around the inflated obstacles.

    Each segment endpoint is surrounded by a ring of nodes on a polygon that
    circumscribes the inflation disc, so edges between ring nodes wrap
    around the rounded ends of the obstacles.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    obstacles = list(obstacles)
    if not _clear_point(start, obstacles, radius) or not _clear_point(goal, obstacles, radius):
        raise NoPath("start or goal lies inside an inflated obstacle")
    if _clear_edge(start, goal, obstacles, radius):
        return [start, goal]

    ring = radius / math.cos(math.pi / CIRCLE_NODES) * 1.001
    angles = 2.0 * math.pi * np.arange(CIRCLE_NODES) / CIRCLE_NODES
    offsets = ring * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    nodes = [start, goal]
    for o in obstacles:
        for end in (o.a, o.b):
            for off in offsets:
                q = end + off
                # keep a hair of slack so ring nodes stay strictly clear
                if _clear_point(q, obstacles, radius * 1.0005):
                    nodes.append(q)

    graph = nx.Graph()
    graph.add_nodes_from(range(len(nodes)))
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if _clear_edge(nodes[i], nodes[j], obstacles, radius):
                graph.add_edge(i, j, weight=float(np.hypot(*(nodes[i] - nodes[j]))))
    try:
        route = nx.dijkstra_path(graph, 0, 1, weight="weight")
    except nx.NetworkXNoPath as exc:
        raise NoPath("goal unreachable") from exc
    return [nodes[i] for i in route]


# ---------------------------------------------------------------- local step


def unicycle_arc(p, heading, v, omega, t):
    """Exact pose after holding (v, omega) for ``t`` seconds.

    Broadcasts over arrays of v, omega and t.
    """
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    t = np.asarray(t, dtype=float)
    theta = heading + omega * t
    turning = np.abs(omega) > 1e-12
    safe = np.where(turning, omega, 1.0)
    dx = np.where(turning, v / safe * (np.sin(theta) - math.sin(heading)), v * t * math.cos(heading))
    dy = np.where(turning, -v / safe * (np.cos(theta) - math.cos(heading)), v * t * math.sin(heading))
    return p[0] + dx, p[1] + dy, theta


def control_grid(limits: RobotLimits, n: int = CONTROL_GRID) -> np.ndarray:
    v = np.linspace(0.0, limits.v_max, n)
    w = np.linspace(-limits.omega_max, limits.omega_max, n)
    vv, ww = np.meshgrid(v, w, indexing="ij")
    return np.stack([vv.ravel(), ww.ravel()], axis=1)


def _wrap(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def _predicted_positions(predicted: Mapping[int, PredictedTrack], times: np.ndarray):
    """(P, K, 2) positions at ``times``; past the end a track holds still.

    Before its start a track is reported as absent (nan).
    """
    ids = sorted(predicted)
    out = np.full((len(ids), len(times), 2), np.nan)
    for n, pid in enumerate(ids):
        tr = predicted[pid]
        k = np.rint((times - tr.start_time) / tr.dt).astype(int)
        ok = k >= 0
        k = np.clip(k, 0, len(tr.positions) - 1)
        out[n, ok] = tr.positions[k[ok]]
    return ids, out


@dataclass
class StepDecision:
    control: tuple[float, float]
    state: RobotState
    emergency: bool
    cost: float


def gvo_step(
    robot: RobotState,
    predicted: Mapping[int, PredictedTrack],
    profiles: Mapping[int, ProxemicProfile],
    waypoint,
    dt: float = 0.1,
    social_mode: bool = True,
    limits: RobotLimits = RobotLimits(),
    ped_radii: Mapping[int, float] | None = None,
    horizon: float = PLANNING_HORIZON,
    grid: int = CONTROL_GRID,
) -> StepDecision:
    """Pick a control by simulating every sampled (v, omega) over the horizon.

    Hard constraint: with ``social_mode`` the robot disc stays at least the
    personal distance away from every predicted pedestrian centre; without
    it the robot and pedestrian discs must not overlap.
    """
    waypoint = np.asarray(waypoint, dtype=float)
    controls = control_grid(limits, grid)
    n_steps = max(1, int(round(horizon / dt)))
    offsets = dt * np.arange(1, n_steps + 1)
    x, y, theta = unicycle_arc(robot.p, robot.heading, controls[:, :1], controls[:, 1:], offsets[None, :])

    dist_goal = np.hypot(x - waypoint[0], y - waypoint[1])  # (C, K)
    best_k = np.argmin(dist_goal, axis=1)
    rows = np.arange(len(controls))
    bearing = np.arctan2(waypoint[1] - y[rows, best_k], waypoint[0] - x[rows, best_k])
    heading_err = np.abs(_wrap(bearing - theta[rows, best_k]))
    far = dist_goal[rows, best_k] > 1e-6
    # ending pointed away costs the distance the robot could have covered
    # while turning back
    turn_cost = limits.v_max / limits.omega_max
    cost = dist_goal[rows, best_k] + TIME_WEIGHT * offsets[best_k] + turn_cost * heading_err * far

    clearance = np.full(len(controls), np.inf)
    if predicted:
        ids, peds = _predicted_positions(predicted, robot.t + offsets)
        present = ~np.isnan(peds[..., 0])  # (P, K)
        dx = x[:, None, :] - peds[None, :, :, 0]
        dy = y[:, None, :] - peds[None, :, :, 1]
        centre = np.where(present[None], np.hypot(dx, dy), np.inf)  # (C, P, K)
        if social_mode:
            need = np.array([profiles[i].personal_m for i in ids])
            margin = centre - limits.radius - need[None, :, None]
            social = np.array([profiles[i].social_m for i in ids])
            depth = np.clip(social[None, :, None] - centre, 0.0, None) / social[None, :, None]
            cost = cost + SOCIAL_WEIGHT * np.sum(depth**2, axis=(1, 2)) / n_steps
        else:
            radii = np.array([(ped_radii or {}).get(i, ROBOT_RADIUS) for i in ids])
            margin = centre - limits.radius - radii[None, :, None]
        clearance = margin.min(axis=(1, 2))

    ok = clearance >= 0.0
    emergency = not ok.any()
    if emergency:
        # nothing is safe: keep as far from everyone as possible
        score = -clearance + 1e-6 * cost
    else:
        score = np.where(ok, cost, np.inf)
    c = int(np.argmin(score))
    v, w = float(controls[c, 0]), float(controls[c, 1])
    nx_, ny_, nth = unicycle_arc(robot.p, robot.heading, v, w, dt)
    new = RobotState(np.array([float(nx_), float(ny_)]), float(_wrap(nth)), v, w, robot.t + dt)
    return StepDecision((v, w), new, emergency, float(cost[c]))


# ---------------------------------------------------------------- closed loop


def count_intrusions(path: np.ndarray, ped_tracks: Sequence[Track], profiles: Mapping[int, ProxemicProfile]) -> tuple[int, int]:
    """Maximal intervals with the robot centre inside a personal or social
    disc, counted once per pedestrian.

    ``path`` rows start with (t, x, y).
    """
    path = np.asarray(path, dtype=float)
    personal = social = 0
    for tr in ped_tracks:
        prof = profiles.get(tr.pedestrian_id)
        if prof is None:
            continue
        d = np.full(len(path), np.inf)
        for n, row in enumerate(path):
            q = tr.position_at(row[0])
            if q is not None:
                d[n] = math.hypot(row[1] - q[0], row[2] - q[1])
        for radius, kind in ((prof.personal_m, "p"), (prof.social_m, "s")):
            inside = d < radius
            events = int(inside[0]) + int(np.sum(inside[1:] & ~inside[:-1]))
            if kind == "p":
                personal += events
            else:
                social += events
    return personal, social


def _present(tracks: Sequence[Track], t: float) -> dict[int, np.ndarray]:
    out = {}
    for tr in tracks:
        q = tr.position_at(t)
        if q is not None:
            out[tr.pedestrian_id] = q
    return out


def _oracle_predictions(tracks: Sequence[Track], t: float, horizon: float, dt: float) -> dict[int, PredictedTrack]:
    out = {}
    n = int(round(horizon / dt))
    for tr in tracks:
        k = tr.index_at(t)
        if k is None:
            continue
        seg = tr.positions[k : k + n + 1]
        out[tr.pedestrian_id] = PredictedTrack(tr.pedestrian_id, t, tr.dt, seg)
    return out


class _Predictor:
    """Produces pedestrian predictions and profiles for the closed loop."""

    def __init__(self, scenario: Scenario, cfg: PipelineConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.tracker = None
        if cfg.prediction == "estimated":
            self.tracker = BehaviorTracker(
                BenchmarkConfig(
                    seed=scenario.seed,
                    ensemble_size=cfg.ensemble_size,
                    em_iterations=cfg.em_iterations,
                )
            )
        self.profiles: dict[int, ProxemicProfile] = {}
        self.radii: dict[int, float] = {}
        self.predicted: dict[int, PredictedTrack] = {}
        self.last_refresh = -math.inf
        self.last_ids: frozenset = frozenset()

    def _profile(self, model: MotionModel) -> ProxemicProfile:
        return profile_from_traits(traits_from_params(model))[1]

    def known_profiles(self) -> dict[int, ProxemicProfile]:
        models = self.scenario.models or {}
        return {pid: self._profile(m) for pid, m in models.items()}

    def refresh(self, t: float) -> None:
        sc, cfg = self.scenario, self.cfg
        present = frozenset(_present(sc.tracks, t))
        due = t - self.last_refresh >= cfg.refresh - 1e-9 or present != self.last_ids
        if not due:
            return
        self.last_refresh, self.last_ids = t, present
        # predictions must outlive the refresh period plus the local horizon
        horizon = cfg.horizon + cfg.refresh
        observed = [w for w in (tr.window(tr.t0, t) for tr in sc.tracks) if w is not None]
        models = sc.models or {}
        if cfg.prediction == "oracle":
            self.predicted = _oracle_predictions(sc.tracks, t, horizon, cfg.dt)
        elif cfg.prediction == "constant_velocity":
            self.predicted = constant_velocity_predict(observed, t, horizon)
        else:
            env = crowd_frames(observed, cfg.dt) if observed else []
            self.tracker.refresh(observed, env, t)
            pcfg = PredictionConfig(horizon=horizon, dt=cfg.dt)
            bounds = self.tracker.bounds(t, pcfg.y)
            self.predicted = _rollout_prediction(observed, t, self.tracker, bounds, pcfg)
        for pid in self.predicted:
            model = models.get(pid)
            if model is None and self.tracker is not None:
                model = self.tracker.models.get(pid)
            # unknown pedestrians get a human-sized disc rather than the
            # normalization-center radius
            model = model or MotionModel.from_array(np.r_[DEFAULT_MODEL.as_array()[:3], ROBOT_RADIUS, DEFAULT_MODEL.pref_speed])
            self.profiles[pid] = self._profile(model)
            self.radii[pid] = model.radius


def _current_waypoint(waypoints: list[np.ndarray], idx: int, p: np.ndarray) -> int:
    while idx < len(waypoints) - 1 and np.hypot(*(waypoints[idx] - p)) < WAYPOINT_TOLERANCE:
        idx += 1
    return idx


def run_navigation(scenario: Scenario, cfg: PipelineConfig = PipelineConfig()) -> NavResult:
    """Closed loop: refresh predictions, take one local step, advance time.

    Pedestrians are replayed from their tracks and ignore the robot.
    """
    dt = cfg.dt
    if scenario.tracks and abs(scenario.tracks[0].dt - dt) > 1e-12:
        raise ScenarioError(f"tracks sampled at {scenario.tracks[0].dt} s, loop runs at {dt} s")
    limits = scenario.limits
    waypoints = plan_global(scenario.start, scenario.goal, scenario.obstacles, limits.radius)[1:]
    t0 = min((tr.t0 for tr in scenario.tracks), default=0.0)
    first = waypoints[0]
    robot = RobotState(scenario.start, math.atan2(*(first - scenario.start)[::-1]), 0.0, 0.0, t0)
    predictor = _Predictor(scenario, cfg)

    rows = [[robot.t, *robot.p, robot.heading, robot.v, robot.omega]]
    idx = 0
    reached = False
    emergency = 0
    prox_time = 0.0
    n_steps = int(round(scenario.timeout / dt))
    for _ in range(n_steps):
        if np.hypot(*(robot.p - scenario.goal)) <= GOAL_TOLERANCE:
            reached = True
            break
        predictor.refresh(robot.t)
        idx = _current_waypoint(waypoints, idx, robot.p)
        present = _present(scenario.tracks, robot.t)
        predicted = {pid: tr for pid, tr in predictor.predicted.items() if pid in present}
        tic = wallclock.perf_counter()
        decision = gvo_step(
            robot,
            predicted,
            predictor.profiles,
            waypoints[idx],
            dt,
            scenario.social_mode,
            limits,
            predictor.radii,
            cfg.horizon,
        )
        prox_time += wallclock.perf_counter() - tic
        emergency += decision.emergency
        robot = decision.state
        rows.append([robot.t, *robot.p, robot.heading, robot.v, robot.omega])
    else:
        reached = bool(np.hypot(*(robot.p - scenario.goal)) <= GOAL_TOLERANCE)

    path = np.array(rows)
    profiles = predictor.known_profiles() or predictor.profiles
    personal, social = count_intrusions(path, scenario.tracks, profiles)
    clear = _min_clearance(path, scenario.tracks)
    return NavResult(
        path,
        float(path[-1, 0] - path[0, 0]),
        personal,
        social,
        clear,
        reached,
        emergency,
        1000.0 * prox_time / max(1, len(rows) - 1),
    )


def _min_clearance(path: np.ndarray, tracks: Sequence[Track]) -> float:
    best = math.inf
    for row in path:
        for q in _present(tracks, row[0]).values():
            best = min(best, math.hypot(row[1] - q[0], row[2] - q[1]))
    return best
