"""Synthetic crowds generated with the RVO engine, used as test oracles and
by the ``simulate`` command."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datasets import DEFAULT_DT, RawTrajectoryFile, Track, make_raw
from .estimation import augmented, propagate
from .personality import PARAM_CENTERS
from .rvo import (
    ARRIVAL_RADIUS,
    CrowdFrame,
    MotionModel,
    Obstacle,
    PedestrianState,
    step_crowd,
)


@dataclass
class SimulatedCrowd:
    frames: list[CrowdFrame]
    models: dict[int, MotionModel]
    goals: dict[int, np.ndarray]
    dt: float
    tracks: list[Track]  # possibly noisy observations of ``frames``


def run_crowd(
    initial: Mapping[int, PedestrianState],
    models: Mapping[int, MotionModel],
    goals: Mapping[int, object],
    steps: int,
    dt: float = DEFAULT_DT,
    obstacles: Sequence[Obstacle] = (),
    obs_noise: float = 0.0,
    seed: int = 0,
    t0: float = 0.0,
    remove_on_arrival: bool = False,
) -> SimulatedCrowd:
    """Step the crowd and record per-agent tracks.

    With ``remove_on_arrival`` an agent leaves the scene on the first frame
    it is within the arrival radius of its goal.
    """
    rng = np.random.default_rng(seed)
    frame = CrowdFrame(t0, dict(sorted(initial.items())))
    frames = [frame]
    for _ in range(steps):
        frame = step_crowd(frame, models, goals, obstacles, dt)
        if remove_on_arrival:
            frame = CrowdFrame(
                frame.time,
                {
                    i: s
                    for i, s in frame.states.items()
                    if np.hypot(*(s.p - np.asarray(goals[i]))) >= ARRIVAL_RADIUS
                },
            )
        frames.append(frame)
    tracks = frames_to_tracks(frames, dt)
    if obs_noise > 0:
        tracks = [
            Track(t.pedestrian_id, t.t0, t.dt, t.positions + rng.normal(0.0, obs_noise, t.positions.shape))
            for t in tracks
        ]
    return SimulatedCrowd(frames, dict(models), {i: np.asarray(g, dtype=float) for i, g in goals.items()}, dt, tracks)


def frames_to_tracks(frames: Sequence[CrowdFrame], dt: float) -> list[Track]:
    """Per-agent position tracks; an agent's track stops at its first gap."""
    series: dict[int, tuple[float, list]] = {}
    done: set[int] = set()
    last_index: dict[int, int] = {}
    for frame in frames:
        k = int(round(frame.time / dt))
        for pid, state in frame.states.items():
            if pid in done:
                continue
            if pid in last_index and last_index[pid] != k - 1:
                done.add(pid)
                continue
            series.setdefault(pid, (k * dt, []))[1].append(state.p)
            last_index[pid] = k
    return [Track(pid, t0, dt, np.array(ps)) for pid, (t0, ps) in sorted(series.items())]


def tracks_to_file(tracks: Sequence[Track]) -> RawTrajectoryFile:
    rows = []
    for tr in tracks:
        k0 = tr.start_index
        rows.extend((k0 + i, tr.pedestrian_id, float(x), float(y)) for i, (x, y) in enumerate(tr.positions))
    return make_raw(rows, 1.0 / tracks[0].dt)


def free_walker(speed: float, duration: float, dt: float = DEFAULT_DT, heading: float = 0.0, start=(0.0, 0.0)) -> Track:
    """Straight constant-speed walk with an exact analytic position."""
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    direction = np.array([math.cos(heading), math.sin(heading)])
    return Track(0, 0.0, dt, np.asarray(start, dtype=float) + speed * t[:, None] * direction)


def process_noise_track(
    model: MotionModel,
    steps: int,
    position_variance: float,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    goal=(1000.0, 0.0),
) -> Track:
    """A single agent propagated by f() with Gaussian noise injected on its
    position at every step (observations are exact)."""
    rng = np.random.default_rng(seed)
    x = augmented(PedestrianState([0.0, 0.0], [model.pref_speed, 0.0], [model.pref_speed, 0.0]), model)[None, :]
    positions = [x[0, :2].copy()]
    goal = np.asarray(goal, dtype=float)
    for _ in range(steps):
        x = propagate(x, None, (), goal, dt)
        x[0, :2] += rng.normal(0.0, math.sqrt(position_variance), 2)
        positions.append(x[0, :2].copy())
    return Track(0, 0.0, dt, np.array(positions))


def circle_scenario(n: int = 10, circle_radius: float = 10.0, model: MotionModel | None = None):
    """Agents evenly spaced on a circle, each heading to its antipode."""
    model = model or MotionModel(neighbor_dist=15.0, max_neighbors=10.0, planning_horizon=5.0, radius=0.5, pref_speed=1.4)
    states, goals, models = {}, {}, {}
    for i in range(n):
        a = 2.0 * math.pi * i / n
        p = np.array([circle_radius * math.cos(a), circle_radius * math.sin(a)])
        states[i] = PedestrianState(p)
        goals[i] = -p
        models[i] = model
    return CrowdFrame(0.0, states), models, goals


def passing_pair(subject_radius: float, seed: int = 0, obs_noise: float = 0.02, steps: int = 110) -> SimulatedCrowd:
    """Two walkers passing head-on with a small lateral offset.

    Only the subject's radius varies; pedestrian 0 is the subject.
    """
    subject = MotionModel(10.0, 10.0, 5.0, subject_radius, 1.3)
    other = MotionModel(10.0, 10.0, 5.0, 0.4, 1.3)
    initial = {0: PedestrianState([0.0, 0.0]), 1: PedestrianState([16.0, 0.3])}
    goals = {0: [16.0, 0.0], 1: [0.0, 0.3]}
    return run_crowd(initial, {0: subject, 1: other}, goals, steps, obs_noise=obs_noise, seed=seed)


def random_model(rng: np.random.Generator, spread: float = 0.2) -> MotionModel:
    """Parameters scattered around the normalization centers, the same
    distribution the estimator starts from."""
    values = PARAM_CENTERS * (1.0 + spread * rng.standard_normal(5))
    values[1] = max(1.0, round(values[1]))
    return MotionModel.from_array(np.maximum(values, 0.05))


def random_crowd(
    n: int = 20,
    seed: int = 0,
    duration: float = 20.0,
    dt: float = DEFAULT_DT,
    area: float = 20.0,
    obs_noise: float = 0.05,
) -> SimulatedCrowd:
    """Agents crossing a square area between random boundary points.

    Agents start on one side and aim at a random point on the opposite side,
    so the crowd has several interacting streams.
    """
    rng = np.random.default_rng(seed)
    half = area / 2.0
    states, goals, models = {}, {}, {}
    placed: list[tuple[np.ndarray, float]] = []
    for i in range(n):
        model = random_model(rng)
        for _ in range(1000):
            side = int(rng.integers(4))
            a, b = rng.uniform(-half, half, size=2)
            start, goal = _side_points(side, a, b, half)
            if all(np.hypot(*(start - q)) > model.radius + r + 0.2 for q, r in placed):
                break
        placed.append((start, model.radius))
        states[i] = PedestrianState(start)
        goals[i] = goal
        models[i] = model
    steps = int(round(duration / dt))
    return run_crowd(states, models, goals, steps, dt, obs_noise=obs_noise, seed=seed + 1, remove_on_arrival=True)


def _side_points(side: int, a: float, b: float, half: float):
    if side == 0:
        return np.array([-half, a]), np.array([half, b])
    if side == 1:
        return np.array([half, a]), np.array([-half, b])
    if side == 2:
        return np.array([a, -half]), np.array([b, half])
    return np.array([a, half]), np.array([b, -half])


CROSSING_KINDS = ("perpendicular", "counterflow", "diagonal")
CROSSING_HALF_LENGTH = 15.0
ROBOT_CRUISE = 1.5


def crossing_scenario(kind: str = "perpendicular", n: int = 20, seed: int = 0, duration: float = 50.0, dt: float = DEFAULT_DT):
    """Pedestrian streams crossing a straight robot route along the x axis.

    The robot runs from (-15, 0) to (15, 0).  Every other pedestrian is timed
    to meet the route near where a robot cruising at 1.5 m/s would be; the
    rest cross elsewhere.  Pedestrians avoid each other with RVO but are never
    told about the robot.  Returns (SimulatedCrowd, start, goal).
    """
    if kind not in CROSSING_KINDS:
        raise ValueError(f"unknown crossing kind {kind!r}")
    rng = np.random.default_rng(seed)
    half = CROSSING_HALF_LENGTH
    states, goals, models = {}, {}, {}
    for i in range(n):
        model = MotionModel(
            neighbor_dist=10.0,
            max_neighbors=10.0,
            planning_horizon=float(rng.uniform(3.0, 8.0)),
            radius=float(rng.uniform(0.25, 0.35)),
            pref_speed=float(rng.uniform(1.0, 1.6)),
        )
        side = 1.0 if i % 2 == 0 else -1.0
        # where along the route the pedestrian meets it, and when
        meet_x = -half + 3.0 + (2.0 * half - 6.0) * (i + rng.uniform(0.0, 1.0)) / n
        robot_time = (meet_x + half) / ROBOT_CRUISE
        if i % 2 == 0:
            meet_t = robot_time - rng.uniform(0.6, 1.0)
        else:
            meet_t = robot_time + rng.choice([-1.0, 1.0]) * rng.uniform(4.0, 8.0)
        meet_t = max(meet_t, 0.5)
        if kind == "perpendicular":
            direction = np.array([0.0, 1.0])
            meet = np.array([meet_x, 0.0])
        elif kind == "diagonal":
            direction = np.array([-0.5, side * math.sqrt(3.0) / 2.0])
            meet = np.array([meet_x, 0.0])
        else:
            direction = np.array([-1.0, 0.0])
            lane = side * rng.uniform(0.5, 1.0) if i % 2 == 0 else side * rng.uniform(2.5, 4.0)
            meet = np.array([meet_x, lane])
            # head-on walkers meet the robot where their closing speeds add up
            meet_t = (meet_x + half) / ROBOT_CRUISE
        start = meet - direction * model.pref_speed * meet_t
        states[i] = PedestrianState(start)
        goals[i] = start + 200.0 * direction
        models[i] = model
    steps = int(round(duration / dt))
    sim = run_crowd(states, models, goals, steps, dt, seed=seed)
    return sim, np.array([-half, 0.0]), np.array([half, 0.0])
