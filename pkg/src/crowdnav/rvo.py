"""Reciprocal velocity obstacle (RVO) crowd stepping.

Velocities are chosen by sampling the admissible disc of each agent and
scoring every candidate against the reciprocal velocity obstacles of its
nearest neighbours and the static line-segment obstacles.  The same kernel is
used to step a whole crowd, to propagate filter ensembles and to roll out
predictions, so it is written batched: every array has a leading batch axis
and all per-candidate arithmetic is elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernel

MAX_SPEED = 5.0
ARRIVAL_RADIUS = 0.1
SPEED_CAP_FACTOR = 1.5
RECIPROCITY = 0.5
TTC_WEIGHT = 1.0
N_SAMPLES = 256

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class MissingModel(KeyError):
    """A pedestrian in the frame has no motion model or goal."""


@dataclass(frozen=True)
class MotionModel:
    """The five RVO parameters of one pedestrian.

    ``max_neighbors`` is kept real-valued so it can live inside a filter
    state; it is rounded (and floored at 1) wherever neighbours are selected.
    """

    neighbor_dist: float = 15.0
    max_neighbors: float = 10.0
    planning_horizon: float = 30.0
    radius: float = 0.8
    pref_speed: float = 1.4

    def __post_init__(self):
        for name, value in zip(self.names(), self.as_array()):
            if not value > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("neighbor_dist", "max_neighbors", "planning_horizon", "radius", "pref_speed")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.neighbor_dist, self.max_neighbors, self.planning_horizon, self.radius, self.pref_speed],
            dtype=float,
        )

    @classmethod
    def from_array(cls, values) -> "MotionModel":
        return cls(*(float(x) for x in np.asarray(values, dtype=float).reshape(5)))

    @property
    def neighbor_count(self) -> int:
        return max(1, int(round(self.max_neighbors)))


DEFAULT_MODEL = MotionModel()


@dataclass(frozen=True)
class PedestrianState:
    p: np.ndarray
    v_c: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v_pref: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))
        object.__setattr__(self, "v_c", np.asarray(self.v_c, dtype=float).reshape(2))
        object.__setattr__(self, "v_pref", np.asarray(self.v_pref, dtype=float).reshape(2))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v_c, self.v_pref])


@dataclass(frozen=True)
class Obstacle:
    """A zero-thickness wall segment between two distinct points."""

    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        b = tuple(float(x) for x in self.b)
        if a == b:
            raise ValueError("obstacle endpoints must be distinct")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class CrowdFrame:
    time: float
    states: Mapping[int, PedestrianState]


def obstacles_array(obstacles: Sequence[Obstacle]) -> np.ndarray:
    if not obstacles:
        return np.zeros((0, 2, 2))
    return np.array([[o.a, o.b] for o in obstacles], dtype=float)


def unit_pattern(n: int = N_SAMPLES) -> np.ndarray:
    """Vogel spiral filling the unit disc (deterministic, low discrepancy).

    The spiral is deliberately not mirror-symmetric so that left/right
    sidesteps never tie exactly.
    """
    k = np.arange(n, dtype=float)
    r = np.sqrt((k + 0.5) / n)
    theta = k * _GOLDEN_ANGLE
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


_PATTERN = unit_pattern()


def preferred_velocity(state: PedestrianState, goal, model: MotionModel) -> np.ndarray:
    """Unit vector toward ``goal`` scaled by the preferred speed."""
    d = np.asarray(goal, dtype=float) - state.p
    dist = math.hypot(d[0], d[1])
    if dist < ARRIVAL_RADIUS:
        return np.zeros(2)
    return d / dist * model.pref_speed


def select_velocities(
    p,
    v,
    v_pref,
    radius,
    horizon,
    max_speed,
    nb_p,
    nb_v,
    nb_r,
    nb_mask,
    segs,
    dt: float,
    nb_static=None,
) -> np.ndarray:
    """Batched velocity selection.

    Shapes: p, v, v_pref (B,2); radius, horizon, max_speed (B,);
    nb_p, nb_v (B,N,2); nb_r, nb_mask, nb_static (B,N); segs (M,2,2).
    Returns (B,2).  Static neighbours (``nb_static``) are avoided with full
    responsibility, everyone else with the reciprocal share.

    Among the candidates, one that stays collision free for the whole
    planning horizon and is closest to the preferred velocity wins.  Failing
    that, candidates safe for at least one step are scored by distance plus
    inverse time to collision, and failing that all candidates are.
    """
    p = np.ascontiguousarray(p, dtype=float)
    batch = p.shape[0]
    nb_p = np.asarray(nb_p, dtype=float).reshape(batch, -1, 2)
    nb_mask = np.asarray(nb_mask, dtype=bool).reshape(batch, -1)
    if nb_static is None:
        nb_static = np.zeros(nb_mask.shape, dtype=bool)
    return _kernel.select(
        p,
        np.ascontiguousarray(v, dtype=float),
        np.ascontiguousarray(v_pref, dtype=float),
        np.ascontiguousarray(radius, dtype=float).reshape(batch),
        np.ascontiguousarray(horizon, dtype=float).reshape(batch),
        np.ascontiguousarray(max_speed, dtype=float).reshape(batch),
        np.ascontiguousarray(nb_p),
        np.ascontiguousarray(nb_v, dtype=float).reshape(batch, -1, 2),
        np.ascontiguousarray(nb_r, dtype=float).reshape(batch, -1),
        np.ascontiguousarray(nb_mask),
        np.ascontiguousarray(nb_static, dtype=bool).reshape(nb_mask.shape),
        np.ascontiguousarray(segs, dtype=float).reshape(-1, 2, 2),
        float(dt),
        _PATTERN,
        RECIPROCITY,
        TTC_WEIGHT,
    )


def is_static(state: PedestrianState) -> bool:
    """A neighbour that is neither moving nor trying to move."""
    return not (state.v_c.any() or state.v_pref.any())


def _static_rows(v, v_pref) -> np.ndarray:
    return ~(v.any(axis=1) | v_pref.any(axis=1))


def neighbor_mask(p, nb_p, neighbor_dist, max_neighbors) -> np.ndarray:
    """Select up to ``max_neighbors`` nearest neighbours within range.

    Neighbour columns must already be ordered by pedestrian id so the stable
    sort breaks distance ties toward the lower id.
    """
    d = nb_p - p[:, None, :]
    dist = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
    order = np.argsort(dist, axis=1, kind="stable")
    rank = np.empty_like(order)
    rows = np.arange(order.shape[0])[:, None]
    rank[rows, order] = np.arange(order.shape[1])[None, :]
    count = np.maximum(1, np.rint(max_neighbors)).astype(int)
    return (dist < neighbor_dist[:, None]) & (rank < count[:, None])


def compute_new_velocity(
    state: PedestrianState,
    model: MotionModel,
    neighbors: Sequence[tuple[PedestrianState, MotionModel]],
    obstacles: Sequence[Obstacle],
    dt: float,
) -> np.ndarray:
    """Collision-avoiding velocity for one agent, using ``state.v_pref`` as
    the preferred velocity."""
    n = len(neighbors)
    nb_p = np.array([s.p for s, _ in neighbors], dtype=float).reshape(1, n, 2)
    nb_v = np.array([s.v_c for s, _ in neighbors], dtype=float).reshape(1, n, 2)
    nb_r = np.array([m.radius for _, m in neighbors], dtype=float).reshape(1, n)
    nb_static = np.array([is_static(s) for s, _ in neighbors], dtype=bool).reshape(1, n)
    m = model.as_array()[None, :]
    mask = neighbor_mask(state.p[None, :], nb_p, m[:, 0], m[:, 1])
    out = select_velocities(
        state.p[None, :],
        state.v_c[None, :],
        state.v_pref[None, :],
        m[:, 3],
        m[:, 2],
        SPEED_CAP_FACTOR * m[:, 4],
        nb_p,
        nb_v,
        nb_r,
        mask,
        obstacles_array(obstacles),
        dt,
        nb_static,
    )
    return out[0]


def step_crowd(
    frame: CrowdFrame,
    models: Mapping[int, MotionModel],
    goals: Mapping[int, object],
    obstacles: Sequence[Obstacle],
    dt: float,
) -> CrowdFrame:
    """Advance every agent synchronously by one timestep."""
    ids = sorted(frame.states)
    if not ids:
        return CrowdFrame(frame.time + dt, {})
    for pid in ids:
        if pid not in models:
            raise MissingModel(pid)
        if pid not in goals:
            raise MissingModel(pid)

    params = np.array([models[i].as_array() for i in ids])
    p = np.array([frame.states[i].p for i in ids])
    v = np.array([frame.states[i].v_c for i in ids])
    v_pref = np.array([preferred_velocity(frame.states[i], goals[i], models[i]) for i in ids])
    new_v = crowd_velocities(p, v, v_pref, params, obstacles_array(obstacles), dt)
    new_p = p + new_v * dt
    states = {
        pid: PedestrianState(new_p[k], new_v[k], v_pref[k]) for k, pid in enumerate(ids)
    }
    return CrowdFrame(frame.time + dt, states)


def crowd_velocities(p, v, v_pref, params, segs, dt: float) -> np.ndarray:
    """New velocities for n agents that all see each other (rows in id order)."""
    n = p.shape[0]
    nb_p = np.broadcast_to(p[None, :, :], (n, n, 2))
    nb_v = np.broadcast_to(v[None, :, :], (n, n, 2))
    nb_r = np.broadcast_to(params[None, :, 3], (n, n))
    nb_static = np.broadcast_to(_static_rows(v, v_pref)[None, :], (n, n))
    mask = neighbor_mask_excluding_self(p, params)
    return select_velocities(
        p, v, v_pref, params[:, 3], params[:, 2], SPEED_CAP_FACTOR * params[:, 4],
        nb_p, nb_v, nb_r, mask, segs, dt, nb_static,
    )


def neighbor_mask_excluding_self(p, params) -> np.ndarray:
    n = p.shape[0]
    nb_p = np.broadcast_to(p[None, :, :], (n, n, 2)).copy()
    # push self out of range without disturbing the id order of the others
    nb_p[np.arange(n), np.arange(n)] = np.inf
    return neighbor_mask(p, nb_p, params[:, 0], params[:, 1])


def simulate(
    frame: CrowdFrame,
    models: Mapping[int, MotionModel],
    goals: Mapping[int, object],
    obstacles: Sequence[Obstacle],
    dt: float,
    steps: int,
) -> list[CrowdFrame]:
    """Roll ``step_crowd`` forward, returning ``steps + 1`` frames."""
    out = [frame]
    for _ in range(steps):
        out.append(step_crowd(out[-1], models, goals, obstacles, dt))
    return out

