"""Ensemble Kalman filtering of pedestrian state and RVO parameters, with an
EM loop that re-estimates the (diagonal) process-noise covariance.

The filter state of one pedestrian is 11-dimensional::

    [px, py, vx, vy, vpref_x, vpref_y, neighbor_dist, max_neighbors,
     planning_horizon, radius, pref_speed]

The five parameters have no dynamics of their own; they only drift through
the process noise and are pulled by the Kalman correction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .datasets import Track, track_velocities
from .personality import PARAM_CENTERS
from .rvo import (
    ARRIVAL_RADIUS,
    DEFAULT_MODEL,
    SPEED_CAP_FACTOR,
    CrowdFrame,
    MotionModel,
    Obstacle,
    PedestrianState,
    is_static,
    neighbor_mask,
    obstacles_array,
    select_velocities,
)

log = logging.getLogger(__name__)

STATE_DIM = 11
POS = slice(0, 2)
VEL = slice(2, 4)
VPREF = slice(4, 6)
PARAMS = slice(6, 11)

PARAM_FLOOR = 1e-3
SIGMA_Q_FLOOR = 1e-12
DEFAULT_ENSEMBLE_SIZE = 100
DEFAULT_EM_ITERATIONS = 5
INIT_PARAM_SPREAD = 0.2
INIT_VELOCITY_STD = 0.3
GOAL_EXTENSION = 2.0
MIN_TRACK_SECONDS = 1.0
MIN_TRACK_STEPS = 5
# leading filter steps left out of the process-noise update (initial transient)
BURN_IN_STEPS = 10

class EstimationError(RuntimeError):
    pass


class DegenerateEnsemble(EstimationError):
    pass


class TrackTooShort(EstimationError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    sigma_r: np.ndarray
    sigma_q: np.ndarray  # diagonal of the 11x11 process covariance

    def __post_init__(self):
        r = np.asarray(self.sigma_r, dtype=float)
        if r.ndim == 0:
            r = np.eye(2) * float(r)
        elif r.ndim == 1:
            r = np.diag(r)
        q = np.asarray(self.sigma_q, dtype=float)
        if q.ndim == 2:
            q = np.diag(q).copy()
        if r.shape != (2, 2) or q.shape != (STATE_DIM,):
            raise ValueError("sigma_r must be 2x2 and sigma_q must have 11 diagonal entries")
        if not np.allclose(r, r.T) or np.linalg.eigvalsh(r).min() <= 0:
            raise ValueError("sigma_r must be symmetric positive definite")
        if (q < 0).any():
            raise ValueError("sigma_q must be positive semi-definite")
        object.__setattr__(self, "sigma_r", r)
        object.__setattr__(self, "sigma_q", q)


def default_noise_config(obs_std: float = 0.05) -> NoiseConfig:
    """Observation noise of ``obs_std`` metres and a mild process-noise guess."""
    param_q = (0.01 * PARAM_CENTERS) ** 2
    q = np.concatenate([[1e-3, 1e-3], [1e-2, 1e-2], [1e-2, 1e-2], param_q])
    return NoiseConfig(np.eye(2) * obs_std**2, q)


@dataclass(frozen=True)
class Ensemble:
    members: np.ndarray  # (E, 11)
    timestamp: float

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 2 or m.shape[1] != STATE_DIM:
            raise ValueError(f"ensemble members must be (E, {STATE_DIM})")
        object.__setattr__(self, "members", m)

    @property
    def size(self) -> int:
        return self.members.shape[0]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    def mean_model(self) -> MotionModel:
        return MotionModel.from_array(np.maximum(self.mean()[PARAMS], PARAM_FLOOR))

    def mean_state(self) -> PedestrianState:
        m = self.mean()
        return PedestrianState(m[POS], m[VEL], m[VPREF])


def augmented(state: PedestrianState, model: MotionModel) -> np.ndarray:
    return np.concatenate([state.as_array(), model.as_array()])


def _floor_params(members: np.ndarray) -> np.ndarray:
    members[:, PARAMS] = np.maximum(members[:, PARAMS], PARAM_FLOOR)
    return members


def _environment(env: CrowdFrame | None, self_id, env_models):
    """Neighbour arrays (ordered by id) from a crowd frame, minus ``self_id``."""
    if env is None:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=bool)
    ids = [i for i in sorted(env.states) if i != self_id]
    env_models = env_models or {}
    p = np.array([env.states[i].p for i in ids]).reshape(-1, 2)
    v = np.array([env.states[i].v_c for i in ids]).reshape(-1, 2)
    r = np.array([env_models.get(i, DEFAULT_MODEL).radius for i in ids], dtype=float)
    static = np.array([is_static(env.states[i]) for i in ids], dtype=bool)
    return p, v, r, static


def propagate(
    members: np.ndarray,
    env: CrowdFrame | None,
    obstacles: Sequence[Obstacle],
    goal,
    dt: float,
    self_id=None,
    env_models: Mapping[int, MotionModel] | None = None,
) -> np.ndarray:
    """Noise-free transition f() applied to every member."""
    x = np.asarray(members, dtype=float)
    n_members = x.shape[0]
    params = np.maximum(x[:, PARAMS], PARAM_FLOOR)
    p = x[:, POS]
    d = np.asarray(goal, dtype=float)[None, :] - p
    dist = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    away = dist >= ARRIVAL_RADIUS
    v_pref = np.zeros_like(p)
    v_pref[away] = d[away] / dist[away, None] * params[away, 4, None]

    env_p, env_v, env_r, env_static = _environment(env, self_id, env_models)
    n_nb = env_p.shape[0]
    nb_p = np.broadcast_to(env_p[None], (n_members, n_nb, 2))
    nb_v = np.broadcast_to(env_v[None], (n_members, n_nb, 2))
    nb_r = np.broadcast_to(env_r[None], (n_members, n_nb))
    nb_static = np.broadcast_to(env_static[None], (n_members, n_nb))
    mask = neighbor_mask(p, nb_p, params[:, 0], params[:, 1]) if n_nb else np.zeros((n_members, 0), dtype=bool)
    v_new = select_velocities(
        p, x[:, VEL], v_pref, params[:, 3], params[:, 2], SPEED_CAP_FACTOR * params[:, 4],
        nb_p, nb_v, nb_r, mask, obstacles_array(obstacles), dt, nb_static,
    )
    out = x.copy()
    out[:, POS] = p + v_new * dt
    out[:, VEL] = v_new
    out[:, VPREF] = v_pref
    return out


def enkf_predict(
    ens: Ensemble,
    env: CrowdFrame | None,
    obstacles: Sequence[Obstacle],
    goal,
    dt: float,
    sigma_q,
    rng_seed=None,
    self_id=None,
    env_models: Mapping[int, MotionModel] | None = None,
) -> Ensemble:
    """Advance every member one RVO step with its own parameters, then add
    independent Gaussian process noise."""
    rng = np.random.default_rng(rng_seed)
    forecast = propagate(ens.members, env, obstacles, goal, dt, self_id, env_models)
    q = np.asarray(sigma_q, dtype=float)
    if q.ndim == 2:
        q = np.diag(q)
    noise = rng.standard_normal(forecast.shape) * np.sqrt(q)[None, :]
    return Ensemble(_floor_params(forecast + noise), ens.timestamp + dt)


def ensemble_analysis(members: np.ndarray, observed, z, sigma_r, rng: np.random.Generator) -> np.ndarray:
    """Stochastic EnKF analysis for a linear observation of some columns.

    ``members`` is (E, n); ``observed`` selects the m observed columns; each
    member is pulled toward its own perturbed copy of ``z`` with the gain
    built from the ensemble cross-covariance.
    """
    x = np.asarray(members, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DegenerateEnsemble("ensemble needs at least two members")
    r = np.atleast_2d(np.asarray(sigma_r, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    anomalies = x - x.mean(axis=0)
    hx = x[:, observed].reshape(n, -1)
    h_anom = anomalies[:, observed].reshape(n, -1)
    p_xz = anomalies.T @ h_anom / (n - 1)
    p_zz = h_anom.T @ h_anom / (n - 1) + r
    if np.linalg.matrix_rank(p_zz, tol=1e-14) < p_zz.shape[0]:
        raise DegenerateEnsemble("innovation covariance is singular")
    gain = np.linalg.solve(p_zz, p_xz.T).T
    noise = rng.multivariate_normal(np.zeros(len(z)), r, size=n, method="cholesky")
    return x + (z[None, :] + noise - hx) @ gain.T


def enkf_update(ens: Ensemble, z, sigma_r, rng_seed=None) -> Ensemble:
    """Update every member with a perturbed copy of the position fix ``z``."""
    if ens.size < 2:
        raise DegenerateEnsemble("ensemble needs at least two members")
    posterior = ensemble_analysis(ens.members, POS, z, sigma_r, np.random.default_rng(rng_seed))
    return Ensemble(_floor_params(posterior), ens.timestamp)


def extrapolated_goal(positions: np.ndarray, dt: float, extension: float = GOAL_EXTENSION) -> np.ndarray:
    """Last position pushed ``extension`` metres along the final heading.

    The heading is taken over the last second of the track; a track without
    net motion gets the +x direction so its goal is still well defined.
    """
    positions = np.asarray(positions, dtype=float)
    back = min(len(positions) - 1, max(1, int(round(1.0 / dt))))
    heading = positions[-1] - positions[-1 - back]
    norm = float(np.hypot(*heading))
    direction = heading / norm if norm > 1e-9 else np.array([1.0, 0.0])
    return positions[-1] + extension * direction


def initial_ensemble(
    track: Track,
    config: NoiseConfig,
    size: int,
    rng: np.random.Generator,
    prior: MotionModel | None = None,
) -> Ensemble:
    """Members scattered around the first observation and the parameter prior."""
    z0 = track.positions[0]
    v0 = track_velocities(track)[0]
    center = (prior or DEFAULT_MODEL).as_array()
    x = np.empty((size, STATE_DIM))
    x[:, POS] = z0 + rng.multivariate_normal(np.zeros(2), config.sigma_r, size=size, method="cholesky")
    x[:, VEL] = v0 + INIT_VELOCITY_STD * rng.standard_normal((size, 2))
    x[:, VPREF] = x[:, VEL]
    x[:, PARAMS] = center * (1.0 + INIT_PARAM_SPREAD * rng.standard_normal((size, 5)))
    return Ensemble(_floor_params(x), track.t0)


def expected_log_likelihood(residuals: np.ndarray, sigma_q) -> float:
    """-sum_t mean_e r^T Sigma_q^-1 r for residuals shaped (T, E, 11)."""
    q = np.asarray(sigma_q, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        return 0.0
    return -float(np.sum(np.mean(np.sum(r * r / q, axis=2), axis=1)))


@dataclass
class FilterPass:
    ensembles: list[Ensemble]
    residuals: np.ndarray  # (T-1, E, 11): posterior minus f(previous posterior)


@dataclass
class EMResult:
    sigma_q: np.ndarray
    ensembles: list[Ensemble]
    sigma_q_history: list[np.ndarray] = field(default_factory=list)
    log_likelihood: list[float] = field(default_factory=list)
    collapsed: bool = False


def _frames_by_index(env_frames: Sequence[CrowdFrame] | None, dt: float) -> dict[int, CrowdFrame]:
    return {int(round(f.time / dt)): f for f in (env_frames or [])}


def filter_track(
    track: Track,
    env_frames: Sequence[CrowdFrame] | None,
    config: NoiseConfig,
    rng_seed: int,
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
    obstacles: Sequence[Obstacle] = (),
    goal=None,
    env_models: Mapping[int, MotionModel] | None = None,
    prior: MotionModel | None = None,
) -> FilterPass:
    """One full EnKF pass over ``track`` under ``config.sigma_q``."""
    dt = track.dt
    if goal is None:
        goal = extrapolated_goal(track.positions, dt)
    env_by_index = _frames_by_index(env_frames, dt)
    seeds = np.random.SeedSequence(rng_seed)
    init_seed, *step_seeds = seeds.spawn(1 + 2 * len(track.positions))
    ens = initial_ensemble(track, config, ensemble_size, np.random.default_rng(init_seed), prior)
    ens = enkf_update(ens, track.positions[0], config.sigma_r, step_seeds[0])
    ensembles = [ens]
    residuals = []
    k0 = track.start_index
    for i in range(1, len(track.positions)):
        env = env_by_index.get(k0 + i - 1)
        forecast = propagate(ens.members, env, obstacles, goal, dt, track.pedestrian_id, env_models)
        rng = np.random.default_rng(step_seeds[2 * i - 1])
        noisy = forecast + rng.standard_normal(forecast.shape) * np.sqrt(config.sigma_q)[None, :]
        prior_ens = Ensemble(_floor_params(noisy), ens.timestamp + dt)
        ens = enkf_update(prior_ens, track.positions[i], config.sigma_r, step_seeds[2 * i])
        residuals.append(ens.members - forecast)
        ensembles.append(ens)
    return FilterPass(ensembles, np.array(residuals).reshape(-1, ensemble_size, STATE_DIM))


def em_estimate_sigma_q(
    track: Track,
    env_frames: Sequence[CrowdFrame] | None,
    init: NoiseConfig,
    iterations: int = DEFAULT_EM_ITERATIONS,
    rng_seed: int = 0,
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
    obstacles: Sequence[Obstacle] = (),
    goal=None,
    env_models: Mapping[int, MotionModel] | None = None,
    prior: MotionModel | None = None,
) -> EMResult:
    """Alternate full filter passes with the process-noise update.

    Every pass reuses the same random stream, so successive iterates differ
    only through sigma_q.  The first ``BURN_IN_STEPS`` residuals (the pull
    away from the parameter prior) are left out of the covariance update.
    The objective recorded for iterate k is :func:`expected_log_likelihood`
    over all residuals of the pass run under it.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if len(track.positions) < MIN_TRACK_STEPS:
        raise TrackTooShort(f"track {track.pedestrian_id} has {len(track.positions)} steps, need {MIN_TRACK_STEPS}")
    sigma_q = np.array(init.sigma_q, dtype=float)
    history = [sigma_q.copy()]
    lls = []
    collapsed = False
    result = None
    for _ in range(iterations):
        cfg = NoiseConfig(init.sigma_r, sigma_q)
        result = filter_track(track, env_frames, cfg, rng_seed, ensemble_size, obstacles, goal, env_models, prior)
        lls.append(expected_log_likelihood(result.residuals, np.maximum(sigma_q, SIGMA_Q_FLOOR)))
        burn = min(BURN_IN_STEPS, len(result.residuals) // 2)
        new_q = np.mean(result.residuals[burn:] ** 2, axis=(0, 1))
        if (new_q < SIGMA_Q_FLOOR).any():
            collapsed = True
            new_q = np.maximum(new_q, SIGMA_Q_FLOOR)
        sigma_q = new_q
        history.append(sigma_q.copy())
    if collapsed:
        log.warning("sigma_q collapsed below %g for track %s; floored", SIGMA_Q_FLOOR, track.pedestrian_id)
    return EMResult(sigma_q, result.ensembles, history, lls, collapsed)


@dataclass
class Estimate:
    pedestrian_id: int
    model: MotionModel
    state: PedestrianState
    sigma_q: np.ndarray
    seed: int
    collapsed: bool = False

    def to_json(self) -> dict:
        return {
            "parameters": {k: float(v) for k, v in zip(MotionModel.names(), self.model.as_array())},
            "state": {
                "p": [float(x) for x in self.state.p],
                "v_c": [float(x) for x in self.state.v_c],
                "v_pref": [float(x) for x in self.state.v_pref],
            },
            "sigma_q_diag": [float(x) for x in self.sigma_q],
            "seed": int(self.seed),
            "collapsed": bool(self.collapsed),
        }


def estimate_motion_model(
    track: Track,
    env_frames: Sequence[CrowdFrame] | None,
    config: NoiseConfig,
    rng_seed: int = 0,
    iterations: int = DEFAULT_EM_ITERATIONS,
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
    obstacles: Sequence[Obstacle] = (),
    goal=None,
    env_models: Mapping[int, MotionModel] | None = None,
    prior: MotionModel | None = None,
) -> Estimate:
    """EM-filtered ensemble mean of the parameters and state at the last step."""
    duration = track.dt * (len(track.positions) - 1)
    if duration < MIN_TRACK_SECONDS - 1e-9 or len(track.positions) < MIN_TRACK_STEPS:
        raise TrackTooShort(f"track {track.pedestrian_id} spans {duration:.2f} s, need {MIN_TRACK_SECONDS} s")
    em = em_estimate_sigma_q(
        track, env_frames, config, iterations, rng_seed, ensemble_size, obstacles, goal, env_models, prior
    )
    final = em.ensembles[-1]
    return Estimate(track.pedestrian_id, final.mean_model(), final.mean_state(), em.sigma_q, rng_seed, em.collapsed)
