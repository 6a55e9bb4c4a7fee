"""Long-horizon pedestrian prediction by trait-clamped RVO rollout, the
stride-length accuracy metric, and a sliding-window benchmark harness."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datasets import Track, frames as crowd_frames
from .estimation import (
    DEFAULT_EM_ITERATIONS,
    DEFAULT_ENSEMBLE_SIZE,
    NoiseConfig,
    TrackTooShort,
    default_noise_config,
    estimate_motion_model,
)
from .personality import (
    DEFAULT_Y,
    ParamBounds,
    TraitVector,
    clamp_params,
    compute_bounds,
    recompute_weights,
    traits_from_params,
)
from .rvo import DEFAULT_MODEL, CrowdFrame, MissingModel, MotionModel, Obstacle, PedestrianState, step_crowd

log = logging.getLogger(__name__)

STRIDE_LENGTH = 0.8
GOAL_LOOKAHEAD = 5.0
CV_LOOKBACK = 0.5

METHOD_CV = "constant_velocity"
METHOD_KALMAN = "kalman"
METHOD_UNCLAMPED = "rvo_unclamped"
METHOD_FULL = "trait_rvo"
ALL_METHODS = (METHOD_CV, METHOD_KALMAN, METHOD_UNCLAMPED, METHOD_FULL)


class MissingBounds(KeyError):
    pass


class NoEvaluablePedestrians(ValueError):
    pass


class DatasetTooShort(ValueError):
    pass


@dataclass(frozen=True)
class PredictionConfig:
    horizon: float = 5.0
    dt: float = 0.1
    resample_interval: float = 1.0
    y: float = DEFAULT_Y
    goal_lookahead: float = GOAL_LOOKAHEAD

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.y < 0:
            raise ValueError("y must be non-negative")
        if not self.resample_interval > 0:
            raise ValueError("resample_interval must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class PredictedTrack:
    ped_id: int
    start_time: float
    dt: float
    positions: np.ndarray

    def position_at(self, t: float) -> np.ndarray | None:
        k = int(round((t - self.start_time) / self.dt))
        if abs(self.start_time + k * self.dt - t) > 1e-6 * self.dt or not 0 <= k < len(self.positions):
            return None
        return self.positions[k]


def goal_along_heading(state: PedestrianState, lookahead: float = GOAL_LOOKAHEAD, fallback=None) -> np.ndarray:
    """A goal ``lookahead`` metres ahead along the current velocity."""
    speed = float(np.hypot(*state.v_c))
    if speed < 1e-6:
        return np.asarray(fallback if fallback is not None else state.p, dtype=float)
    return state.p + state.v_c / speed * lookahead


def _intended_goal(state: PedestrianState, lookahead: float, fallback) -> np.ndarray:
    # extend along the preferred rather than the current velocity, so a
    # sidestep taken to avoid someone is not locked into the new goal
    return goal_along_heading(PedestrianState(state.p, state.v_pref), lookahead, fallback)


def clamp_models(
    models: Mapping[int, MotionModel], bounds: Mapping[int, ParamBounds]
) -> tuple[dict[int, MotionModel], dict[int, TraitVector]]:
    """Clamp every model into its bounds and recompute its trait weights."""
    clamped, weights = {}, {}
    for pid, m in models.items():
        if pid not in bounds:
            raise MissingBounds(pid)
        clamped[pid] = clamp_params(m, bounds[pid])
        weights[pid] = recompute_weights(traits_from_params(m), clamped[pid])
    return clamped, weights


def predict(
    history: Sequence[CrowdFrame],
    models: Mapping[int, MotionModel],
    bounds: Mapping[int, ParamBounds],
    goals: Mapping[int, object],
    obstacles: Sequence[Obstacle] = (),
    cfg: PredictionConfig = PredictionConfig(),
) -> dict[int, PredictedTrack]:
    """Roll the crowd present at the last history frame forward.

    Goals are re-extrapolated along each agent's rolled preferred heading
    every ``cfg.resample_interval`` seconds of simulated time.
    """
    if not history:
        return {}
    current = history[-1]
    ids = sorted(current.states)
    for pid in ids:
        if pid not in models or pid not in goals:
            raise MissingModel(pid)
        if pid not in bounds:
            raise MissingBounds(pid)
    clamped, _ = clamp_models({i: models[i] for i in ids}, {i: bounds[i] for i in ids})
    goals = {i: np.asarray(goals[i], dtype=float) for i in ids}

    resample_every = int(round(cfg.resample_interval / cfg.dt))
    frame = current
    paths = {i: [current.states[i].p] for i in ids}
    for step in range(1, cfg.steps + 1):
        frame = step_crowd(frame, clamped, goals, obstacles, cfg.dt)
        for i in ids:
            paths[i].append(frame.states[i].p)
        if resample_every > 0 and step % resample_every == 0 and step < cfg.steps:
            goals = {i: _intended_goal(frame.states[i], cfg.goal_lookahead, goals[i]) for i in ids}
    return {i: PredictedTrack(i, current.time, cfg.dt, np.array(paths[i])) for i in ids}


def mean_errors(
    predicted: Mapping[int, PredictedTrack], truth: Sequence[Track], window: float
) -> dict[int, float]:
    """Mean displacement error over the window for every evaluable pedestrian.

    A pedestrian is evaluable when its ground truth covers every prediction
    step in (start, start + window].
    """
    by_id = {t.pedestrian_id: t for t in truth}
    out = {}
    for pid in sorted(predicted):
        pred = predicted[pid]
        gt = by_id.get(pid)
        if gt is None:
            continue
        n = int(round(window / pred.dt))
        if n > len(pred.positions) - 1:
            raise ValueError(f"window {window} s exceeds the prediction horizon")
        errs = []
        for k in range(1, n + 1):
            q = gt.position_at(pred.start_time + k * pred.dt)
            if q is None:
                break
            errs.append(float(np.hypot(*(pred.positions[k] - q))))
        if n == 0:
            q = gt.position_at(pred.start_time)
            if q is not None:
                errs.append(float(np.hypot(*(pred.positions[0] - q))))
                n = 1
        if len(errs) == n and n > 0:
            out[pid] = float(np.mean(errs))
    return out


def accuracy(
    predicted: Mapping[int, PredictedTrack],
    truth: Sequence[Track],
    window: float,
    threshold: float = STRIDE_LENGTH,
) -> float:
    """Share of pedestrians whose mean error over the window is below
    ``threshold`` metres."""
    errors = mean_errors(predicted, truth, window)
    if not errors:
        raise NoEvaluablePedestrians("no pedestrian has ground truth covering the window")
    return sum(e < threshold for e in errors.values()) / len(errors)


def accuracy_from_errors(errors: Iterable[float], threshold: float = STRIDE_LENGTH) -> float:
    errors = list(errors)
    if not errors:
        raise NoEvaluablePedestrians("no errors to score")
    return sum(e < threshold for e in errors) / len(errors)


# ---------------------------------------------------------------- baselines


def constant_velocity_predict(
    tracks: Sequence[Track], t: float, horizon: float, lookback: float = CV_LOOKBACK
) -> dict[int, PredictedTrack]:
    """Extrapolate the mean velocity of the last ``lookback`` seconds."""
    out = {}
    for tr in tracks:
        k = tr.index_at(t)
        if k is None:
            continue
        back = min(k, max(1, int(round(lookback / tr.dt))))
        v = (tr.positions[k] - tr.positions[k - back]) / (back * tr.dt) if back > 0 else np.zeros(2)
        n = int(round(horizon / tr.dt))
        steps = np.arange(n + 1)[:, None] * tr.dt
        out[tr.pedestrian_id] = PredictedTrack(tr.pedestrian_id, t, tr.dt, tr.positions[k] + steps * v)
    return out


def kalman_predict(
    tracks: Sequence[Track],
    t: float,
    horizon: float,
    obs_std: float = 0.05,
    accel_std: float = 0.5,
    history: float = 3.0,
) -> dict[int, PredictedTrack]:
    """Constant-velocity Kalman filter over the recent history, then a
    linear extrapolation of its final mean."""
    out = {}
    for tr in tracks:
        k = tr.index_at(t)
        if k is None:
            continue
        dt = tr.dt
        lo = max(0, k - int(round(history / dt)))
        f = np.eye(4)
        f[0, 2] = f[1, 3] = dt
        g = np.array([[0.5 * dt * dt, 0], [0, 0.5 * dt * dt], [dt, 0], [0, dt]])
        q = g @ g.T * accel_std**2
        h = np.hstack([np.eye(2), np.zeros((2, 2))])
        r = np.eye(2) * obs_std**2
        x = np.concatenate([tr.positions[lo], np.zeros(2)])
        p = np.diag([obs_std**2, obs_std**2, 1.0, 1.0])
        for i in range(lo + 1, k + 1):
            x = f @ x
            p = f @ p @ f.T + q
            s = h @ p @ h.T + r
            gain = p @ h.T @ np.linalg.inv(s)
            x = x + gain @ (tr.positions[i] - h @ x)
            p = (np.eye(4) - gain @ h) @ p
        n = int(round(horizon / dt))
        steps = np.arange(n + 1)[:, None] * dt
        out[tr.pedestrian_id] = PredictedTrack(tr.pedestrian_id, t, dt, x[:2] + steps * x[2:])
    return out


# ---------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    prediction: PredictionConfig = PredictionConfig()
    windows: tuple[float, ...] = (1.0, 5.0)
    methods: tuple[str, ...] = ALL_METHODS
    eval_every: float = 1.0
    fit_window: float = 3.0
    noise: NoiseConfig = field(default_factory=default_noise_config)
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE
    em_iterations: int = DEFAULT_EM_ITERATIONS
    threshold: float = STRIDE_LENGTH
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not self.windows or max(self.windows) > self.prediction.horizon + 1e-9:
            raise ValueError("every window must be positive and at most the prediction horizon")
        if min(self.windows) <= 0:
            raise ValueError("windows must be positive")


@dataclass
class BenchmarkRow:
    method: str
    window_s: float
    accuracy: float
    n_pedestrians: int


@dataclass
class BenchmarkResult:
    rows: list[BenchmarkRow]
    series: list[dict]  # one dict per evaluation time: {"time": t, (method, window): accuracy}

    def accuracy(self, method: str, window: float) -> float:
        for row in self.rows:
            if row.method == method and abs(row.window_s - window) < 1e-9:
                return row.accuracy
        raise KeyError((method, window))


class BehaviorTracker:
    """Per-pedestrian parameter estimates refreshed once per evaluation.

    The trait vector behind the clamping bounds is the one sampled at the
    previous refresh, so a new estimate is clamped into the band around the
    behaviour seen so far.  The previous estimate also seeds the next filter.
    """

    def __init__(self, cfg: BenchmarkConfig):
        self.cfg = cfg
        self.models: dict[int, MotionModel] = {}
        self.states: dict[int, PedestrianState] = {}
        self.traits: dict[int, TraitVector] = {}
        self.last_sample: dict[int, float] = {}

    def refresh(self, tracks: Sequence[Track], env: Sequence[CrowdFrame], t: float) -> None:
        cfg = self.cfg
        for tr in tracks:
            if tr.index_at(t) is None:
                continue
            window = tr.window(t - cfg.fit_window, t)
            prior = self.models.get(tr.pedestrian_id)
            try:
                est = estimate_motion_model(
                    window,
                    env,
                    cfg.noise,
                    rng_seed=_seed(cfg.seed, tr, t),
                    iterations=cfg.em_iterations,
                    ensemble_size=cfg.ensemble_size,
                    prior=prior,
                )
            except TrackTooShort:
                continue
            self.models[tr.pedestrian_id] = est.model
            self.states[tr.pedestrian_id] = est.state

    def bounds(self, t: float, y: float) -> dict[int, ParamBounds]:
        out = {}
        for pid, m in self.models.items():
            due = pid not in self.traits or t - self.last_sample[pid] >= self.cfg.prediction.resample_interval - 1e-9
            traits = self.traits.get(pid, traits_from_params(m))
            out[pid] = compute_bounds(traits, y)
            if due:
                self.traits[pid] = traits_from_params(m)
                self.last_sample[pid] = t
        return out


def _seed(base: int, track: Track, t: float) -> int:
    # keyed on where and when the track starts rather than on its id, so
    # relabelling pedestrians does not change any estimate
    start = np.asarray(track.positions[0], dtype=np.float64).tobytes()
    key = int.from_bytes(hashlib.blake2b(start + repr(track.t0).encode(), digest_size=8).digest(), "little")
    return int(np.random.SeedSequence([base, key, int(round(t * 1000))]).generate_state(1)[0])


def _rollout_prediction(
    tracks: Sequence[Track],
    t: float,
    tracker: BehaviorTracker,
    bounds: Mapping[int, ParamBounds],
    cfg: PredictionConfig,
) -> dict[int, PredictedTrack]:
    states, models, goals, ped_bounds = {}, {}, {}, {}
    cv = constant_velocity_predict(tracks, t, cfg.dt)
    for tr in tracks:
        k = tr.index_at(t)
        if k is None:
            continue
        pid = tr.pedestrian_id
        if pid in tracker.states:
            s = tracker.states[pid]
            # the filtered preferred velocity is a steadier guide to where the
            # pedestrian is going than the instantaneous one
            state = PedestrianState(s.p, s.v_c, s.v_pref if s.v_pref.any() else s.v_c)
            models[pid] = tracker.models[pid]
            ped_bounds[pid] = bounds[pid]
        else:
            v = (cv[pid].positions[1] - cv[pid].positions[0]) / cfg.dt
            state = PedestrianState(tr.positions[k], v, v)
            speed = float(np.hypot(*v))
            models[pid] = MotionModel.from_array(
                np.r_[DEFAULT_MODEL.as_array()[:4], max(speed, 1e-3)]
            )
            ped_bounds[pid] = ParamBounds.unbounded()
        states[pid] = state
        goals[pid] = _intended_goal(state, cfg.goal_lookahead, state.p)
    history = [CrowdFrame(t, dict(sorted(states.items())))]
    return predict(history, models, ped_bounds, goals, (), cfg)


def benchmark(dataset: Sequence[Track], cfg: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkResult:
    """Sliding evaluation: every ``eval_every`` seconds fit on the past,
    predict, and score each window against the held-out future."""
    if not dataset:
        raise DatasetTooShort("empty dataset")
    dt = dataset[0].dt
    pcfg = cfg.prediction
    if abs(pcfg.dt - dt) > 1e-12:
        pcfg = PredictionConfig(pcfg.horizon, dt, pcfg.resample_interval, pcfg.y, pcfg.goal_lookahead)
    t_min = min(tr.t0 for tr in dataset)
    t_max = max(tr.t_end for tr in dataset)
    w_max = max(cfg.windows)
    step = int(round(cfg.eval_every / dt))
    k = int(math.ceil((t_min + 1.0) / dt - 1e-9))
    eval_times = []
    while (k * dt) + w_max <= t_max + 1e-9:
        eval_times.append(k * dt)
        k += step
    if not eval_times:
        raise DatasetTooShort("dataset too short for one observe/predict/score split")

    env = crowd_frames(dataset, dt)
    tracker = BehaviorTracker(cfg)
    needs_rollout = METHOD_FULL in cfg.methods or METHOD_UNCLAMPED in cfg.methods
    errors: dict[tuple[str, float], list[float]] = {(m, w): [] for m in cfg.methods for w in cfg.windows}
    per_time: dict[tuple[str, float], list[float]] = {(m, w): [] for m in cfg.methods for w in cfg.windows}
    series = []
    for t in eval_times:
        observed = [w for w in (tr.window(tr.t0, t) for tr in dataset) if w is not None]
        env_t = [f for f in env if f.time <= t + 1e-9]
        predictions = {}
        if METHOD_CV in cfg.methods:
            predictions[METHOD_CV] = constant_velocity_predict(observed, t, pcfg.horizon)
        if METHOD_KALMAN in cfg.methods:
            obs_std = float(np.sqrt(cfg.noise.sigma_r[0, 0]))
            predictions[METHOD_KALMAN] = kalman_predict(observed, t, pcfg.horizon, obs_std=obs_std)
        if needs_rollout:
            tracker.refresh(observed, env_t, t)
            if METHOD_UNCLAMPED in cfg.methods:
                unbounded = {pid: ParamBounds.unbounded() for pid in tracker.models}
                predictions[METHOD_UNCLAMPED] = _rollout_prediction(observed, t, tracker, unbounded, pcfg)
            if METHOD_FULL in cfg.methods:
                bounds = tracker.bounds(t, pcfg.y)
                predictions[METHOD_FULL] = _rollout_prediction(observed, t, tracker, bounds, pcfg)
        row = {"time": t}
        for method in cfg.methods:
            for w in cfg.windows:
                errs = mean_errors(predictions[method], dataset, w)
                errors[(method, w)].extend(errs.values())
                if errs:
                    acc = accuracy_from_errors(errs.values(), cfg.threshold)
                    per_time[(method, w)].append(acc)
                    row[(method, w)] = acc
        series.append(row)

    rows = []
    for method in cfg.methods:
        for w in cfg.windows:
            accs = per_time[(method, w)]
            rows.append(BenchmarkRow(method, w, float(np.mean(accs)) if accs else float("nan"), len(errors[(method, w)])))
    return BenchmarkResult(rows, series)
