"""Command-line entry point.

Subcommands: estimate, traits, bench, navigate, simulate.  Every output is
written inside ``--out``; a failure prints one JSON object to stderr and
exits 2 (config), 3 (io) or 4 (runtime).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DEFAULT_DT, DatasetError, Track, load_trajectories, resample, tracks_to_raw, write_trajectories
from .datasets import frames as crowd_frames
from .estimation import (
    DEFAULT_EM_ITERATIONS,
    DEFAULT_ENSEMBLE_SIZE,
    TrackTooShort,
    default_noise_config,
    estimate_motion_model,
)
from .navigation import (
    NoPath,
    PipelineConfig,
    PREDICTION_MODES,
    RobotLimits,
    Scenario,
    ScenarioError,
    run_navigation,
)
from .personality import DEFAULT_Y, TRAIT_NAMES, compute_bounds, traits_from_params
from .prediction import ALL_METHODS, BenchmarkConfig, DatasetTooShort, NoEvaluablePedestrians, PredictionConfig, benchmark
from .proxemics import normalized_extraversion, profile_from_traits
from .rvo import MotionModel, Obstacle
from .synthetic import CROSSING_KINDS, crossing_scenario, free_walker, random_crowd

log = logging.getLogger("crowdnav")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 4

SIMULATE_KINDS = ("crowd", "free") + tuple(f"crossing-{k}" for k in CROSSING_KINDS)


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("config", message)


# ---------------------------------------------------------------- helpers


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create output directory {out}: {exc}") from None
    return out


def _load_tracks(path: str, fps: float, dt: float) -> list[Track]:
    if not fps > 0:
        raise CliError("config", f"--fps must be positive, got {fps}")
    if not dt > 0:
        raise CliError("config", f"--dt must be positive, got {dt}")
    try:
        raw = load_trajectories(path, fps)
    except FileNotFoundError:
        raise CliError("io", f"no such file: {path}") from None
    except (OSError, DatasetError) as exc:
        raise CliError("io", f"{path}: {exc}") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tracks = resample(raw, dt)
    for w in caught:
        log.warning("%s", w.message)
    if not tracks:
        raise CliError("io", f"{path}: no pedestrian has two observations")
    return tracks


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise CliError("config", f"{flag} expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise CliError("config", f"{flag} is empty")
    return values


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError("io", f"no such file: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("io", f"{path}: {exc}") from None


# ---------------------------------------------------------------- estimate


def cmd_estimate(args) -> None:
    if args.ensemble < 2:
        raise CliError("config", "--ensemble must be at least 2")
    if args.em_iterations < 1:
        raise CliError("config", "--em-iterations must be at least 1")
    if not args.obs_std > 0:
        raise CliError("config", "--obs-std must be positive")
    tracks = _load_tracks(args.input, args.fps, args.dt)
    out = _out_dir(args.out)
    env = crowd_frames(tracks, args.dt)
    noise = default_noise_config(args.obs_std)
    result = {}
    for tr in tracks:
        seed = int(np.random.SeedSequence([args.seed, tr.pedestrian_id]).generate_state(1)[0])
        try:
            est = estimate_motion_model(
                tr, env, noise, rng_seed=seed, iterations=args.em_iterations, ensemble_size=args.ensemble
            )
        except TrackTooShort as exc:
            log.warning("skipping pedestrian %d: %s", tr.pedestrian_id, exc)
            continue
        result[str(tr.pedestrian_id)] = est.to_json()
    if not result:
        raise CliError("runtime", "no pedestrian track is long enough to estimate")
    _write_json(out / "params.json", result)


# ---------------------------------------------------------------- traits


def _models_from_json(doc) -> dict[int, MotionModel]:
    names = MotionModel.names()
    models = {}
    try:
        for pid, entry in doc.items():
            params = entry.get("parameters", entry)
            models[int(pid)] = MotionModel.from_array([float(params[n]) for n in names])
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise CliError("config", f"malformed parameter document: {exc}") from None
    return models


TRAIT_COLUMNS = (
    ["ped_id"]
    + list(TRAIT_NAMES)
    + ["psychoticism", "extraversion", "neuroticism", "extraversion_norm", "personal_cm", "social_cm"]
)


def cmd_traits(args) -> None:
    if args.y < 0:
        raise CliError("config", "--y must be non-negative")
    models = _models_from_json(_read_json(args.input))
    out = _out_dir(args.out)
    with (out / "traits.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIT_COLUMNS)
        for pid in sorted(models):
            b = traits_from_params(models[pid])
            pen, prof = profile_from_traits(b)
            row = [pid] + [_fmt(x) for x in b.b]
            row += [_fmt(x) for x in pen.as_array()]
            row += [_fmt(normalized_extraversion(pen)), _fmt(prof.d_p), _fmt(prof.d_s)]
            writer.writerow(row)
    with (out / "bounds.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        names = MotionModel.names()
        writer.writerow(["ped_id"] + [f"{n}_lb" for n in names] + [f"{n}_ub" for n in names])
        for pid in sorted(models):
            bounds = compute_bounds(traits_from_params(models[pid]), args.y)
            writer.writerow([pid] + [_fmt(x) for x in bounds.m_lb] + [_fmt(x) for x in bounds.m_ub])


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> None:
    windows = _parse_floats(args.windows, "--windows")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    unknown = sorted(set(methods) - set(ALL_METHODS))
    if unknown or not methods:
        raise CliError("config", f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
    if args.y < 0:
        raise CliError("config", "--y must be non-negative")
    horizon = max(windows)
    try:
        cfg = BenchmarkConfig(
            prediction=PredictionConfig(horizon=horizon, dt=args.dt, y=args.y),
            windows=windows,
            methods=methods,
            noise=default_noise_config(args.obs_std),
            ensemble_size=args.ensemble,
            em_iterations=args.em_iterations,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    tracks = _load_tracks(args.input, args.fps, args.dt)
    out = _out_dir(args.out)
    try:
        result = benchmark(tracks, cfg)
    except (DatasetTooShort, NoEvaluablePedestrians) as exc:
        raise CliError("runtime", str(exc)) from None
    with (out / "bench.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "window_s", "accuracy", "n_pedestrians"])
        for row in result.rows:
            writer.writerow([row.method, _fmt(row.window_s), _fmt(row.accuracy), row.n_pedestrians])
    keys = [(m, w) for m in methods for w in windows]
    with (out / "bench_plot.tsv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("time\t" + "\t".join(f"{m}@{w:g}s" for m, w in keys) + "\n")
        for entry in result.series:
            cells = [_fmt(entry["time"])] + [_fmt(entry[k]) if k in entry else "nan" for k in keys]
            fh.write("\t".join(cells) + "\n")


# ---------------------------------------------------------------- navigate


def load_scenario(path: str, social_mode: bool, dt: float = DEFAULT_DT) -> tuple[Scenario, str]:
    """Build a Scenario from its JSON file; returns it with the prediction mode."""
    doc = _read_json(path)
    base = Path(path).parent
    try:
        dataset = doc.get("dataset")
        fps = float(doc.get("fps", 1.0 / dt))
        robot = doc["robot"]
        start = np.asarray(robot["start"], dtype=float)
        goal = np.asarray(robot["goal"], dtype=float)
        limits = RobotLimits(
            float(robot.get("v_max", RobotLimits.v_max)),
            float(robot.get("omega_max", RobotLimits.omega_max)),
            float(robot.get("radius", RobotLimits.radius)),
        )
        obstacles = [Obstacle(seg[:2], seg[2:]) for seg in doc.get("obstacles", [])]
        seed = int(doc["seed"])
        timeout = float(doc.get("timeout_s", 120.0))
        prediction = str(doc.get("prediction", "estimated"))
        models_path = doc.get("models")
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("config", f"{path}: malformed scenario ({exc})") from None
    if prediction not in PREDICTION_MODES:
        raise CliError("config", f"{path}: prediction must be one of {list(PREDICTION_MODES)}")
    tracks = _load_tracks(str(base / dataset), fps, dt) if dataset else []
    models = _models_from_json(_read_json(str(base / models_path))) if models_path else None
    try:
        scenario = Scenario(tracks, start, goal, obstacles, limits, social_mode, seed, timeout, models)
    except ScenarioError as exc:
        raise CliError("config", f"{path}: {exc}") from None
    return scenario, prediction


def _write_path(path: Path, rows: np.ndarray) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("t\tx\ty\theading\tv\tomega\n")
        for row in rows:
            fh.write("\t".join(_fmt(x) for x in row) + "\n")


def cmd_navigate(args) -> None:
    modes = {"on": [True], "off": [False], "both": [True, False]}[args.social]
    out = None
    results = {}
    for social in modes:
        scenario, prediction = load_scenario(args.input, social, args.dt)
        if args.prediction:
            prediction = args.prediction
        if args.seed is not None:
            scenario.seed = args.seed
        if out is None:
            out = _out_dir(args.out)
        try:
            res = run_navigation(scenario, PipelineConfig(prediction=prediction, dt=args.dt))
        except NoPath as exc:
            raise CliError("runtime", str(exc)) from None
        except ScenarioError as exc:
            raise CliError("config", str(exc)) from None
        label = "on" if social else "off"
        log.info("social %s: %.4f ms per planning step", label, res.proxemics_time_ms)
        results[label] = res
        _write_json(out / f"nav_social_{label}.json", res.to_json())
        _write_path(out / f"path_social_{label}.tsv", res.path)
    if len(results) == 2:
        on, off = results["on"], results["off"]
        overhead = (on.travel_time - off.travel_time) / off.travel_time * 100.0 if off.travel_time > 0 else math.nan
        summary = {
            "social_on": on.to_json(),
            "social_off": off.to_json(),
            "overhead_percent": None if math.isnan(overhead) else round(overhead, 6),
            "intrusions_avoided": off.personal_intrusions - on.personal_intrusions,
        }
        _write_json(out / "nav_summary.json", summary)


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> None:
    if args.n < 1:
        raise CliError("config", "--n must be positive")
    if not args.duration > 0:
        raise CliError("config", "--duration must be positive")
    if args.noise < 0:
        raise CliError("config", "--noise must be non-negative")
    out = _out_dir(args.out)
    models = None
    scenario = None
    if args.kind == "crowd":
        sim = random_crowd(args.n, seed=args.seed, duration=args.duration, dt=args.dt, obs_noise=args.noise)
        tracks, models = sim.tracks, sim.models
    elif args.kind == "free":
        tracks = [free_walker(args.speed, args.duration, args.dt)]
    else:
        kind = args.kind.split("-", 1)[1]
        sim, start, goal = crossing_scenario(kind, n=args.n, seed=args.seed, duration=args.duration, dt=args.dt)
        tracks, models = sim.tracks, sim.models
        scenario = {
            "dataset": "trajectories.tsv",
            "fps": 1.0 / args.dt,
            "models": "models.json",
            "robot": {"start": start.tolist(), "goal": goal.tolist()},
            "obstacles": [],
            "seed": args.seed,
            "timeout_s": 120.0,
            "prediction": "oracle",
        }
    write_trajectories(out / "trajectories.tsv", tracks_to_raw(tracks))
    if models is not None:
        doc = {
            str(pid): {"parameters": {n: float(v) for n, v in zip(MotionModel.names(), m.as_array())}}
            for pid, m in sorted(models.items())
        }
        _write_json(out / "models.json", doc)
    if scenario is not None:
        _write_json(out / "scenario.json", scenario)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdnav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_input=True, fps=True, seed=0):
        if needs_input:
            p.add_argument("--input", required=True)
        if fps:
            p.add_argument("--fps", type=float, default=1.0 / DEFAULT_DT, help="frame rate of the input file")
        p.add_argument("--dt", type=float, default=DEFAULT_DT)
        if seed == "required":
            p.add_argument("--seed", type=int, required=True)
        else:
            p.add_argument("--seed", type=int, default=seed)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("estimate", help="fit motion-model parameters per pedestrian")
    common(p)
    p.add_argument("--ensemble", type=int, default=DEFAULT_ENSEMBLE_SIZE)
    p.add_argument("--em-iterations", type=int, default=DEFAULT_EM_ITERATIONS)
    p.add_argument("--obs-std", type=float, default=0.05, help="observation noise (m)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("traits", help="traits, PEN factors and proxemic distances from parameters")
    common(p, fps=False)
    p.add_argument("--y", type=float, default=DEFAULT_Y, help="bound width in percent")
    p.set_defaults(func=cmd_traits)

    p = sub.add_parser("bench", help="sliding-window prediction accuracy benchmark")
    common(p, seed="required")
    p.add_argument("--windows", default="1,5")
    p.add_argument("--methods", default=",".join(ALL_METHODS))
    p.add_argument("--y", type=float, default=DEFAULT_Y)
    p.add_argument("--ensemble", type=int, default=DEFAULT_ENSEMBLE_SIZE)
    p.add_argument("--em-iterations", type=int, default=DEFAULT_EM_ITERATIONS)
    p.add_argument("--obs-std", type=float, default=0.05)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("navigate", help="run the robot through a scenario file")
    common(p, fps=False, seed=None)
    p.add_argument("--social", choices=("on", "off", "both"), default="both")
    p.add_argument("--prediction", choices=PREDICTION_MODES, default=None, help="override the scenario's mode")
    p.set_defaults(func=cmd_navigate)

    p = sub.add_parser("simulate", help="write a synthetic trajectory file")
    common(p, needs_input=False, fps=False)
    p.add_argument("--kind", choices=SIMULATE_KINDS, default="crowd")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=0.05, help="observation noise (m)")
    p.add_argument("--speed", type=float, default=1.3, help="walker speed for --kind free")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        args.func(args)
    except CliError as exc:
        code = {"config": EXIT_CONFIG, "io": EXIT_IO}.get(exc.kind, EXIT_RUNTIME)
        sys.stderr.write(json.dumps({"kind": exc.kind, "message": str(exc)}, sort_keys=True) + "\n")
        return code
    except (ValueError, ScenarioError) as exc:
        sys.stderr.write(json.dumps({"kind": "config", "message": str(exc)}, sort_keys=True) + "\n")
        return EXIT_CONFIG
    except OSError as exc:
        sys.stderr.write(json.dumps({"kind": "io", "message": str(exc)}, sort_keys=True) + "\n")
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - last-resort report
        sys.stderr.write(json.dumps({"kind": "runtime", "message": f"{type(exc).__name__}: {exc}"}, sort_keys=True) + "\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
