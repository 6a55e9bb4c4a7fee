import csv
import json

import numpy as np
import pytest

from crowdnav.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_RUNTIME, main
from crowdnav.personality import RVO_MAT


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return code, err


def _error(err):
    return json.loads(err.strip().splitlines()[-1])


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_params(path, models):
    names = ("neighbor_dist", "max_neighbors", "planning_horizon", "radius", "pref_speed")
    doc = {str(pid): {"parameters": dict(zip(names, m))} for pid, m in models.items()}
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def free_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("free")
    assert main(["simulate", "--kind", "free", "--speed", "1.3", "--duration", "10", "--out", str(out)]) == 0
    return out / "trajectories.tsv"


def test_estimate_free_walker(free_file, tmp_path):
    assert main(["estimate", "--input", str(free_file), "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "params.json").read_text())
    assert list(doc) == ["0"]
    assert doc["0"]["parameters"]["pref_speed"] == pytest.approx(1.3, rel=0.1)
    assert len(doc["0"]["sigma_q_diag"]) == 11


def test_estimate_missing_file(tmp_path, capsys):
    code, err = run(["estimate", "--input", tmp_path / "nope.tsv", "--out", tmp_path / "o"], capsys)
    assert code == EXIT_IO
    assert _error(err)["kind"] == "io"


def test_estimate_bad_flags(free_file, tmp_path, capsys):
    code, err = run(["estimate", "--input", free_file, "--ensemble", "1", "--out", tmp_path], capsys)
    assert code == EXIT_CONFIG
    assert _error(err)["kind"] == "config"


def test_malformed_trajectory_file(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0\t1\tx\t0\n")
    code, err = run(["estimate", "--input", bad, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_IO
    assert _error(err)["kind"] == "io"


def test_unknown_flag_is_config_error(capsys):
    code, err = run(["estimate", "--bogus"], capsys)
    assert code == EXIT_CONFIG


def test_traits_at_centres(tmp_path):
    params = _write_params(tmp_path / "p.json", {3: (15, 10, 30, 0.8, 1.4), 1: (28.5, 10, 30, 0.8, 1.4)})
    assert main(["traits", "--input", str(params), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = _read_csv(tmp_path / "o" / "traits.csv")
    assert [r["ped_id"] for r in rows] == ["1", "3"]
    centre = rows[1]
    for name in ("aggressive", "assertive", "shy", "active", "tense", "impulsive"):
        assert float(centre[name]) == 0.0
    assert float(centre["personal_cm"]) == pytest.approx(134.24)
    e1 = rows[0]
    got = [float(e1[n]) for n in ("aggressive", "assertive", "shy", "active", "tense", "impulsive")]
    np.testing.assert_allclose(got, RVO_MAT[:, 0], atol=1e-12)
    bounds = _read_csv(tmp_path / "o" / "bounds.csv")
    assert len(bounds) == 2


def test_traits_malformed(tmp_path, capsys):
    bad = tmp_path / "p.json"
    bad.write_text(json.dumps({"1": {"parameters": {"radius": 1}}}))
    code, err = run(["traits", "--input", bad, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_CONFIG


def _linear_file(path):
    lines = ["#frame_id\tped_id\tx\ty"]
    for pid in range(3):
        for k in range(101):
            lines.append(f"{k}\t{pid}\t{0.1 * k * (1.0 + 0.1 * pid)!r}\t{float(pid)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def test_bench_linear_tracks(tmp_path):
    data = _linear_file(tmp_path / "lin.tsv")
    code = main(["bench", "--input", str(data), "--methods", "constant_velocity", "--seed", "0", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    rows = _read_csv(tmp_path / "o" / "bench.csv")
    assert [(r["method"], float(r["window_s"]), float(r["accuracy"])) for r in rows] == [
        ("constant_velocity", 1.0, 1.0),
        ("constant_velocity", 5.0, 1.0),
    ]
    header = (tmp_path / "o" / "bench_plot.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["time", "constant_velocity@1s", "constant_velocity@5s"]


def test_bench_requires_seed(tmp_path, capsys):
    data = _linear_file(tmp_path / "lin.tsv")
    code, _ = run(["bench", "--input", data, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_CONFIG


def test_bench_bad_method(tmp_path, capsys):
    data = _linear_file(tmp_path / "lin.tsv")
    code, err = run(["bench", "--input", data, "--methods", "magic", "--seed", "0", "--out", tmp_path / "o"], capsys)
    assert code == EXIT_CONFIG
    assert _error(err)["kind"] == "config"


def test_bench_window_over_data(tmp_path, capsys):
    data = _linear_file(tmp_path / "lin.tsv")
    code, err = run(["bench", "--input", data, "--windows", "20", "--seed", "0", "--out", tmp_path / "o"], capsys)
    assert code == EXIT_RUNTIME
    assert _error(err)["kind"] == "runtime"


def test_bench_rvo_crowd(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--kind", "crowd", "--n", "8", "--duration", "12", "--seed", "4", "--out", str(sim)]) == 0
    code = main([
        "bench", "--input", str(sim / "trajectories.tsv"), "--methods", "constant_velocity,trait_rvo",
        "--ensemble", "30", "--em-iterations", "2", "--seed", "4", "--out", str(tmp_path / "o"),
    ])
    assert code == EXIT_OK
    acc = {(r["method"], float(r["window_s"])): float(r["accuracy"]) for r in _read_csv(tmp_path / "o" / "bench.csv")}
    assert len(acc) == 4
    assert acc[("trait_rvo", 5.0)] >= acc[("constant_velocity", 5.0)]


@pytest.fixture(scope="module")
def crossing_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cross")
    assert main(["simulate", "--kind", "crossing-perpendicular", "--seed", "0", "--out", str(out)]) == 0
    return out


def test_navigate_both(crossing_dir, tmp_path):
    assert main(["navigate", "--input", str(crossing_dir / "scenario.json"), "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "nav_summary.json").read_text())
    assert summary["social_on"]["personal_intrusions"] == 0
    assert summary["overhead_percent"] < 30.0
    assert summary["intrusions_avoided"] == summary["social_off"]["personal_intrusions"]
    for label in ("on", "off"):
        assert (tmp_path / f"nav_social_{label}.json").exists()
        lines = (tmp_path / f"path_social_{label}.tsv").read_text().splitlines()
        assert lines[0] == "t\tx\ty\theading\tv\tomega"


def test_navigate_single_mode(crossing_dir, tmp_path):
    code = main(["navigate", "--input", str(crossing_dir / "scenario.json"), "--social", "on",
                 "--prediction", "constant_velocity", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == ["nav_social_on.json", "path_social_on.tsv"]


def test_navigate_start_equals_goal(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"robot": {"start": [0, 0], "goal": [0, 0]}, "seed": 1}))
    code, err = run(["navigate", "--input", sc, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_CONFIG
    assert _error(err)["kind"] == "config"


def test_navigate_missing_seed(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"robot": {"start": [0, 0], "goal": [5, 0]}}))
    code, _ = run(["navigate", "--input", sc, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_CONFIG


def test_navigate_unreachable_goal(tmp_path, capsys):
    sc = tmp_path / "s.json"
    walls = [[4, 4, 6, 4], [6, 4, 6, 6], [6, 6, 4, 6], [4, 6, 4, 4]]
    sc.write_text(json.dumps({"robot": {"start": [0, 0], "goal": [5, 5]}, "obstacles": walls, "seed": 0}))
    code, err = run(["navigate", "--input", sc, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_RUNTIME
    assert _error(err)["kind"] == "runtime"


def test_simulate_outputs(tmp_path):
    assert main(["simulate", "--kind", "crowd", "--n", "5", "--duration", "5", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["models.json", "trajectories.tsv"]
    assert len(json.loads((tmp_path / "models.json").read_text())) == 5


def test_simulate_bad_args(tmp_path, capsys):
    code, _ = run(["simulate", "--n", "0", "--out", tmp_path], capsys)
    assert code == EXIT_CONFIG


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_simulate_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["simulate", "--kind", "crossing-diagonal", "--seed", "7", "--out", str(tmp_path / name)])
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")
