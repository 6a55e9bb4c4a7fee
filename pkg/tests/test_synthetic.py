import numpy as np
import pytest

from crowdnav.datasets import frames, resample
from crowdnav.synthetic import (
    CROSSING_KINDS,
    circle_scenario,
    crossing_scenario,
    free_walker,
    passing_pair,
    random_crowd,
    random_model,
    tracks_to_file,
)


def test_free_walker_speed():
    tr = free_walker(1.3, 5.0, heading=np.pi / 2)
    step = np.diff(tr.positions, axis=0)
    np.testing.assert_allclose(np.hypot(*step.T) / tr.dt, 1.3, atol=1e-12)
    assert len(tr.positions) == 51


def test_circle_layout():
    frame, models, goals = circle_scenario(6, circle_radius=4.0)
    for pid, s in frame.states.items():
        assert np.hypot(*s.p) == pytest.approx(4.0)
        np.testing.assert_allclose(goals[pid], -s.p)


def test_random_model_positive():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = random_model(rng)
        assert (m.as_array() > 0).all()
        assert m.max_neighbors == round(m.max_neighbors) >= 1


def test_random_crowd_round_trips_through_file():
    sim = random_crowd(6, seed=1, duration=5.0)
    back = resample(tracks_to_file(sim.tracks), 0.1)
    assert [t.pedestrian_id for t in back] == [t.pedestrian_id for t in sim.tracks]
    for a, b in zip(sim.tracks, back):
        np.testing.assert_allclose(a.positions, b.positions, atol=1e-12)


def test_random_crowd_noise_free_matches_frames():
    sim = random_crowd(5, seed=3, duration=4.0, obs_noise=0.0)
    fr = frames(sim.tracks, 0.1)
    for f, g in zip(fr, sim.frames):
        for pid in g.states:
            np.testing.assert_array_equal(f.states[pid].p, g.states[pid].p)


def test_random_crowd_deterministic():
    a = random_crowd(5, seed=9, duration=3.0)
    b = random_crowd(5, seed=9, duration=3.0)
    for x, y in zip(a.tracks, b.tracks):
        assert np.array_equal(x.positions, y.positions)


def test_passing_pair_radius():
    sim = passing_pair(1.2, seed=0, obs_noise=0.0)
    assert sim.models[0].radius == 1.2
    gap = min(np.hypot(*(f.states[0].p - f.states[1].p)) for f in sim.frames)
    assert gap >= 1.6 - 1e-6


@pytest.mark.parametrize("kind", CROSSING_KINDS)
def test_crossing_scenario(kind):
    sim, start, goal = crossing_scenario(kind, seed=0)
    assert len(sim.tracks) == 20
    np.testing.assert_array_equal(start, [-15, 0])
    np.testing.assert_array_equal(goal, [15, 0])
    # at least a few pedestrians pass within a personal distance of the route
    crossing = sum(np.abs(t.positions[:, 1]).min() < 1.5 for t in sim.tracks)
    assert crossing >= 5


def test_crossing_unknown_kind():
    with pytest.raises(ValueError):
        crossing_scenario("spiral")
