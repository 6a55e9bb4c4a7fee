"""Loading, validating and resampling frame-indexed pedestrian trajectories.

The on-disk format is a tab-separated file with columns
``frame_id  ped_id  x  y`` (meters, world frame) and an optional first line
starting with ``#``.  The frame rate is never stored in the file.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rvo import CrowdFrame, PedestrianState

log = logging.getLogger(__name__)

DEFAULT_DT = 0.1
MAX_PLAUSIBLE_SPEED = 5.0
HEADER = "#frame_id\tped_id\tx\ty"


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    pass


class DuplicateObservation(DatasetError):
    pass


class EmptyFile(DatasetError):
    pass


class ImplausibleSpeed(DatasetError):
    pass


class TooFewObservations(UserWarning):
    """Emitted (not raised) when a pedestrian has fewer than two rows."""


@dataclass(frozen=True)
class RawTrajectoryFile:
    frame_ids: np.ndarray
    ped_ids: np.ndarray
    xy: np.ndarray
    fps: float

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    def __len__(self) -> int:
        return len(self.frame_ids)

    @property
    def pedestrians(self) -> list[int]:
        return sorted(set(int(i) for i in self.ped_ids))


@dataclass(frozen=True)
class Track:
    pedestrian_id: int
    t0: float
    dt: float
    positions: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.positions))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self.positions) - 1)

    @property
    def start_index(self) -> int:
        return int(round(self.t0 / self.dt))

    def index_at(self, t: float) -> int | None:
        """Sample index at time ``t`` on this track's grid, or None."""
        k = int(round((t - self.t0) / self.dt))
        if abs(self.t0 + k * self.dt - t) > 1e-6 * self.dt or not 0 <= k < len(self.positions):
            return None
        return k

    def position_at(self, t: float) -> np.ndarray | None:
        k = self.index_at(t)
        return None if k is None else self.positions[k]

    def window(self, t_start: float, t_end: float) -> "Track | None":
        """Sub-track restricted to [t_start, t_end] (inclusive)."""
        lo = max(0, int(math.ceil((t_start - self.t0) / self.dt - 1e-9)))
        hi = min(len(self.positions) - 1, int(math.floor((t_end - self.t0) / self.dt + 1e-9)))
        if hi < lo:
            return None
        return Track(self.pedestrian_id, self.t0 + lo * self.dt, self.dt, self.positions[lo : hi + 1])


def _check_speeds(frame_ids, ped_ids, xy, fps):
    for pid in np.unique(ped_ids):
        sel = ped_ids == pid
        order = np.argsort(frame_ids[sel], kind="stable")
        f = frame_ids[sel][order]
        p = xy[sel][order]
        if len(f) < 2:
            continue
        step = np.linalg.norm(np.diff(p, axis=0), axis=1)
        speed = step * fps / np.diff(f)
        bad = np.flatnonzero(speed > MAX_PLAUSIBLE_SPEED + 1e-9)
        if bad.size:
            k = bad[0]
            raise ImplausibleSpeed(
                f"pedestrian {int(pid)} moves {speed[k]:.2f} m/s between frames {int(f[k])} and {int(f[k + 1])}"
            )


def make_raw(rows: Iterable[Sequence[float]], fps: float) -> RawTrajectoryFile:
    """Build and validate a RawTrajectoryFile from (frame, ped, x, y) rows."""
    rows = list(rows)
    if not rows:
        raise EmptyFile("no observations")
    frame_ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    ped_ids = np.array([int(r[1]) for r in rows], dtype=np.int64)
    xy = np.array([[float(r[2]), float(r[3])] for r in rows], dtype=float)
    if not np.isfinite(xy).all():
        raise ParseError("non-finite coordinate")
    keys = set()
    for f, p in zip(frame_ids.tolist(), ped_ids.tolist()):
        if (f, p) in keys:
            raise DuplicateObservation(f"frame {f} pedestrian {p} observed twice")
        keys.add((f, p))
    _check_speeds(frame_ids, ped_ids, xy, fps)
    return RawTrajectoryFile(frame_ids, ped_ids, xy, float(fps))


def load_trajectories(path, fps: float) -> RawTrajectoryFile:
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if lineno == 1 and line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
            try:
                frame, ped = int(fields[0]), int(fields[1])
                x, y = float(fields[2]), float(fields[3])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            rows.append((frame, ped, x, y))
    return make_raw(rows, fps)


def write_trajectories(path, raw: RawTrajectoryFile) -> None:
    """Write ``raw`` in the TSV format; floats use repr so reads are exact."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        order = np.lexsort((raw.ped_ids, raw.frame_ids))
        for k in order:
            x, y = raw.xy[k]
            fh.write(f"{int(raw.frame_ids[k])}\t{int(raw.ped_ids[k])}\t{float(x)!r}\t{float(y)!r}\n")


def tracks_to_raw(tracks: Sequence[Track]) -> RawTrajectoryFile:
    """Inverse of :func:`resample` for tracks on a shared grid."""
    if not tracks:
        raise EmptyFile("no tracks")
    dt = tracks[0].dt
    rows = []
    for tr in tracks:
        k0 = tr.start_index
        for i, (x, y) in enumerate(tr.positions):
            rows.append((k0 + i, tr.pedestrian_id, x, y))
    return make_raw(rows, 1.0 / dt)


def resample(raw: RawTrajectoryFile, dt: float = DEFAULT_DT) -> list[Track]:
    """Linearly interpolate every pedestrian onto the global grid ``k * dt``.

    Each track spans only the pedestrian's own observed interval.
    Pedestrians with fewer than two observations are dropped with a
    :class:`TooFewObservations` warning.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    tracks = []
    for pid in raw.pedestrians:
        sel = raw.ped_ids == pid
        frames = raw.frame_ids[sel]
        order = np.argsort(frames, kind="stable")
        times = frames[order] / raw.fps
        xy = raw.xy[sel][order]
        if len(times) < 2:
            warnings.warn(TooFewObservations(f"pedestrian {pid}: {len(times)} observation(s), dropped"))
            continue
        k_lo = int(math.ceil(times[0] / dt - 1e-9))
        k_hi = int(math.floor(times[-1] / dt + 1e-9))
        if k_hi <= k_lo:
            warnings.warn(TooFewObservations(f"pedestrian {pid}: observed span covers fewer than two samples, dropped"))
            continue
        grid = np.arange(k_lo, k_hi + 1) * dt
        grid = np.clip(grid, times[0], times[-1])
        pos = np.stack([np.interp(grid, times, xy[:, 0]), np.interp(grid, times, xy[:, 1])], axis=1)
        tracks.append(Track(int(pid), k_lo * dt, dt, pos))
    return tracks


def track_velocities(track: Track) -> np.ndarray:
    """Central differences inside the track, one-sided at the ends."""
    p = track.positions
    v = np.zeros_like(p)
    if len(p) < 2:
        return v
    v[1:-1] = (p[2:] - p[:-2]) / (2.0 * track.dt)
    v[0] = (p[1] - p[0]) / track.dt
    v[-1] = (p[-1] - p[-2]) / track.dt
    return v


def frames(tracks: Sequence[Track], dt: float = DEFAULT_DT) -> list[CrowdFrame]:
    """Group resampled tracks into time-ordered crowd frames.

    Preferred velocity starts out equal to the finite-difference velocity.
    """
    by_index: dict[int, dict[int, PedestrianState]] = {}
    for tr in tracks:
        if abs(tr.dt - dt) > 1e-12:
            raise ValueError(f"track {tr.pedestrian_id} has dt={tr.dt}, expected {dt}")
        vel = track_velocities(tr)
        k0 = tr.start_index
        for i in range(len(tr.positions)):
            by_index.setdefault(k0 + i, {})[tr.pedestrian_id] = PedestrianState(tr.positions[i], vel[i], vel[i])
    return [CrowdFrame(k * dt, dict(sorted(by_index[k].items()))) for k in sorted(by_index)]
