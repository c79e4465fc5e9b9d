"""Reading and writing recordings in the public highD three-CSV layout.

Each recording ``XX`` is stored as ``XX_recordingMeta.csv``,
``XX_tracksMeta.csv`` and ``XX_tracks.csv``. Only the columns listed in
``*_COLUMNS`` below are consumed; anything else is ignored.

Tracks are held columnar (one numpy array per field) because the feature
stage slices whole windows at once. ``Track.states`` materialises the
per-frame :class:`TrackState` view on demand.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import MissingColumn, NonContiguousFrames, UnknownLaneId


class NeighborRole(str, enum.Enum):
    P = "p"
    F = "f"
    LP = "lp"
    LA = "la"
    LF = "lf"
    RP = "rp"
    RA = "ra"
    RF = "rf"


ROLES = tuple(NeighborRole)

NEIGHBOR_COLUMNS = {
    NeighborRole.P: "precedingId",
    NeighborRole.F: "followingId",
    NeighborRole.LP: "leftPrecedingId",
    NeighborRole.LA: "leftAlongsideId",
    NeighborRole.LF: "leftFollowingId",
    NeighborRole.RP: "rightPrecedingId",
    NeighborRole.RA: "rightAlongsideId",
    NeighborRole.RF: "rightFollowingId",
}

RECORDING_META_COLUMNS = ("id", "frameRate", "upperLaneMarkings", "lowerLaneMarkings")
TRACKS_META_COLUMNS = ("id", "drivingDirection")
TRACKS_COLUMNS = ("frame", "id", "x", "y", "xVelocity", "yVelocity", "laneId") + tuple(
    NEIGHBOR_COLUMNS.values()
)


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: int
    frame_rate_hz: float
    upper_lane_ids: tuple[int, ...]
    lower_lane_ids: tuple[int, ...]
    upper_markings: tuple[float, ...] = ()
    lower_markings: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame rate must be positive, got {self.frame_rate_hz}")
        if not self.upper_lane_ids or not self.lower_lane_ids:
            raise ValueError("both carriageways need at least one lane")
        if set(self.upper_lane_ids) & set(self.lower_lane_ids):
            raise ValueError("upper and lower lane ids overlap")

    @property
    def lane_ids(self) -> frozenset[int]:
        return frozenset(self.upper_lane_ids) | frozenset(self.lower_lane_ids)


def lane_ids_from_markings(n_upper: int, n_lower: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """highD numbering: with k upper markings the upper lanes are 2..k, the
    lower lanes continue after a gap of one id."""
    upper = tuple(range(2, n_upper + 1))
    lower = tuple(range(n_upper + 2, n_upper + n_lower + 1))
    return upper, lower


def frames_per_second(meta: RecordingMeta) -> float:
    return float(meta.frame_rate_hz)


@dataclass(frozen=True)
class TrackState:
    frame: int
    x_hd: float
    y_hd: float
    vx_hd: float
    vy_hd: float
    lane_id: int
    neighbor_ids: dict  # NeighborRole -> int | None


@dataclass(frozen=True, eq=False)
class Track:
    """One vehicle; arrays are indexed by ``frame - first_frame``.

    ``neighbors`` has one column per entry of :data:`ROLES`; 0 means absent.
    """

    track_id: int
    direction: int
    frame: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    lane_id: np.ndarray
    neighbors: np.ndarray

    def __post_init__(self):
        if len(self.frame) == 0:
            raise ValueError(f"track {self.track_id} has no states")
        if self.direction not in (1, 2):
            raise ValueError(f"track {self.track_id}: direction {self.direction}")
        if np.any(np.diff(self.frame) != 1) or self.frame[0] < 0:
            raise NonContiguousFrames(self.track_id)

    def __len__(self):
        return len(self.frame)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and self.direction == other.direction
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("frame", "x", "y", "vx", "vy", "lane_id", "neighbors")
            )
        )

    @property
    def first_frame(self) -> int:
        return int(self.frame[0])

    @property
    def last_frame(self) -> int:
        return int(self.frame[-1])

    def index_of(self, frame: int) -> int:
        i = int(frame) - self.first_frame
        if not 0 <= i < len(self):
            raise IndexError(f"track {self.track_id} has no frame {frame}")
        return i

    def has_frame(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame

    def state_at(self, frame: int) -> TrackState:
        return self._state(self.index_of(frame))

    def _state(self, i: int) -> TrackState:
        ids = {
            role: (int(nid) if nid != 0 else None)
            for role, nid in zip(ROLES, self.neighbors[i])
        }
        return TrackState(
            frame=int(self.frame[i]),
            x_hd=float(self.x[i]),
            y_hd=float(self.y[i]),
            vx_hd=float(self.vx[i]),
            vy_hd=float(self.vy[i]),
            lane_id=int(self.lane_id[i]),
            neighbor_ids=ids,
        )

    @cached_property
    def states(self) -> tuple[TrackState, ...]:
        return tuple(self._state(i) for i in range(len(self)))


@dataclass(frozen=True, eq=True)
class Recording:
    meta: RecordingMeta
    tracks: dict = field(default_factory=dict)  # track_id -> Track

    @property
    def recording_id(self) -> int:
        return self.meta.recording_id


def track_from_states(track_id: int, direction: int, states) -> Track:
    states = list(states)
    return Track(
        track_id=track_id,
        direction=direction,
        frame=np.array([s.frame for s in states], dtype=np.int64),
        x=np.array([s.x_hd for s in states], dtype=np.float64),
        y=np.array([s.y_hd for s in states], dtype=np.float64),
        vx=np.array([s.vx_hd for s in states], dtype=np.float64),
        vy=np.array([s.vy_hd for s in states], dtype=np.float64),
        lane_id=np.array([s.lane_id for s in states], dtype=np.int64),
        neighbors=np.array(
            [[s.neighbor_ids.get(r) or 0 for r in ROLES] for s in states], dtype=np.int64
        ).reshape(len(states), len(ROLES)),
    )


def _require(df: pd.DataFrame, columns, path):
    for name in columns:
        if name not in df.columns:
            raise MissingColumn(name, path)


def _parse_markings(value) -> tuple[float, ...]:
    if isinstance(value, float) and np.isnan(value):
        return ()
    return tuple(float(v) for v in str(value).split(";") if v.strip())


def parse_recording(meta_file, tracks_meta_file, tracks_file) -> Recording:
    meta_df = pd.read_csv(meta_file, float_precision="round_trip")
    _require(meta_df, RECORDING_META_COLUMNS, meta_file)
    row = meta_df.iloc[0]
    upper_m = _parse_markings(row["upperLaneMarkings"])
    lower_m = _parse_markings(row["lowerLaneMarkings"])
    upper_ids, lower_ids = lane_ids_from_markings(len(upper_m), len(lower_m))
    meta = RecordingMeta(
        recording_id=int(row["id"]),
        frame_rate_hz=float(row["frameRate"]),
        upper_lane_ids=upper_ids,
        lower_lane_ids=lower_ids,
        upper_markings=upper_m,
        lower_markings=lower_m,
    )

    tm = pd.read_csv(tracks_meta_file)
    _require(tm, TRACKS_META_COLUMNS, tracks_meta_file)
    directions = dict(zip(tm["id"].astype(int), tm["drivingDirection"].astype(int)))

    df = pd.read_csv(tracks_file, float_precision="round_trip")
    _require(df, TRACKS_COLUMNS, tracks_file)
    df = df.sort_values(["id", "frame"], kind="stable")
    known_lanes = np.array(sorted(meta.lane_ids))

    tracks = {}
    ids = df["id"].to_numpy(np.int64)
    bounds = np.flatnonzero(np.diff(ids)) + 1
    cols = {
        name: df[name].to_numpy()
        for name in ("frame", "x", "y", "xVelocity", "yVelocity", "laneId")
    }
    nb = df[list(NEIGHBOR_COLUMNS.values())].to_numpy(np.int64)
    for sl in np.split(np.arange(len(df)), bounds):
        if len(sl) == 0:
            continue
        tid = int(ids[sl[0]])
        frames = cols["frame"][sl].astype(np.int64)
        if np.any(np.diff(frames) != 1):
            raise NonContiguousFrames(tid)
        lanes = cols["laneId"][sl].astype(np.int64)
        bad = ~np.isin(lanes, known_lanes)
        if bad.any():
            k = int(np.argmax(bad))
            raise UnknownLaneId(tid, int(frames[k]), int(lanes[k]))
        tracks[tid] = Track(
            track_id=tid,
            direction=int(directions[tid]),
            frame=frames,
            x=cols["x"][sl].astype(np.float64),
            y=cols["y"][sl].astype(np.float64),
            vx=cols["xVelocity"][sl].astype(np.float64),
            vy=cols["yVelocity"][sl].astype(np.float64),
            lane_id=lanes,
            neighbors=nb[sl],
        )
    return Recording(meta=meta, tracks=tracks)


def recording_paths(data_dir, prefix: str):
    data_dir = Path(data_dir)
    return (
        data_dir / f"{prefix}_recordingMeta.csv",
        data_dir / f"{prefix}_tracksMeta.csv",
        data_dir / f"{prefix}_tracks.csv",
    )


def find_recordings(data_dir) -> list[str]:
    """Recording prefixes (``"01"``, ``"02"``...) present in a directory, sorted."""
    return sorted(
        p.name[: -len("_recordingMeta.csv")]
        for p in Path(data_dir).glob("*_recordingMeta.csv")
    )


def load_recordings(data_dir) -> list[Recording]:
    return [parse_recording(*recording_paths(data_dir, p)) for p in find_recordings(data_dir)]


def _fmt_markings(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def write_recording(rec: Recording, out_dir, prefix: str | None = None) -> tuple[Path, Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or f"{rec.meta.recording_id:02d}"
    meta_path, tm_path, tracks_path = recording_paths(out_dir, prefix)
    m = rec.meta
    if len(m.upper_markings) == len(m.upper_lane_ids) + 1:
        upper, lower = m.upper_markings, m.lower_markings
    else:
        # no geometry known: unit-spaced placeholder markings with the right count
        upper = tuple(float(i) for i in range(len(m.upper_lane_ids) + 1))
        lower = tuple(float(i) for i in range(len(m.lower_lane_ids) + 1))
    pd.DataFrame(
        {
            "id": [m.recording_id],
            "frameRate": [m.frame_rate_hz],
            "upperLaneMarkings": [_fmt_markings(upper)],
            "lowerLaneMarkings": [_fmt_markings(lower)],
            "numVehicles": [len(rec.tracks)],
        }
    ).to_csv(meta_path, index=False)

    order = sorted(rec.tracks)
    pd.DataFrame(
        {
            "id": order,
            "initialFrame": [rec.tracks[t].first_frame for t in order],
            "finalFrame": [rec.tracks[t].last_frame for t in order],
            "numFrames": [len(rec.tracks[t]) for t in order],
            "drivingDirection": [rec.tracks[t].direction for t in order],
            "numLaneChanges": [
                int(np.count_nonzero(np.diff(rec.tracks[t].lane_id))) for t in order
            ],
        }
    ).to_csv(tm_path, index=False)

    parts = []
    for t in order:
        tr = rec.tracks[t]
        part = {
            "frame": tr.frame,
            "id": np.full(len(tr), t, dtype=np.int64),
            "x": tr.x,
            "y": tr.y,
            "xVelocity": tr.vx,
            "yVelocity": tr.vy,
        }
        for j, role in enumerate(ROLES):
            part[NEIGHBOR_COLUMNS[role]] = tr.neighbors[:, j]
        part["laneId"] = tr.lane_id
        parts.append(pd.DataFrame(part))
    tracks_df = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(
        columns=list(TRACKS_COLUMNS)
    )
    tracks_df = tracks_df.sort_values(["frame", "id"], kind="stable")
    tracks_df.to_csv(tracks_path, index=False)
    return meta_path, tm_path, tracks_path
