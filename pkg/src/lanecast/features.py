"""Direction-normalised features and the n x 36 input matrix.

After the sign flips both carriageways look the same: the target drives
towards +x and +y points to the driver's left. Neighbour blocks hold the
longitudinal gap (positive when the neighbour is ahead), the lateral gap
(positive when it is to the left) and the neighbour's own normalised
velocities.

Column layout (36 columns)::

    0-3    ego    y, x, v_y, v_x
    4-7    p      dy, dx, v_y, v_x
    8-11   f      dy, dx, v_y, v_x
    12-15  lp     dx, dy, v_y, v_x
    16-19  la     dx, dy, v_y, v_x
    20-23  lf     dx, dy, v_y, v_x
    24-27  rp     dx, dy, v_y, v_x
    28-31  ra     dx, dy, v_y, v_x
    32-35  rf     dx, dy, v_y, v_x

The p/f blocks put the lateral gap first; the six corner blocks put the
longitudinal gap first. That ordering is deliberate and must not be
"fixed", downstream channel splits depend on it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASSES
from .errors import BadDirection, EmptyInput, MissingFrame, MissingTrack
from .highd_io import ROLES, NeighborRole, Recording, Track, TrackState
from .segmentation import Segment

N_FEATURES = 36
SENTINEL_DISTANCE = 100.0

# role -> (dx, dy) used when the neighbour slot is empty
SENTINELS = {
    NeighborRole.P: (SENTINEL_DISTANCE, 0.0),
    NeighborRole.F: (-SENTINEL_DISTANCE, 0.0),
    NeighborRole.LP: (SENTINEL_DISTANCE, 0.0),
    NeighborRole.LA: (0.0, SENTINEL_DISTANCE),
    NeighborRole.LF: (-SENTINEL_DISTANCE, 0.0),
    NeighborRole.RP: (SENTINEL_DISTANCE, 0.0),
    NeighborRole.RA: (0.0, -SENTINEL_DISTANCE),
    NeighborRole.RF: (-SENTINEL_DISTANCE, 0.0),
}

_LATERAL_FIRST = {NeighborRole.P, NeighborRole.F}


def _column_names() -> tuple[str, ...]:
    names = ["y_t", "x_t", "v_y_t", "v_x_t"]
    for role in ROLES:
        r = role.value
        gaps = [f"dy_{r}", f"dx_{r}"] if role in _LATERAL_FIRST else [f"dx_{r}", f"dy_{r}"]
        names += gaps + [f"v_y_{r}", f"v_x_{r}"]
    return tuple(names)


COLUMN_NAMES = _column_names()


def _signs(direction):
    if direction == 1:
        return -1.0, 1.0
    if direction == 2:
        return 1.0, -1.0
    raise BadDirection(direction)


def transform_ego(state: TrackState, direction: int) -> tuple[float, float, float, float]:
    """Normalised (x_t, y_t, v_x_t, v_y_t) of the target vehicle."""
    sx, sy = _signs(direction)
    return (sx * state.x_hd, sy * state.y_hd, sx * state.vx_hd, sy * state.vy_hd)


def neighbor_relatives(
    target: TrackState,
    neighbor: TrackState | None,
    direction: int,
    role: NeighborRole = NeighborRole.P,
) -> tuple[float, float, float, float]:
    """(dx, dy, v_y, v_x) of one neighbour slot; sentinel values when empty."""
    sx, sy = _signs(direction)
    if neighbor is None:
        dx, dy = SENTINELS[role]
        return dx, dy, sy * target.vy_hd, sx * target.vx_hd
    return (
        sx * (neighbor.x_hd - target.x_hd),
        sy * (neighbor.y_hd - target.y_hd),
        sy * neighbor.vy_hd,
        sx * neighbor.vx_hd,
    )


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (n, 36)
    label: str
    prediction_time_s: float | None = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != N_FEATURES:
            raise ValueError(f"expected (n, {N_FEATURES}) values, got {self.values.shape}")
        if self.label not in CLASSES:
            raise ValueError(f"unknown label {self.label!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _window(track: Track, start: int, end: int) -> slice:
    if not (track.has_frame(start) and track.has_frame(end - 1)):
        raise MissingFrame(f"track {track.track_id} lacks frames [{start}, {end})")
    i = start - track.first_frame
    return slice(i, i + (end - start))


def assemble_feature_matrix(segment: Segment, recording: Recording) -> FeatureMatrix:
    try:
        track = recording.tracks[segment.track_id]
    except KeyError:
        raise MissingTrack(f"track {segment.track_id} not in recording {recording.recording_id}")
    sl = _window(track, segment.start_frame, segment.end_frame)
    sx, sy = _signs(track.direction)
    x, y, vx, vy = track.x[sl], track.y[sl], track.vx[sl], track.vy[sl]
    n = len(x)
    out = np.empty((n, N_FEATURES), dtype=np.float64)
    out[:, 0] = sy * y
    out[:, 1] = sx * x
    out[:, 2] = sy * vy
    out[:, 3] = sx * vx

    nb_ids = track.neighbors[sl]
    frames = track.frame[sl]
    for k, role in enumerate(ROLES):
        dx = np.empty(n)
        dy = np.empty(n)
        nvx = np.empty(n)
        nvy = np.empty(n)
        ids = nb_ids[:, k]
        absent = ids == 0
        sdx, sdy = SENTINELS[role]
        dx[absent], dy[absent] = sdx, sdy
        nvx[absent], nvy[absent] = vx[absent], vy[absent]
        for nid in np.unique(ids[~absent]):
            other = recording.tracks.get(int(nid))
            if other is None:
                raise MissingTrack(
                    f"neighbour {int(nid)} of track {track.track_id} not in recording"
                )
            rows = np.flatnonzero(ids == nid)
            fr = frames[rows]
            if fr[0] < other.first_frame or fr[-1] > other.last_frame:
                raise MissingFrame(f"neighbour {int(nid)} lacks frames of track {track.track_id}")
            j = fr - other.first_frame
            dx[rows] = other.x[j] - x[rows]
            dy[rows] = other.y[j] - y[rows]
            nvx[rows] = other.vx[j]
            nvy[rows] = other.vy[j]
        present = ~absent
        dx[present] *= sx
        dy[present] *= sy
        nvx *= sx
        nvy *= sy
        base = 4 + 4 * k
        if role in _LATERAL_FIRST:
            out[:, base], out[:, base + 1] = dy, dx
        else:
            out[:, base], out[:, base + 1] = dx, dy
        out[:, base + 2] = nvy
        out[:, base + 3] = nvx
    return FeatureMatrix(out, segment.label, segment.prediction_time_s)


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, fm: FeatureMatrix) -> FeatureMatrix:
        return FeatureMatrix((fm.values - self.mean) / self.std, fm.label, fm.prediction_time_s)

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, fm: FeatureMatrix) -> FeatureMatrix:
        return FeatureMatrix(fm.values * self.std + self.mean, fm.label, fm.prediction_time_s)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> Normalizer:
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(train) -> Normalizer:
    train = list(train)
    if not train:
        raise EmptyInput("cannot fit a normaliser on an empty train split")
    rows = np.concatenate([fm.values for fm in train], axis=0)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0] = 1.0
    return Normalizer(mean, std)


def apply(norm: Normalizer, fm: FeatureMatrix) -> FeatureMatrix:
    return norm.apply(fm)


# -- binary persistence ------------------------------------------------------

def save_feature_matrix(fm: FeatureMatrix, path) -> tuple[Path, Path]:
    """Little-endian float32 row-major blob plus ``<path>.json`` sidecar."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(
        json.dumps(
            {
                "shape": list(fm.values.shape),
                "dtype": "<f4",
                "columns": list(COLUMN_NAMES),
                "label": fm.label,
                "prediction_time_s": fm.prediction_time_s,
            },
            indent=1,
        )
    )
    fm.values.astype("<f4").tofile(path)
    return path, sidecar


def load_feature_matrix(path) -> FeatureMatrix:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    values = np.fromfile(path, dtype="<f4").reshape(meta["shape"]).astype(np.float64)
    return FeatureMatrix(values, meta["label"], meta["prediction_time_s"])


def save_stack(matrices, path, extra: dict | None = None) -> tuple[Path, Path]:
    """Many equally shaped matrices as one (N, n, 36) blob with a sidecar
    carrying per-sample labels and prediction times."""
    path = Path(path)
    matrices = list(matrices)
    if matrices:
        values = np.stack([fm.values for fm in matrices])
    else:
        values = np.zeros((0, 0, N_FEATURES))
    meta = {
        "shape": list(values.shape),
        "dtype": "<f4",
        "columns": list(COLUMN_NAMES),
        "labels": [fm.label for fm in matrices],
        "prediction_time_s": [fm.prediction_time_s for fm in matrices],
    }
    if extra:
        meta.update(extra)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=1))
    values.astype("<f4").tofile(path)
    return path, sidecar


def load_stack(path) -> list[FeatureMatrix]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    values = np.fromfile(path, dtype="<f4").reshape(meta["shape"]).astype(np.float64)
    return [
        FeatureMatrix(values[i], lab, pt)
        for i, (lab, pt) in enumerate(zip(meta["labels"], meta["prediction_time_s"]))
    ]


def assemble_all(segments, recordings) -> list[FeatureMatrix]:
    """Feature matrices for ``segments`` drawn from several recordings."""
    by_id = {r.recording_id: r for r in recordings}
    out = []
    for seg in segments:
        try:
            rec = by_id[seg.recording_id]
        except KeyError:
            raise MissingTrack(f"recording {seg.recording_id} not loaded")
        out.append(assemble_feature_matrix(seg, rec))
    return out


def stack_arrays(matrices, norm: Normalizer | None = None):
    """(X, y, prediction_time) arrays; LK prediction times become NaN."""
    matrices = list(matrices)
    if not matrices:
        raise EmptyInput("no feature matrices")
    X = np.stack([fm.values for fm in matrices])
    if norm is not None:
        X = norm.apply_array(X)
    y = np.array([CLASSES.index(fm.label) for fm in matrices], dtype=np.int64)
    pt = np.array(
        [np.nan if fm.prediction_time_s is None else fm.prediction_time_s for fm in matrices]
    )
    return X, y, pt
