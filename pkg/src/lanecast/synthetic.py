"""Seeded highway corpora in the highD three-CSV layout.

Each recording has two carriageways with ``lanes_per_direction`` lanes.
Every vehicle is present for the whole recording and drives at a roughly
constant speed. A lane-changing vehicle follows a logistic lateral profile
that crosses the lane line at an integer frame, and its lane id switches
at exactly that frame.

Geometry in the written files: the upper carriageway (direction 1) drives
towards -x with its left side at +y, the lower one (direction 2) drives
towards +x with its left side at -y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SpecInvalid
from .features import N_FEATURES, FeatureMatrix
from .highd_io import ROLES, NeighborRole, Recording, RecordingMeta, Track, lane_ids_from_markings, write_recording
from .segmentation import keyed_rng

LANE_WIDTH_M = 3.75
VEHICLE_LENGTH_M = 5.0
_UPPER_EDGE_Y = 4.0
_MEDIAN_M = 3.5


@dataclass(frozen=True)
class SyntheticSpec:
    n_tracks: int = 1500
    lanes_per_direction: int = 3
    duration_s: float = 24.0
    lc_probability: float = 0.5
    speed_range: tuple[float, float] = (22.0, 36.0)
    lc_duration_s: float = 4.0
    seed: int = 0
    frame_rate_hz: float = 25.0
    tracks_per_recording: int = 60
    lc_direction: str = "both"  # "both" | "left" | "right"
    earliest_lc_s: float = 10.0
    lateral_noise_m: float = 0.02
    speed_noise_mps: float = 0.3

    def __post_init__(self):
        problems = []
        if self.n_tracks < 1 or self.tracks_per_recording < 1:
            problems.append("track counts must be positive")
        if self.lanes_per_direction < 1:
            problems.append("need at least one lane per direction")
        if self.lanes_per_direction < 2 and self.lc_probability > 0:
            problems.append("lane changes need at least two lanes")
        if not 0.0 <= self.lc_probability <= 1.0:
            problems.append("lc_probability must lie in [0, 1]")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            problems.append("speed_range must satisfy 0 < low <= high")
        if self.lc_duration_s <= 0 or self.frame_rate_hz <= 0:
            problems.append("lc_duration_s and frame_rate_hz must be positive")
        if self.lc_direction not in ("both", "left", "right"):
            problems.append(f"unknown lc_direction {self.lc_direction!r}")
        if self.earliest_lc_s <= 0 or self.duration_s < self.earliest_lc_s + self.lc_duration_s / 2:
            problems.append("duration_s too short to fit a lane change after earliest_lc_s")
        if self.lateral_noise_m < 0 or self.speed_noise_mps < 0:
            problems.append("noise scales must be non-negative")
        if problems:
            raise SpecInvalid("; ".join(problems))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.frame_rate_hz))

    @property
    def n_recordings(self) -> int:
        return -(-self.n_tracks // self.tracks_per_recording)

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        d = dict(d)
        if "speed_range" in d:
            d["speed_range"] = tuple(d["speed_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecInvalid(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    recording_id: int
    track_id: int
    frame: int
    maneuver: str


def _markings(lanes: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    upper = tuple(_UPPER_EDGE_Y + i * LANE_WIDTH_M for i in range(lanes + 1))
    start = upper[-1] + _MEDIAN_M
    lower = tuple(start + i * LANE_WIDTH_M for i in range(lanes + 1))
    return upper, lower


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class _Vehicle:
    """Kinematics of one track in the normalised frame (towards +x, left +u)."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator, t: np.ndarray):
        L = spec.lanes_per_direction
        self.direction = int(rng.integers(1, 3))
        r = rng.random()
        if r < spec.lc_probability:
            side = spec.lc_direction
            if side == "both":
                side = "left" if rng.random() < 0.5 else "right"
            self.maneuver = "LLC" if side == "left" else "RLC"
        else:
            self.maneuver = "LK"
        if self.maneuver == "LLC":
            lane0 = int(rng.integers(0, L - 1))
            lane1 = lane0 + 1
        elif self.maneuver == "RLC":
            lane0 = int(rng.integers(1, L))
            lane1 = lane0 - 1
        else:
            lane0 = lane1 = int(rng.integers(0, L))
        self.lane0, self.lane1 = lane0, lane1

        # longitudinal: constant speed plus a slow sinusoidal wobble
        v0 = rng.uniform(*spec.speed_range)
        x0 = rng.uniform(0.0, 400.0)
        a = spec.speed_noise_mps * rng.uniform(0.5, 1.0)
        period = rng.uniform(6.0, 12.0)
        phase = rng.uniform(0.0, 2 * math.pi)
        w = 2 * math.pi / period
        self.s = x0 + v0 * t - (a / w) * (np.cos(w * t + phase) - math.cos(phase))
        self.vs = v0 + a * np.sin(w * t + phase)

        # lateral: lane centre plus a small wander, plus the manoeuvre profile
        amp = spec.lateral_noise_m * rng.uniform(0.5, 1.0)
        wp = 2 * math.pi / rng.uniform(8.0, 15.0)
        psi = rng.uniform(0.0, 2 * math.pi)
        self.u = (lane0 + 0.5) * LANE_WIDTH_M + amp * np.sin(wp * t + psi)
        self.vu = amp * wp * np.cos(wp * t + psi)
        self.lane_idx = np.full(len(t), lane0, dtype=np.int64)
        self.crossing_frame = None
        if lane1 != lane0:
            fps = spec.frame_rate_hz
            first = int(math.ceil(spec.earliest_lc_s * fps))
            last = int(math.floor((spec.duration_s - spec.lc_duration_s / 2) * fps)) - 1
            c = int(rng.integers(first, last + 1))
            k = 2.0 * math.log(19.0) / spec.lc_duration_s  # 5% -> 95% spans lc_duration_s
            sgn = 1.0 if lane1 > lane0 else -1.0
            sig = _logistic(k * (t - c / fps))
            self.u = self.u + sgn * LANE_WIDTH_M * sig
            self.vu = self.vu + sgn * LANE_WIDTH_M * k * sig * (1.0 - sig)
            self.lane_idx[c:] = lane1
            self.crossing_frame = c


def _neighbors(s: np.ndarray, lane: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Neighbour ids (G, T, 8) for one carriageway in the normalised frame.

    ``s`` and ``lane`` are (G, T); lane indices grow to the left.
    """
    G, T = s.shape
    out = np.zeros((G, T, len(ROLES)), dtype=np.int64)
    if G < 2:
        return out
    # ties in position are broken by id so that p/f stay mutually consistent
    key = s + 1e-9 * np.arange(G)[:, None]
    dx = key[None, :, :] - key[:, None, :]  # (target, other, T)
    dlane = lane[None, :, :] - lane[:, None, :]
    not_self = ~np.eye(G, dtype=bool)[:, :, None]
    half = VEHICLE_LENGTH_M

    def nearest(mask, score):
        vals = np.where(mask, score, np.inf)
        j = vals.argmin(axis=1)  # (G, T)
        found = np.isfinite(np.take_along_axis(vals, j[:, None, :], axis=1)[:, 0, :])
        return np.where(found, ids[j], 0)

    same = (dlane == 0) & not_self
    roles = {
        NeighborRole.P: nearest(same & (dx > 0), dx),
        NeighborRole.F: nearest(same & (dx < 0), -dx),
    }
    for side, d in (("l", 1), ("r", -1)):
        adj = dlane == d
        roles[NeighborRole(side + "p")] = nearest(adj & (dx >= half), dx)
        roles[NeighborRole(side + "a")] = nearest(adj & (np.abs(dx) < half), np.abs(dx))
        roles[NeighborRole(side + "f")] = nearest(adj & (dx <= -half), -dx)
    for k, role in enumerate(ROLES):
        out[:, :, k] = roles[role]
    return out


def _recording(spec: SyntheticSpec, rec_id: int, n_tracks: int):
    fps = spec.frame_rate_hz
    T = spec.n_frames
    t = np.arange(T) / fps
    frames = np.arange(T, dtype=np.int64)
    L = spec.lanes_per_direction
    upper_m, lower_m = _markings(L)
    upper_ids, lower_ids = lane_ids_from_markings(len(upper_m), len(lower_m))
    meta = RecordingMeta(rec_id, fps, upper_ids, lower_ids, upper_m, lower_m)

    track_ids = np.arange(1, n_tracks + 1, dtype=np.int64)
    vehicles = [_Vehicle(spec, keyed_rng(spec.seed, rec_id, int(tid)), t) for tid in track_ids]

    tracks, truth = {}, []
    for direction in (1, 2):
        members = [i for i, v in enumerate(vehicles) if v.direction == direction]
        if not members:
            continue
        ids = track_ids[members]
        s = np.stack([vehicles[i].s for i in members])
        lane = np.stack([vehicles[i].lane_idx for i in members])
        nbs = _neighbors(s, lane, ids)
        for row, i in enumerate(members):
            v = vehicles[i]
            if direction == 1:
                x, vx = -v.s, -v.vs
                y, vy = _UPPER_EDGE_Y + v.u, v.vu
                lane_id = np.asarray(upper_ids)[v.lane_idx]
            else:
                x, vx = v.s, v.vs
                y, vy = lower_m[-1] - v.u, -v.vu
                lane_id = np.asarray(lower_ids)[L - 1 - v.lane_idx]
            tid = int(track_ids[i])
            tracks[tid] = Track(
                track_id=tid,
                direction=direction,
                frame=frames.copy(),
                x=np.round(x, 4),
                y=np.round(y, 4),
                vx=np.round(vx, 4),
                vy=np.round(vy, 4),
                lane_id=lane_id,
                neighbors=nbs[row],
            )
            if v.crossing_frame is not None:
                truth.append(GroundTruth(rec_id, tid, v.crossing_frame, v.maneuver))
    tracks = {k: tracks[k] for k in sorted(tracks)}
    truth.sort(key=lambda g: (g.recording_id, g.track_id))
    return Recording(meta=meta, tracks=tracks), truth


def generate_recordings(spec: SyntheticSpec) -> tuple[list[Recording], list[GroundTruth]]:
    """In-memory corpus plus the ground-truth crossing frame of every LC."""
    recs, truth = [], []
    remaining = spec.n_tracks
    for rec_id in range(1, spec.n_recordings + 1):
        n = min(spec.tracks_per_recording, remaining)
        remaining -= n
        rec, gt = _recording(spec, rec_id, n)
        recs.append(rec)
        truth.extend(gt)
    return recs, truth


def generate_corpus(spec: SyntheticSpec, out_dir) -> list[Path]:
    """Write the corpus as ``NN_recordingMeta.csv`` / ``NN_tracksMeta.csv`` /
    ``NN_tracks.csv`` triples; returns the written paths."""
    recs, _ = generate_recordings(spec)
    paths = []
    for rec in recs:
        paths.extend(write_recording(rec, out_dir))
    return paths


def generate_separable_toy(
    n_per_class: int, n: int, seed: int = 0, noise: float = 0.05
) -> list[FeatureMatrix]:
    """Toy matrices separable by the mean ego lateral velocity.

    LLC ramps v_y up to +1, RLC down to -1, LK stays at 0; every column gets
    gaussian noise of scale ``noise``. Order is LK, LLC, RLC interleaved.
    """
    if n < 2:
        raise ValueError("toy matrices need n >= 2")
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0.2, 1.0, n)
    out = []
    for _ in range(n_per_class):
        for label, sign in (("LK", 0.0), ("LLC", 1.0), ("RLC", -1.0)):
            values = noise * rng.standard_normal((n, N_FEATURES))
            values[:, 2] += sign * ramp
            out.append(FeatureMatrix(values, label))
    return out
