"""Lane-change detection, LC/LK window sampling, balancing and splitting.

Frame conventions: a segment covers ``[start_frame, end_frame)``. For an LC
segment the gap ``lc.frame - end_frame`` equals ``round(dt_p * f)``, so the
lane-change frame itself is never inside the window.

Random draws never share a generator across tracks. Every draw gets its own
stream keyed on (seed, purpose, recording, track, frame), which makes the
output independent of iteration order and of how work is parallelised.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import AmbiguousManeuver, EmptyInput
from .highd_io import Recording, Track

_LC_STREAM = 1
_LK_STREAM = 2
_BALANCE_STREAM = 3
_SPLIT_STREAM = 4


@dataclass(frozen=True)
class LCInstant:
    track_id: int
    frame: int
    maneuver: str  # "LLC" | "RLC"


@dataclass(frozen=True)
class Segment:
    track_id: int
    start_frame: int
    end_frame: int
    label: str
    prediction_time_s: float | None = None
    recording_id: int = 0

    @property
    def n(self) -> int:
        return self.end_frame - self.start_frame

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.recording_id, self.track_id, self.start_frame)


@dataclass(frozen=True)
class DatasetConfig:
    obs_window_s: float
    max_pred_time_s: float
    seed: int = 0

    def __post_init__(self):
        if not (self.obs_window_s > 0 and self.max_pred_time_s > 0):
            raise ValueError("observation window and max prediction time must be positive")

    def n_frames(self, fps: float) -> int:
        return round_half_up(self.obs_window_s * fps)

    def max_gap_frames(self, fps: float) -> int:
        return round_half_up(self.max_pred_time_s * fps)

    def history_frames(self, fps: float) -> int:
        return round_half_up((self.obs_window_s + self.max_pred_time_s) * fps)


@dataclass(frozen=True)
class SplitDataset:
    train: list
    val: list
    test: list

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def round_half_up(v: float) -> int:
    # 1e-9 absorbs binary representation error, e.g. 1.2 * 25 = 29.999999999999996
    return int(math.floor(v + 0.5 + 1e-9))


def lateral_position(track: Track) -> np.ndarray:
    """Lateral coordinate with +y pointing to the driver's left."""
    return track.y if track.direction == 1 else -track.y


def detect_lc_instants(track: Track) -> list[LCInstant]:
    change = np.flatnonzero(np.diff(track.lane_id) != 0) + 1
    if len(change) == 0:
        return []
    y = lateral_position(track)
    out = []
    for i in change:
        dy = y[i] - y[i - 1]
        if dy == 0:
            raise AmbiguousManeuver(int(track.frame[i]))
        out.append(LCInstant(track.track_id, int(track.frame[i]), "LLC" if dy > 0 else "RLC"))
    return out


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *(int(k) for k in key)])


def lc_rng(cfg: DatasetConfig, recording_id: int, track_id: int, frame: int):
    return keyed_rng(cfg.seed, _LC_STREAM, recording_id, track_id, frame)


def lk_rng(cfg: DatasetConfig, recording_id: int, track_id: int):
    return keyed_rng(cfg.seed, _LK_STREAM, recording_id, track_id)


def _contains_instant(start: int, end: int, lc_frames) -> bool:
    return any(start <= f < end for f in lc_frames)


def sample_lc_segment(
    track: Track,
    lc: LCInstant,
    cfg: DatasetConfig,
    rng: np.random.Generator,
    fps: float,
    recording_id: int = 0,
    lc_frames: Iterable[int] | None = None,
) -> Segment | None:
    """Window of ``n`` frames ending ``round(dt_p * fps)`` frames before ``lc``.

    ``dt_p`` is uniform on (0, max_pred_time_s]. ``lc_frames`` lists every LC
    instant of the track; windows containing one of them are discarded.
    """
    if lc.frame - track.first_frame < cfg.history_frames(fps):
        return None
    dt_p = cfg.max_pred_time_s * (1.0 - rng.random())
    end = lc.frame - round_half_up(dt_p * fps)
    start = end - cfg.n_frames(fps)
    if lc_frames is None:
        lc_frames = [i.frame for i in detect_lc_instants(track)]
    if _contains_instant(start, end, lc_frames):
        return None
    return Segment(track.track_id, start, end, lc.maneuver, dt_p, recording_id)


def lk_window_starts(track: Track, cfg: DatasetConfig, fps: float, lc_frames) -> np.ndarray:
    """Start frames of every admissible LK window.

    Rejected: windows containing an LC instant, and windows whose end
    ``e`` (exclusive) satisfies ``0 <= lc - e <= round(max_pred * fps)`` for
    some LC instant, i.e. windows an LC sample could also have produced.
    """
    n = cfg.n_frames(fps)
    gap_max = cfg.max_gap_frames(fps)
    starts = np.arange(track.first_frame, track.last_frame - n + 2)
    ok = np.ones(len(starts), dtype=bool)
    ends = starts + n
    for f in lc_frames:
        ok &= ~((starts <= f) & (f < ends))
        gap = f - ends
        ok &= ~((gap >= 0) & (gap <= gap_max))
    return starts[ok]


def sample_lk_segment(
    track: Track,
    cfg: DatasetConfig,
    rng: np.random.Generator,
    fps: float,
    recording_id: int = 0,
    lc_frames: Iterable[int] | None = None,
) -> Segment | None:
    if lc_frames is None:
        lc_frames = [i.frame for i in detect_lc_instants(track)]
    starts = lk_window_starts(track, cfg, fps, list(lc_frames))
    if len(starts) == 0:
        return None
    s = int(starts[rng.integers(len(starts))])
    return Segment(track.track_id, s, s + cfg.n_frames(fps), "LK", None, recording_id)


def extract_segments(recording: Recording, cfg: DatasetConfig) -> list[Segment]:
    """Every LC segment plus at most one LK segment per track, unbalanced."""
    fps = recording.meta.frame_rate_hz
    rid = recording.recording_id
    out = []
    for tid in sorted(recording.tracks):
        track = recording.tracks[tid]
        instants = detect_lc_instants(track)
        frames = [i.frame for i in instants]
        for lc in instants:
            seg = sample_lc_segment(
                track, lc, cfg, lc_rng(cfg, rid, tid, lc.frame), fps, rid, frames
            )
            if seg is not None:
                out.append(seg)
        lk = sample_lk_segment(track, cfg, lk_rng(cfg, rid, tid), fps, rid, frames)
        if lk is not None:
            out.append(lk)
    return out


def eligible_instants(recording: Recording, cfg: DatasetConfig) -> list[tuple[int, int, int]]:
    """(recording, track, frame) of LC instants with enough history."""
    fps = recording.meta.frame_rate_hz
    need = cfg.history_frames(fps)
    out = []
    for tid in sorted(recording.tracks):
        track = recording.tracks[tid]
        for lc in detect_lc_instants(track):
            if lc.frame - track.first_frame >= need:
                out.append((recording.recording_id, tid, lc.frame))
    return out


def balance_classes(segments, rng: np.random.Generator) -> list[Segment]:
    """Keep every LC segment and at most count(LLC)+count(RLC) LK segments.

    Input order is preserved among the survivors.
    """
    segments = list(segments)
    lk = [i for i, s in enumerate(segments) if s.label == "LK"]
    target = len(segments) - len(lk)
    if len(lk) <= target:
        return segments
    keep = set(rng.choice(np.asarray(lk), size=target, replace=False).tolist())
    return [s for i, s in enumerate(segments) if s.label != "LK" or i in keep]


def balance_counts(n_lk: int, n_llc: int, n_rlc: int) -> int:
    return min(n_lk, n_llc + n_rlc)


def split_sizes(total: int) -> tuple[int, int, int]:
    n_train = total * 6 // 10
    n_val = total * 2 // 10
    return n_train, n_val, total - n_train - n_val


def split_dataset(segments, seed: int) -> SplitDataset:
    segments = list(segments)
    if not segments:
        raise EmptyInput("nothing to split")
    perm = keyed_rng(seed, _SPLIT_STREAM).permutation(len(segments))
    n_train, n_val, _ = split_sizes(len(segments))
    shuffled = [segments[i] for i in perm]
    return SplitDataset(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


def build_dataset(recordings, cfg: DatasetConfig) -> SplitDataset:
    segments = []
    for rec in sorted(recordings, key=lambda r: r.recording_id):
        segments.extend(extract_segments(rec, cfg))
    balanced = balance_classes(segments, keyed_rng(cfg.seed, _BALANCE_STREAM))
    return split_dataset(balanced, cfg.seed)


MANIFEST_COLUMNS = (
    "track_id",
    "start_frame",
    "end_frame",
    "label",
    "prediction_time_s",
    "split",
    "recording_id",
)


def manifest_csv(split: SplitDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    for name, segs in split.items():
        for s in segs:
            pt = "" if s.prediction_time_s is None else repr(float(s.prediction_time_s))
            w.writerow(
                [s.track_id, s.start_frame, s.end_frame, s.label, pt, name, s.recording_id]
            )
    return buf.getvalue()


def read_manifest(text: str) -> SplitDataset:
    parts = {"train": [], "val": [], "test": []}
    for row in csv.DictReader(io.StringIO(text)):
        pt = row["prediction_time_s"]
        parts[row["split"]].append(
            Segment(
                track_id=int(row["track_id"]),
                start_frame=int(row["start_frame"]),
                end_frame=int(row["end_frame"]),
                label=row["label"],
                prediction_time_s=float(pt) if pt else None,
                recording_id=int(row.get("recording_id") or 0),
            )
        )
    return SplitDataset(**parts)
