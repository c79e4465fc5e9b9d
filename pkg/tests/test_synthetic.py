import hashlib
from collections import Counter

import numpy as np
import pytest

from lanecast.errors import SpecInvalid
from lanecast.highd_io import ROLES, NeighborRole, load_recordings
from lanecast.segmentation import DatasetConfig, build_dataset, detect_lc_instants
from lanecast.synthetic import SyntheticSpec, generate_corpus, generate_recordings, generate_separable_toy

P = ROLES.index(NeighborRole.P)
F = ROLES.index(NeighborRole.F)


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_no_changes_when_probability_zero():
    recs, truth = generate_recordings(SyntheticSpec(n_tracks=80, lc_probability=0.0))
    assert truth == []
    assert all(detect_lc_instants(t) == [] for r in recs for t in r.tracks.values())


def test_guaranteed_left_change():
    recs, truth = generate_recordings(
        SyntheticSpec(n_tracks=90, tracks_per_recording=30, lc_probability=1.0, lc_direction="left", seed=4)
    )
    for rec in recs:
        for t in rec.tracks.values():
            got = detect_lc_instants(t)
            assert len(got) == 1 and got[0].maneuver == "LLC"
    assert len(truth) == 90


def test_detected_frame_is_ground_truth(small_corpus):
    recs, truth = small_corpus
    by_key = {(g.recording_id, g.track_id): g for g in truth}
    found = 0
    for rec in recs:
        for t in rec.tracks.values():
            for inst in detect_lc_instants(t):
                g = by_key[(rec.recording_id, t.track_id)]
                assert (inst.frame, inst.maneuver) == (g.frame, g.maneuver)
                assert t.lane_id[inst.frame] != t.lane_id[inst.frame - 1]
                found += 1
    assert found == len(truth) > 0


def test_deterministic_bytes(tmp_path):
    spec = SyntheticSpec(n_tracks=40, tracks_per_recording=20, seed=11)
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b")
    generate_corpus(SyntheticSpec(n_tracks=40, tracks_per_recording=20, seed=12), tmp_path / "c")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


def test_files_parse(small_corpus_dir, small_corpus):
    recs = load_recordings(small_corpus_dir)
    assert len(recs) == len(small_corpus[0])
    assert sum(len(r.tracks) for r in recs) == 240


def test_preceding_following_symmetry(small_corpus):
    recs, _ = small_corpus
    for rec in recs:
        for a in rec.tracks.values():
            for i in np.flatnonzero(a.neighbors[:, P]):
                b = rec.tracks[int(a.neighbors[i, P])]
                assert b.neighbors[i, F] == a.track_id


def test_neighbours_share_direction(small_corpus):
    recs, _ = small_corpus
    for rec in recs:
        for a in rec.tracks.values():
            for nid in set(np.unique(a.neighbors).tolist()) - {0}:
                assert rec.tracks[nid].direction == a.direction


def test_both_carriageways_present(small_corpus):
    recs, _ = small_corpus
    dirs = Counter(t.direction for r in recs for t in r.tracks.values())
    assert set(dirs) == {1, 2}
    for rec in recs:
        for t in rec.tracks.values():
            lanes = rec.meta.upper_lane_ids if t.direction == 1 else rec.meta.lower_lane_ids
            assert set(np.unique(t.lane_id)) <= set(lanes)
            sign = -1 if t.direction == 1 else 1
            assert (sign * t.vx > 0).all()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lc_probability": 1.5},
        {"lanes_per_direction": 1},
        {"speed_range": (30.0, 20.0)},
        {"duration_s": 8.0},
        {"lc_direction": "up"},
        {"n_tracks": 0},
    ],
)
def test_invalid_spec(kwargs):
    with pytest.raises(SpecInvalid):
        SyntheticSpec(**kwargs)


def test_spec_from_dict():
    spec = SyntheticSpec.from_dict({"n_tracks": 10, "speed_range": [20, 30]})
    assert spec.speed_range == (20, 30)
    with pytest.raises(SpecInvalid):
        SyntheticSpec.from_dict({"tracks": 10})


@pytest.mark.parametrize("obs", [1.0, 2.0, 3.0])
@pytest.mark.parametrize("pred", [3.0, 4.0, 5.0, 6.0])
def test_default_corpus_cell_sizes(default_corpus, obs, pred):
    recs, _ = default_corpus
    sp = build_dataset(recs, DatasetConfig(obs, pred, 0))
    counts = Counter(s.label for _, part in sp.items() for s in part)
    assert min(counts.values()) >= 300


def test_toy_balanced_and_separable():
    mats = generate_separable_toy(100, 20, seed=0)
    assert len(mats) == 300
    assert Counter(m.label for m in mats) == {"LK": 100, "LLC": 100, "RLC": 100}
    mean_vy = {c: [m.values[:, 2].mean() for m in mats if m.label == c] for c in ("LK", "LLC", "RLC")}
    assert max(mean_vy["RLC"]) < min(mean_vy["LK"])
    assert max(mean_vy["LK"]) < min(mean_vy["LLC"])


def test_toy_needs_two_steps():
    with pytest.raises(ValueError):
        generate_separable_toy(3, 1)
