import numpy as np
import pytest

from lanecast.highd_io import ROLES, Recording, RecordingMeta, Track
from lanecast.synthetic import SyntheticSpec, generate_corpus, generate_recordings


def make_track(track_id, lane_ids, y=None, direction=1, first_frame=0, x=None,
               vx=None, vy=None, neighbors=None):
    """A Track from plain lists; unspecified kinematics default to simple ramps."""
    lane_ids = np.asarray(lane_ids, dtype=np.int64)
    n = len(lane_ids)
    ramp = np.arange(n, dtype=np.float64)
    return Track(
        track_id=track_id,
        direction=direction,
        frame=np.arange(first_frame, first_frame + n, dtype=np.int64),
        x=ramp.copy() if x is None else np.asarray(x, dtype=np.float64),
        y=(0.01 * ramp if y is None else np.asarray(y, dtype=np.float64)),
        vx=np.full(n, 25.0) if vx is None else np.asarray(vx, dtype=np.float64),
        vy=np.zeros(n) if vy is None else np.asarray(vy, dtype=np.float64),
        lane_id=lane_ids,
        neighbors=np.zeros((n, len(ROLES)), dtype=np.int64) if neighbors is None else np.asarray(neighbors),
    )


def make_recording(tracks, fps=25.0, recording_id=1):
    meta = RecordingMeta(recording_id, fps, (2, 3, 4), (6, 7, 8), (0.0, 1.0, 2.0, 3.0), (4.0, 5.0, 6.0, 7.0))
    return Recording(meta=meta, tracks={t.track_id: t for t in tracks})


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(n_tracks=240, tracks_per_recording=60, seed=3)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    return generate_recordings(small_spec)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory, small_spec):
    out = tmp_path_factory.mktemp("small_corpus")
    generate_corpus(small_spec, out)
    return out


@pytest.fixture(scope="session")
def default_corpus():
    return generate_recordings(SyntheticSpec())


# -- acceptance summary ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one 'PASS/FAIL name: detail' line for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name, ok, detail):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
