import numpy as np
import pytest

from ynet.data.synth import synth_scene


def fork_fixture(size=32, seed=0):
    """Fork scene, a tri-modal waypoint map (one mode per branch midpoint) and a bottom goal."""
    syn = synth_scene("fork", size, seed=seed)
    junction = syn.routes["bottom"][1]
    ends = {k: syn.routes[k][-1] for k in ("upper", "middle", "bottom")}
    yy, xx = np.mgrid[0:size, 0:size]
    wp = np.zeros((size, size))
    for end in ends.values():
        c = junction + 0.5 * (end - junction)
        wp += np.exp(-((xx - c[0]) ** 2 + (yy - c[1]) ** 2) / (2 * (syn.half_width / 2) ** 2))
    wp *= syn.walkable()
    wp /= wp.sum()
    goal = ends["bottom"] - [1.0, 1.0]
    return syn, wp, junction.copy(), goal


@pytest.fixture
def fork():
    return fork_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def raw_fixture_tracks():
    """Hand-built 30 FPS tracks; at 1 FPS with n_p=5, n_f=30 they yield exactly 5 windows.

    a: 80 s pedestrian -> 2 windows, 10 s tail
    b: pedestrian with second 40 missing -> fragments of 40 s and 60 s -> 1 + 1 windows
    c: 40 s biker -> class filter
    d: 34 s pedestrian -> short fragment
    e: 35 s pedestrian starting mid-second -> 1 window
    """
    from ynet.data.tracks import RawTrack

    def walk(frames, x0):
        f = np.asarray(frames)
        return np.stack([x0 + 0.05 * f, 10 + 0.01 * f], axis=1)

    b_frames = [f for f in range(0, 101 * 30) if not 1200 <= f < 1230]
    specs = [
        ("a", "Pedestrian", range(0, 80 * 30)),
        ("b", "pedestrian", b_frames),
        ("c", "Biker", range(0, 40 * 30)),
        ("d", "Pedestrian", range(0, 34 * 30)),
        ("e", "Pedestrian", range(15, 15 + 35 * 30)),
    ]
    return [RawTrack("s0", aid, cls, list(fr), walk(list(fr), 3.0)) for aid, cls, fr in specs]


FIXTURE_WINDOWS = 5
