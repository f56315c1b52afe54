import io

import numpy as np

from ynet.data.synth import synth_scene
from ynet.plotting import PAST, PRED, TRUTH, render, save_png
from ynet.scene import Scene


def test_output_matches_original_size():
    scene = Scene(np.zeros((16, 24), np.uint8), downsample_factor=2.0).padded(32)
    assert render(scene).size == (48, 32)


def test_colours_follow_convention():
    syn = synth_scene("corridor", 64, n_agents=1)
    t = syn.tracks[0]
    img = np.asarray(render(syn.scene, t.positions[:5], t.positions[5:10], [t.positions[10:] + [0, 3]]))
    for colour in (PAST, TRUTH, PRED):
        assert np.all(img == colour, axis=-1).any()


def test_deterministic_bytes(tmp_path):
    syn = synth_scene("fork", 32)
    t = syn.tracks[0]
    hm = np.random.default_rng(0).random((32, 32))
    for name in ("a.png", "b.png"):
        save_png(render(syn.scene, t.positions[:5], t.positions[5:], [t.positions[5:]], hm), tmp_path / name)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_overlay_peak_at_argmax():
    scene = Scene(np.zeros((8, 8), np.uint8), downsample_factor=4.0)
    hm = np.zeros((8, 8))
    hm[5, 2] = 1.0
    hm[1, 6] = 0.3
    img = np.asarray(render(scene, heatmap=hm)).astype(int)
    base = np.asarray(render(scene)).astype(int)
    change = np.abs(img - base).sum(axis=-1)
    rows, cols = np.nonzero(change == change.max())
    assert set(rows // 4) == {5} and set(cols // 4) == {2}
