"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even
when output capture is on) or directly with ``python3 tests/test_acceptance.py``.
"""
import json
import math
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import FIXTURE_WINDOWS, fork_fixture, raw_fixture_tracks  # noqa: E402

from ynet.autodiff import (  # noqa: E402
    Tensor,
    add,
    bce_loss,
    bilinear_upsample2,
    concat_channels,
    conv2d,
    maxpool2,
    relu,
    scale,
    sigmoid,
    slice_channels,
    zero_grad,
)
from ynet.autodiff.gradcheck import check_op, numerical_grad, relative_error  # noqa: E402
from ynet.cli import main as cli  # noqa: E402
from ynet.data.geometry import pixel_to_world, rescale_coords, upscale_coords, world_to_pixel  # noqa: E402
from ynet.data.synth import synth_scene  # noqa: E402
from ynet.data.tracks import PipelineConfig, filter_and_window, run_pipeline  # noqa: E402
from ynet.evaluation import EvalRecord, ade, evaluate_min_of_k, fde  # noqa: E402
from ynet.heatmaps import encode_conditioning  # noqa: E402
from ynet.model import ModelConfig, YNet  # noqa: E402
from ynet.predict import Predictor, SampleBudget  # noqa: E402
from ynet.sampling import (  # noqa: E402
    cws,
    entropy,
    fuse_prior,
    point_estimate,
    relative_threshold,
    softargmax,
    ttst,
    waypoint_prior,
)
from ynet.training import TrainConfig, fit, make_sample  # noqa: E402


def report(capsys, number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({detail})"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# -- shared overfit run ------------------------------------------------------------

OVERFIT = dict(size=32, n_p=5, n_f=10, channels=(8, 8, 16), n_train=20, n_heldout=10, max_epochs=500)
SIGMA_H = 2.0
WAYPOINTS = (10,)


def overfit_samples():
    n = OVERFIT["n_train"] + OVERFIT["n_heldout"]
    syn = synth_scene("fork", OVERFIT["size"], seed=0, n_agents=n, track_length=OVERFIT["n_p"] + OVERFIT["n_f"])
    wins, _ = filter_and_window(syn.tracks, OVERFIT["n_p"], OVERFIT["n_f"])
    samples = [make_sample(syn.scene, w, SIGMA_H) for w in wins]
    return samples[: OVERFIT["n_train"]], samples[OVERFIT["n_train"] :]


def min_of_k(model, samples, k_e, k_a, seed=0):
    sets = Predictor(model, SampleBudget(k_e, k_a, 10_000, seed), sigma_h=SIGMA_H).predict(samples)
    recs = [EvalRecord(s.key, s.future, ps.paths) for s, ps in zip(samples, sets)]
    return evaluate_min_of_k(recs)


@pytest.fixture(scope="module")
def overfit():
    train, heldout = overfit_samples()
    mcfg = ModelConfig(n_p=OVERFIT["n_p"], n_f=OVERFIT["n_f"], waypoint_frames=WAYPOINTS,
                       encoder_channels=OVERFIT["channels"], center_channels=32, seed=0)
    tcfg = TrainConfig(lr=1e-3, batch_size=8, epochs=OVERFIT["max_epochs"], waypoint_frames=WAYPOINTS,
                       sigma_h=SIGMA_H, seed=0)
    history = []

    def check(epoch, row, model):
        if epoch % 25:
            return False
        score = min_of_k(model, train, 5, 1).min_ade
        history.append((epoch, score))
        return score < 1.0

    start = time.time()
    model = fit(train, mcfg, tcfg, on_epoch=check).model
    return {"model": model, "train": train, "heldout": heldout, "history": history,
            "seconds": time.time() - start}


# -- criteria ----------------------------------------------------------------------

def test_c1_gradient_suite(capsys):
    start = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0
    op_cases = [
        (lambda x, w, b: conv2d(x, w, b, padding=1), [(2, 3, 5, 5), (4, 3, 3, 3), (4,)]),
        (lambda x, w: conv2d(x, w), [(1, 2, 6, 5), (3, 2, 3, 3)]),
        (relu, [(2, 3, 4, 4)]),
        (maxpool2, [(2, 3, 6, 8)]),
        (bilinear_upsample2, [(2, 3, 4, 5)]),
        (concat_channels, [(2, 2, 4, 4), (2, 3, 4, 4)]),
        (lambda x: slice_channels(x, 1, 3), [(2, 4, 3, 3)]),
        (sigmoid, [(2, 3, 4, 4)]),
        (lambda x: scale(x, 2.5), [(3, 4)]),
        (add, [(2, 3, 4, 4), (2, 3, 4, 4)]),
    ]
    for op, shapes in op_cases:
        for _ in range(5):
            inputs = [rng.standard_normal(s) for s in shapes]
            if op is relu:
                inputs = [np.where(np.abs(x) < 1e-3, 0.5, x) for x in inputs]  # keep away from the kink
            worst = max(worst, check_op(op, inputs, rng))
    for _ in range(5):
        target = rng.random((2, 3, 4, 4))
        worst = max(worst, check_op(lambda p: bce_loss(p, target), [rng.uniform(0.05, 0.95, (2, 3, 4, 4))], rng))

    cfg = ModelConfig(n_p=2, n_f=3, n_classes=2, waypoint_frames=(3,), encoder_channels=(4, 4), center_channels=4)
    model = YNet(cfg, dtype=np.float64)
    x = rng.random((1, 4, 16, 16))
    cond = encode_conditioning((10, 4), [(6, 8)], (16, 16), 2, 2.0, dtype=np.float64)
    cond = [c[None] for c in cond]
    pg, pt = rng.standard_normal((1, 5, 16, 16)), rng.standard_normal((1, 3, 16, 16))

    def value():
        g, t = model.forward(x, cond, "train")
        return float((g.data * pg).sum() + (t.data * pt).sum())

    zero_grad(model.parameters())
    g, t = model.forward(x, cond, "train")
    g.backward(pg)
    t.backward(pt)
    names = sorted(model.params)
    analytic, numeric = [], []
    for i in rng.choice(len(names), 20):
        p = model.params[names[i]]
        k = int(rng.integers(p.data.size))
        analytic.append(p.grad.reshape(-1)[k])
        numeric.append(numerical_grad(value, p.data, 1e-6, [k]).reshape(-1)[k])
    full = relative_error(np.array(analytic), np.array(numeric))
    elapsed = time.time() - start
    ok = worst < 1e-4 and full < 1e-3 and elapsed < 60
    report(capsys, 1, "gradient suite", ok, f"worst op rel {worst:.2e}, full model rel {full:.2e}, {elapsed:.1f}s")


def loop_softargmax(x):
    h, w = x.shape
    z = i_num = j_num = 0.0
    for i in range(h):
        for j in range(w):
            e = math.exp(x[i, j])
            z += e
            i_num += i * e
            j_num += j * e
    return np.array([j_num / z, i_num / z])


def test_c2_sampling_oracles(capsys):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(0, 2, (5, 5))
        worst = max(worst, float(np.abs(softargmax(x) - loop_softargmax(x)).max()))
    ttst_ok = True
    argmax_ok = True
    for _ in range(200):
        p = rng.random((16, 16)) ** rng.uniform(1, 8)
        ttst_ok &= bool(np.array_equal(ttst(p, 1, 100, 0)[0], point_estimate(relative_threshold(p))))
        argmax_ok &= relative_threshold(p).argmax() == p.argmax()
    ok = worst < 1e-10 and ttst_ok and argmax_ok
    report(capsys, 2, "sampling oracles", ok,
           f"softargmax max err {worst:.1e}, TTST K_e=1 exact {ttst_ok}, argmax kept {argmax_ok}")


def test_c3_cws_fork_fixture(capsys):
    start = time.time()
    syn, wp, last, goal = fork_fixture()
    mask = syn.masks["bottom"]
    fused = fuse_prior(wp, waypoint_prior(last, goal, (10 - 5) / 10))
    mass = float(fused[mask].sum())
    a = cws([wp], goal, last, 5, 10, [10], 5, seed=0)
    b = cws([wp], goal, last, 5, 10, [10], 5, seed=0)
    r = np.floor(a[:, 0] + 0.5).astype(int)
    inside = int(mask[r[:, 1], r[:, 0]].sum())
    elapsed = time.time() - start
    ok = mass >= 0.95 and inside == 5 and np.array_equal(a, b) and elapsed < 5
    report(capsys, 3, "CWS fork fixture", ok,
           f"bottom-corridor mass {mass:.4f}, {inside}/5 samples inside, deterministic, {elapsed:.2f}s")


def test_c4_overfit(overfit, capsys):
    final = min_of_k(overfit["model"], overfit["train"], 5, 1).min_ade
    epochs = overfit["history"][-1][0] if overfit["history"] else 0
    ok = final < 2.0 and overfit["seconds"] < 600 and epochs <= OVERFIT["max_epochs"]
    report(capsys, 4, "overfit smoke test", ok,
           f"train min-of-5 ADE {final:.3f} px after {epochs} epochs, {overfit['seconds']:.0f}s")


def test_c5_min_of_k_monotone(overfit, capsys):
    model, held = overfit["model"], overfit["heldout"]
    ke = {k: min_of_k(model, held, k, 1) for k in (1, 5, 20)}
    ka = {k: min_of_k(model, held, 20, k) for k in (1, 2, 5)}
    ke_ade = [ke[k].min_ade for k in (1, 5, 20)]
    ka_ade = [ka[k].min_ade for k in (1, 2, 5)]
    ka_fde = [ka[k].min_fde for k in (1, 2, 5)]
    mono_e = ke_ade[0] >= ke_ade[1] >= ke_ade[2]
    mono_a = ka_ade[0] >= ka_ade[1] >= ka_ade[2]
    const = ka_fde[0] == ka_fde[1] == ka_fde[2]
    ok = mono_e and mono_a and const
    fmt = lambda v: "/".join(f"{x:.3f}" for x in v)
    report(capsys, 5, "min-of-K monotonicity", ok,
           f"ADE over K_e 1/5/20 {fmt(ke_ade)}, over K_a 1/2/5 {fmt(ka_ade)}, FDE over K_a {fmt(ka_fde)}")


def random_logit_map(rng, shape=(32, 32)):
    """Background-dominated logits with a few soft peaks, like an untempered goal head."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    z = rng.uniform(-8, -3) + rng.normal(0, 0.5, shape)
    for _ in range(rng.integers(1, 4)):
        c = rng.uniform(0, shape[1] - 1), rng.uniform(0, shape[0] - 1)
        s = rng.uniform(1.5, 5)
        height = rng.uniform(0, 1.0) - z.mean()
        z = z + height * np.exp(-((xx - c[0]) ** 2 + (yy - c[1]) ** 2) / (2 * s * s))
    return np.minimum(z, 1.0)


def test_c6_temperature(capsys):
    rng = np.random.default_rng(6)
    temps = (0.5, 1.0, 1.8, 3.0)
    bad = 0
    for _ in range(100):
        z = Tensor(random_logit_map(rng))
        ent = [entropy(sigmoid(scale(z, 1.0 / t)).data) for t in temps]
        bad += any(b < a - 1e-12 for a, b in zip(ent, ent[1:]))
    report(capsys, 6, "temperature property", bad == 0, f"{100 - bad}/100 maps with non-decreasing entropy")


def test_c7_pipeline(capsys):
    tracks = raw_fixture_tracks()
    res = run_pipeline(tracks, PipelineConfig(n_p=5, n_f=30, src_fps=30, dst_fps=1))
    lengths = {len(w.past) + len(w.future) for w in res.windows}
    seen = Counter()
    for w in res.windows:
        seen.update((w.scene_id, w.agent_id, int(f)) for f in w.frames)
    seen.update((d.scene_id, d.agent_id, d.frame) for d in res.discards)
    conserved = seen == Counter((t.scene_id, t.agent_id, int(f)) for t in tracks for f in t.frames)
    rng = np.random.default_rng(7)
    h = np.array([[12.0, 0.4, 30.0], [-0.3, 11.0, 45.0], [1e-4, 2e-4, 1.0]])
    w = rng.uniform(-50, 50, (1000, 2))
    homog = float(np.abs(pixel_to_world(world_to_pixel(w, h), h) - w).max())
    p = rng.uniform(0, 2000, (1000, 2))
    resc = max(float(np.abs(upscale_coords(rescale_coords(p, f), f) - p).max()) for f in (1.5, 3.0, 4.0))
    ok = len(res.windows) == FIXTURE_WINDOWS and lengths == {35} and conserved and homog < 1e-9 and resc < 1e-9
    report(capsys, 7, "pipeline structural check", ok,
           f"{len(res.windows)} windows (expected {FIXTURE_WINDOWS}), lengths {sorted(lengths)}, "
           f"conservation {conserved}, homography err {homog:.1e}, rescale err {resc:.1e}")


def test_c8_metric_oracles(capsys):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 31))
        p, g = rng.normal(0, 100, (2, n, 2))
        loop_a = sum(math.hypot(p[i, 0] - g[i, 0], p[i, 1] - g[i, 1]) for i in range(n)) / n
        loop_f = math.hypot(p[-1, 0] - g[-1, 0], p[-1, 1] - g[-1, 1])
        worst = max(worst, abs(ade(p, g) - loop_a), abs(fde(p, g) - loop_f))
    g = rng.random((12, 2))
    offset = ade(g + [1.0, 0.0], g) == 1.0
    q = np.zeros((12, 2))
    q[-1] = [3.0, 4.0]
    tri = fde(q, np.zeros((12, 2))) == 5.0
    ok = worst < 1e-10 and offset and tri
    report(capsys, 8, "metric oracles", ok, f"max err {worst:.1e}, constant offset exact {offset}, 3-4-5 exact {tri}")


def run_cli_chain(root: Path) -> dict[str, bytes]:
    root.mkdir(parents=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps({
        "seed": 3,
        "pipeline": {"n_p": 5, "n_f": 10},
        "model": {"encoder_channels": [4, 4], "center_channels": 8, "waypoint_frames": [10]},
        "train": {"lr": 0.001, "epochs": 2, "sigma_h": 2.0},
        "predict": {"k_e": 5, "k_a": 2, "n_mc": 1000},
        "synth": {"n_agents": 6},
    }))
    c = ["--config", str(cfg)]
    scenes = str(root / "raw/scenes")
    steps = [
        ["synth", *c, "--out", str(root / "raw")],
        ["preprocess", str(root / "raw/tracks.csv"), "--scenes", scenes, *c, "--out", str(root / "data")],
        ["train", str(root / "data/windows.jsonl"), "--scenes", scenes, *c, "--out", str(root / "model")],
        ["predict", str(root / "model/model.ckpt"), str(root / "data/windows.jsonl"), "--scenes", scenes, *c,
         "--out", str(root / "pred")],
        ["evaluate", str(root / "pred/predictions.jsonl"), str(root / "data/windows.jsonl"), *c,
         "--out", str(root / "eval")],
    ]
    for args in steps:
        if cli(args) != 0:
            raise RuntimeError(f"step failed: {args[0]}")
    names = ["data/windows.jsonl", "data/discards.csv", "model/model.ckpt", "model/loss.csv",
             "pred/predictions.jsonl", "eval/summary.json", "eval/agents.csv"]
    return {n: (root / n).read_bytes() for n in names}


def test_c9_determinism(tmp_path, capsys):
    a = run_cli_chain(tmp_path / "run1")
    b = run_cli_chain(tmp_path / "run2")
    same = [n for n in a if a[n] == b[n]]
    report(capsys, 9, "determinism", len(same) == len(a), f"{len(same)}/{len(a)} outputs bit-identical")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
