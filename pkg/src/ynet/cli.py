"""Command-line entry points: synth, preprocess, train, predict, evaluate, plot, ablate.

Configuration is a JSON file with optional sections ``pipeline``, ``model``,
``train`` and ``predict`` plus a root ``seed``. Command-line flags override the
file, which overrides the built-in defaults; the merged result is printed to
stderr at startup.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, YNetError

log = logging.getLogger("ynet")

DEFAULTS = {
    "seed": 0,
    "pipeline": {"n_p": 5, "n_f": 30, "src_fps": 30.0, "dst_fps": 1.0, "pedestrian_only": True, "coords": "pixel"},
    "model": {
        "waypoint_frames": [],
        "encoder_channels": [32, 32, 64, 64, 64],
        "center_channels": 128,
        "temperature": 1.0,
    },
    "train": {
        "lr": 1e-4, "batch_size": 8, "epochs": 100, "lambda1": 1.0, "lambda2": 1.0,
        "global_scale": 1000.0, "sigma_h": 4.0, "alpha": 6.0, "beta": 0.5, "augment": False,
        "checkpoint_every": 0,
    },
    "predict": {"k_e": 20, "k_a": 1, "n_mc": 10000, "use_ttst": True, "use_cws": True},
    "synth": {"kind": "fork", "size": 32, "n_agents": 20, "frame_stride": 30},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.k_e is not None:
        cfg["predict"]["k_e"] = args.k_e
    if args.k_a is not None:
        cfg["predict"]["k_a"] = args.k_a
    if args.temperature is not None:
        cfg["model"]["temperature"] = args.temperature
    if args.waypoints is not None:
        cfg["model"]["waypoint_frames"] = args.waypoints
    if args.no_ttst:
        cfg["predict"]["use_ttst"] = False
    if args.no_cws:
        cfg["predict"]["use_cws"] = False
    return cfg


def _waypoint_list(text: str) -> list[int]:
    if not text.strip():
        return []
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--waypoints expects comma-separated frames, got {text!r}") from None


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} {p} not found")
    return p


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_config(cfg: dict, n_classes: int):
    from .model import ModelConfig

    m = cfg["model"]
    return ModelConfig(
        n_p=cfg["pipeline"]["n_p"], n_f=cfg["pipeline"]["n_f"], n_classes=n_classes,
        waypoint_frames=tuple(m["waypoint_frames"]), encoder_channels=tuple(m["encoder_channels"]),
        center_channels=m["center_channels"], temperature=m["temperature"], seed=cfg["seed"],
    )


def _samples(windows, scenes_dir: Path, sigma_h: float):
    from .scene import load_scene_dir
    from .training import make_sample

    ids = sorted({w.scene_id for w in windows})
    for sid in ids:
        _need(scenes_dir / f"{sid}.png", "scene map")
    scenes = load_scene_dir(scenes_dir, ids)
    return [make_sample(scenes[w.scene_id], w, sigma_h) for w in windows], scenes


# -- subcommands ------------------------------------------------------------------

def cmd_synth(args, cfg) -> None:
    from .data.synth import synth_scene
    from .data.tracks import write_tracks
    from .scene import save_scene

    out = _out(args)
    s = cfg["synth"]
    length = args.track_length or cfg["pipeline"]["n_p"] + cfg["pipeline"]["n_f"]
    (out / "scenes").mkdir(exist_ok=True)
    tracks = []
    for k in range(args.n_scenes):
        syn = synth_scene(s["kind"], s["size"], seed=cfg["seed"] + k, n_agents=s["n_agents"],
                          track_length=length)
        save_scene(syn.scene, out / "scenes" / f"{syn.scene.scene_id}.png")
        for t in syn.tracks:
            # one synthetic step per target-rate frame at the source rate
            tracks.append(t.subset(slice(None), frames=t.frames * s["frame_stride"]))
    write_tracks(tracks, out / "tracks.csv")
    print(f"wrote {args.n_scenes} scenes and {len(tracks)} tracks to {out}")


def cmd_preprocess(args, cfg) -> None:
    from .data.tracks import PipelineConfig, load_tracks, run_pipeline, write_discards, write_windows
    from .scene import manifest_path

    tracks = load_tracks(_need(args.tracks, "track file"))
    pcfg = PipelineConfig(**cfg["pipeline"])
    homographies = {}
    if args.scenes:
        for sid in sorted({t.scene_id for t in tracks}):
            mpath = manifest_path(Path(args.scenes) / f"{sid}.png")
            if not mpath.exists():
                raise ConfigError(f"missing scene manifest {mpath}")
            h = json.loads(mpath.read_text()).get("homography")
            if h is not None:
                homographies[sid] = np.asarray(h, dtype=np.float64).reshape(3, 3)
    elif pcfg.coords == "world":
        raise ConfigError("world coordinates need --scenes with homographies in the manifests")
    result = run_pipeline(tracks, pcfg, homographies)
    out = _out(args)
    write_windows(result.windows, out / "windows.jsonl")
    write_discards(result.discards, out / "discards.csv")
    summary = result.summary()
    (out / "preprocess_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"tracks in: {summary['tracks_in']}  positions in: {summary['positions_in']}")
    print(f"windows out: {summary['windows_out']}  (length {pcfg.n_p + pcfg.n_f})")
    for reason, n in summary["discards"].items():
        print(f"discarded [{reason}]: {n}")


def cmd_train(args, cfg) -> None:
    from .data.tracks import read_windows
    from .training import TrainConfig, fit

    windows = read_windows(_need(args.windows, "window file"))
    if not windows:
        raise DataError(f"{args.windows}: no windows")
    t = cfg["train"]
    samples, scenes = _samples(windows, _need(args.scenes, "scene directory"), t["sigma_h"])
    n_classes = next(iter(scenes.values())).n_classes
    mcfg = _model_config(cfg, n_classes)
    tcfg = TrainConfig(**t, temperature=mcfg.temperature, seed=cfg["seed"],
                       waypoint_frames=mcfg.waypoint_frames)
    out = _out(args)
    result = fit(samples, mcfg, tcfg, out_dir=out,
                 on_epoch=lambda e, row, m: print(f"epoch {e} total {row['total']:.6f}") and False)
    print(f"saved {out / 'model.ckpt'} after {len(result.curve)} epochs")


def _load_model(args, cfg):
    from .model import YNet

    ckpt = _need(args.checkpoint, "checkpoint")
    model = YNet.load(ckpt)
    want = tuple(cfg["model"]["waypoint_frames"])
    if args.waypoints is not None and want != model.config.waypoint_frames:
        raise ConfigError(f"--waypoints {list(want)} does not match checkpoint waypoints "
                          f"{list(model.config.waypoint_frames)}")
    if cfg["pipeline"]["n_f"] != model.config.n_f or cfg["pipeline"]["n_p"] != model.config.n_p:
        raise ConfigError(f"config n_p/n_f ({cfg['pipeline']['n_p']}/{cfg['pipeline']['n_f']}) does not match "
                          f"checkpoint ({model.config.n_p}/{model.config.n_f})")
    model.config.temperature = float(cfg["model"]["temperature"])
    model.config.validate()
    return model, ckpt


def _train_settings(ckpt: Path, cfg: dict) -> dict:
    """sigma_h/alpha/beta: the run's train_config.json unless the config file sets them."""
    t = dict(cfg["train"])
    saved = ckpt.parent / "train_config.json"
    if saved.exists():
        stored = json.loads(saved.read_text())
        for k in ("sigma_h", "alpha", "beta"):
            if t[k] == DEFAULTS["train"][k] and k in stored:
                t[k] = stored[k]
    return t


def _predict(model, samples, scenes, cfg, t, use_ttst, use_cws, k_e, k_a):
    from .predict import Predictor, SampleBudget

    p = cfg["predict"]
    budget = SampleBudget(k_e, k_a, p["n_mc"], cfg["seed"])
    pred = Predictor(model, budget, use_ttst, use_cws, t["sigma_h"], t["alpha"], t["beta"])
    sets = pred.predict(samples)
    return [ps.scaled(scenes[s.scene_id].downsample_factor) for ps, s in zip(sets, samples)]


def cmd_predict(args, cfg) -> None:
    from .data.tracks import read_windows
    from .predict import write_predictions

    model, ckpt = _load_model(args, cfg)
    t = _train_settings(ckpt, cfg)
    windows = read_windows(_need(args.windows, "window file"))
    samples, scenes = _samples(windows, _need(args.scenes, "scene directory"), t["sigma_h"])
    p = cfg["predict"]
    sets = _predict(model, samples, scenes, cfg, t, p["use_ttst"], p["use_cws"], p["k_e"], p["k_a"])
    out = _out(args)
    write_predictions(sets, out / "predictions.jsonl")
    print(f"wrote {len(sets)} agents x {p['k_e']} x {p['k_a']} hypotheses to {out / 'predictions.jsonl'}")


def _records(sets, windows, scenes: Optional[dict] = None):
    from .evaluation import EvalRecord, to_eval_frame

    truth = {w.key: w for w in windows}
    have = {ps.agent for ps in sets}
    missing = sorted(set(truth) - have)
    extra = sorted(have - set(truth))
    if missing or extra:
        raise DataError(f"agent ids differ between predictions and ground truth; "
                        f"missing predictions: {missing[:20]}; unknown agents: {extra[:20]}")
    records = []
    for ps in sets:
        gt = truth[ps.agent].future
        paths = ps.paths
        units = "pixels"
        scene = (scenes or {}).get(ps.scene)
        if scene is not None and scene.homography is not None:
            gt = to_eval_frame(gt, 1.0, scene.homography)
            paths = to_eval_frame(paths.reshape(-1, 2), 1.0, scene.homography).reshape(paths.shape)
            units = "meters"
        records.append(EvalRecord(ps.agent, gt, paths, units))
    return records


def cmd_evaluate(args, cfg) -> None:
    from .data.tracks import read_windows
    from .evaluation import evaluate_min_of_k
    from .predict import read_predictions
    from .scene import load_scene_dir

    sets = read_predictions(_need(args.predictions, "prediction file"))
    windows = read_windows(_need(args.windows, "window file"))
    scenes = None
    if args.scenes:
        scenes = load_scene_dir(_need(args.scenes, "scene directory"), sorted({ps.scene for ps in sets}))
    summary = evaluate_min_of_k(_records(sets, windows, scenes), args.dataset)
    out = _out(args)
    summary.write_json(out / "summary.json")
    summary.write_agent_csv(out / "agents.csv")
    print(f"min-ADE {summary.min_ade:.4f} {summary.units}  min-FDE {summary.min_fde:.4f} {summary.units}  "
          f"({summary.n_agents} agents, K_e={summary.k_e}, K_a={summary.k_a})")


def cmd_plot(args, cfg) -> None:
    from .data.tracks import read_windows
    from .plotting import render, save_png
    from .predict import read_predictions
    from .scene import load_scene

    windows = {w.key: w for w in read_windows(_need(args.windows, "window file"))}
    sets = {ps.agent: ps for ps in read_predictions(args.predictions)} if args.predictions else {}
    keys = args.agent or sorted(windows)
    unknown = [k for k in keys if k not in windows]
    if unknown:
        raise DataError(f"unknown agents {unknown}")
    model = None
    if args.checkpoint:
        model, ckpt = _load_model(args, cfg)
        t = _train_settings(ckpt, cfg)
    out = _out(args)
    scenes: dict = {}
    for key in keys:
        w = windows[key]
        if w.scene_id not in scenes:
            scenes[w.scene_id] = load_scene(_need(Path(args.scenes) / f"{w.scene_id}.png", "scene map"))
        scene = scenes[w.scene_id]
        preds = sets[key].paths.reshape(-1, *sets[key].paths.shape[2:]) if key in sets else []
        heat = None
        if model is not None:
            from .training import make_sample

            sample = make_sample(scene, w, t["sigma_h"])
            maps = model.decode_goal(model.encode(sample.input), mode="infer").data[0]
            heat = maps[-1] if args.map == "goal" else maps[int(args.map)]
        img = render(scene, w.past, w.future, preds, heat)
        name = key.replace("/", "_") + ".png"
        save_png(img, out / name)
        print(f"wrote {out / name}")


def cmd_ablate(args, cfg) -> None:
    from .data.tracks import read_windows
    from .evaluation import evaluate_min_of_k

    model, ckpt = _load_model(args, cfg)
    t = _train_settings(ckpt, cfg)
    windows = read_windows(_need(args.windows, "window file"))
    samples, scenes = _samples(windows, _need(args.scenes, "scene directory"), t["sigma_h"])
    k_e = cfg["predict"]["k_e"]
    k_a = cfg["predict"]["k_a"]
    rows = []
    grid = [(tt, cc, k_e, k_a) for tt in (True, False) for cc in (True, False)]
    sweep = [(True, True, k_e, a) for a in (1, 2, 5)]
    for name, settings in [("grid", grid), ("k_a_sweep", sweep)]:
        for use_ttst, use_cws, ke, ka in settings:
            sets = _predict(model, samples, scenes, cfg, t, use_ttst, use_cws, ke, ka)
            s = evaluate_min_of_k(_records(sets, windows), "ablation")
            rows.append({"block": name, "ttst": int(use_ttst), "cws": int(use_cws), "K_e": ke, "K_a": ka,
                         "min_ade": repr(s.min_ade), "min_fde": repr(s.min_fde)})
            print(f"{name} ttst={int(use_ttst)} cws={int(use_cws)} K_e={ke} K_a={ka} "
                  f"min-ADE {s.min_ade:.4f} min-FDE {s.min_fde:.4f}")
    out = _out(args)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, help="root seed for every random choice")
    common.add_argument("--k-e", type=int, dest="k_e", help="goal hypotheses per agent")
    common.add_argument("--k-a", type=int, dest="k_a", help="waypoint hypotheses per goal")
    common.add_argument("--temperature", type=float, help="goal/waypoint map temperature at inference")
    common.add_argument("--waypoints", type=_waypoint_list, metavar="i,j,...", help="waypoint frames (1-based)")
    common.add_argument("--no-ttst", action="store_true", help="plain categorical goal sampling")
    common.add_argument("--no-cws", action="store_true", help="unconditioned waypoint sampling")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ynet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic scenes and raw tracks")
    p.add_argument("--n-scenes", type=int, default=1)
    p.add_argument("--track-length", type=int, help="frames per track (default n_p + n_f)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="raw tracks -> windowed dataset + discard log")
    p.add_argument("tracks", help="raw track CSV")
    p.add_argument("--scenes", help="directory of scene PNGs with JSON manifests")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="fit a model on windowed samples")
    p.add_argument("windows", help="windows.jsonl from preprocess")
    p.add_argument("--scenes", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="sample K_e x K_a hypotheses per agent")
    p.add_argument("checkpoint")
    p.add_argument("windows")
    p.add_argument("--scenes", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="min-of-K ADE/FDE")
    p.add_argument("predictions")
    p.add_argument("windows", help="ground-truth windows.jsonl")
    p.add_argument("--scenes", help="scene directory; manifests with a homography switch to meters")
    p.add_argument("--dataset", default="dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", parents=[common], help="render scenes, tracks and hypotheses to PNG")
    p.add_argument("windows")
    p.add_argument("--scenes", required=True)
    p.add_argument("--predictions")
    p.add_argument("--agent", action="append", help="window key scene/agent/index (repeatable)")
    p.add_argument("--checkpoint", help="overlay the model's goal or waypoint map")
    p.add_argument("--map", default="goal", help="'goal' or a waypoint index for the overlay")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("ablate", parents=[common], help="TTST/CWS grid plus a K_a sweep")
    p.add_argument("checkpoint")
    p.add_argument("windows")
    p.add_argument("--scenes", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        print("config: " + json.dumps(cfg, sort_keys=True), file=sys.stderr)
        args.func(args, cfg)
    except YNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # ConfigError/ShapeError/DataError are ValueErrors too; anything left is a usage problem
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
