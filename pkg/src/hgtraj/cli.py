"""Command-line entry point: ``hgtraj <command> ...``.

Exit status: 0 success, 2 invalid input or configuration, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import CheckpointError, NumericError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


# -- helpers -----------------------------------------------------------------------------
def _config(args):
    from .config import load_config
    return load_config(args.config, args.set or [])


def _scene_files(scenes_dir: Path) -> list[Path]:
    files = sorted(p for p in Path(scenes_dir).glob("*.json"))
    if not files:
        raise ValueError(f"no scene files in {scenes_dir}")
    return files


def _load_dataset(scenes_dir: Path, maps_dir: Path | None = None):
    """Scenes from ``scenes_dir/*.json`` and lane graphs from ``maps_dir``
    (default: ``scenes_dir/maps``), keyed by graph id."""
    from .lanegraph import load_lane_graph
    from .scene import load_scene
    scenes = [load_scene(p) for p in _scene_files(scenes_dir)]
    maps_dir = Path(maps_dir) if maps_dir else Path(scenes_dir) / "maps"
    graphs = {}
    for s in scenes:
        if s.lane_graph_ref not in graphs:
            path = maps_dir / f"{s.lane_graph_ref}.json"
            if not path.exists():
                raise ValueError(f"scene {s.scene_id}: lane graph file {path} not found")
            graphs[s.lane_graph_ref] = load_lane_graph(path)
    return scenes, graphs


def _scene_and_map(args):
    from .lanegraph import load_lane_graph
    from .scene import load_scene
    return load_scene(args.scene), load_lane_graph(args.map)


def _encoder(path):
    if not path:
        return None
    from .model.autoencoder import load_autoencoder
    return load_autoencoder(path)


def _print(obj):
    print(json.dumps(obj, indent=1))


# -- commands ----------------------------------------------------------------------------
def cmd_gen_scenes(args) -> int:
    from .lanegraph import save_lane_graph
    from .scene import GeneratorSpec, generate_synthetic_scenes, save_scene
    from .templates import build_template
    cfg = _config(args)
    gen = cfg.generator
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    spec = GeneratorSpec(gen.template, gen.n_rb, gen.n_nrb, gen.n_scenes)
    scenes = generate_synthetic_scenes(spec, cfg.seed)
    g = build_template(gen.template)
    save_lane_graph(g, out / "maps" / f"{g.graph_id}.json")
    for s in scenes:
        save_scene(s, out / f"{s.scene_id}.json")
    print(f"wrote {len(scenes)} scenes and lane graph {g.graph_id!r} to {out}")
    return EXIT_OK


def cmd_build_graph(args) -> int:
    from .heterograph import build_scene_graph, dump_edges, graph_stats
    cfg = _config(args)
    scene, g = _scene_and_map(args)
    hg = build_scene_graph(scene, g, cfg.graph)
    stats = graph_stats(hg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.json").write_text(json.dumps(stats, indent=1))
        (out / "edges.txt").write_text(dump_edges(hg))
        anchors = {aid: [list(a.lane_ids) for a in aps]
                   for aid, aps in zip(hg.agents["rb"].ids, hg.agents["rb"].anchors)}
        (out / "anchors.json").write_text(json.dumps(anchors, indent=1))
    _print(stats)
    return EXIT_OK


def cmd_ssg(args) -> int:
    from .ssg import build_ssg, dump_ssg, project_scene_at, ssg_reduction_ratio
    cfg = _config(args)
    scene, g = _scene_and_map(args)
    local = scene.localized()
    gl = g.translated(-local.origin)
    gate = dict(radius=cfg.graph.projection_radius, heading_tol=cfg.graph.heading_tol)
    edges = build_ssg(project_scene_at(local, gl, args.t, **gate), gl, cfg.graph.ssg_horizon)
    text = dump_ssg(edges)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    try:
        ratio = ssg_reduction_ratio(local, gl, args.t, cfg.graph.ssg_horizon, **gate)
        print(f"reduction ratio vs fully connected: {ratio:.4f}")
    except ValueError as exc:
        print(f"reduction ratio: n/a ({exc})")
    return EXIT_OK


def cmd_anchors(args) -> int:
    from .heterograph import agent_anchors
    from .lanegraph import project_agent
    from .scene import AgentType
    cfg = _config(args)
    scene, g = _scene_and_map(args)
    out = {}
    for tr in scene.tracks:
        if tr.agent_type is not AgentType.RoadBound or (args.agent and tr.agent_id != args.agent):
            continue
        st = tr.current
        proj = project_agent(g, st.position, st.yaw, cfg.graph.projection_radius, cfg.graph.heading_tol,
                             agent_id=tr.agent_id)
        aps = agent_anchors(g, proj, cfg.graph.num_anchors, cfg.graph.anchor_length)
        out[tr.agent_id] = [{"anchor_id": a.anchor_id, "lanes": list(a.lane_ids),
                             "length": round(a.length, 6)} for a in aps]
    if args.agent and args.agent not in out:
        raise ValueError(f"no road-bound agent {args.agent!r} in the scene")
    _print(out)
    return EXIT_OK


def cmd_rasterize(args) -> int:
    from .lanegraph import load_lane_graph
    from .raster import export_patch, rasterize
    g = load_lane_graph(args.map)
    if args.scene:
        from .scene import load_scene
        scene = load_scene(args.scene)
        match = [tr for tr in scene.tracks if tr.agent_id == args.agent]
        if not match:
            raise ValueError(f"agent {args.agent!r} not in scene")
        st = match[0].current
        center, heading = st.position, st.yaw
    else:
        center, heading = np.array([args.x, args.y]), args.heading
    patch = rasterize(g, center, heading)
    files = export_patch(patch, args.out, args.stem)
    print(f"wrote {len(files)} files to {args.out}; occupied pixels per channel: "
          f"{patch.channels.sum(axis=(1, 2)).astype(int).tolist()}")
    return EXIT_OK


def cmd_pretrain_autoencoder(args) -> int:
    from .model.autoencoder import (mean_baseline_mse, pretrain_autoencoder, reconstruction_mse,
                                    sample_patches, save_autoencoder)
    cfg = _config(args)
    pc = cfg.pretrain
    out = Path(args.out or cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    train_p = sample_patches(pc.n_patches, cfg.seed)
    held = sample_patches(pc.n_heldout, cfg.seed + 1) if pc.n_heldout else None
    rows = []

    def log(epoch, loss):
        rows.append((epoch, loss))
        print(f"epoch {epoch:3d}  mse {loss:.5f}", flush=True)

    model, _ = pretrain_autoencoder(train_p, pc.ae, cfg.train.seed, log)
    save_autoencoder(model, out / "autoencoder.ckpt")
    with open(out / "autoencoder_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mse"])
        w.writerows([(e, f"{v:.8g}") for e, v in rows])
    if held is not None:
        mse, base = reconstruction_mse(model, held), mean_baseline_mse(held)
        print(f"held-out mse {mse:.5f}  per-channel-mean baseline {base:.5f}  ratio {mse / base:.3f}")
    return EXIT_OK


def _samples(args, cfg, scenes_dir):
    from .model.train import prepare_samples
    scenes, graphs = _load_dataset(Path(scenes_dir))
    enc = _encoder(args.autoencoder or cfg.paths.autoencoder)
    return prepare_samples(scenes, graphs, cfg.graph, enc, cfg.model.latent_dim, args.threads)


def cmd_train(args) -> int:
    from .config import save_config
    from .model.train import train
    cfg = _config(args)
    out = Path(args.out or cfg.paths.out)
    samples = _samples(args, cfg, args.scenes or cfg.paths.scenes)

    def log(row):
        print(f"epoch {row['epoch']:3d}  lr {row['lr']:.2e}  loss {row['loss']:.4f}  reg {row['reg']:.4f}  "
              f"score {row['score']:.4f}  yaw {row['yaw']:.4f}  minADE_K {row['minADE_K']:.3f}  "
              f"({row['seconds']:.1f}s)", flush=True)

    train(samples, cfg.model, cfg.train, out, cfg.graph, log)
    save_config(cfg, out / "config.json")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .config import from_dict
    from .heterograph import GraphConfig
    from .metrics import save_predictions
    from .model.train import load_model, predict
    cfg = _config(args)
    model, meta = load_model(args.model)
    graph = from_dict(GraphConfig, meta["graph_config"]) if meta.get("graph_config") else cfg.graph
    cfg = dataclasses.replace(cfg, graph=graph, model=model.cfg)
    samples = _samples(args, cfg, args.scenes or cfg.paths.scenes)
    preds = predict(model, samples)
    save_predictions(preds, args.out)
    print(f"wrote {len(preds)} agent predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import MetricError, evaluate, load_predictions
    cfg = _config(args)
    preds = load_predictions(args.predictions)
    ks = tuple(args.k) if args.k else cfg.eval.ks
    if preds:
        K = min(len(p.scores) for p in preds)
        if max(ks) > K:
            raise MetricError(f"k={max(ks)} exceeds the {K} predicted modes")
    graphs = None
    if args.scenes:
        scenes, maps = _load_dataset(Path(args.scenes))
        graphs = {s.scene_id: maps[s.lane_graph_ref].translated(-s.localized().origin) for s in scenes}
    report = evaluate(preds, ks, graphs, args.miss_mode or cfg.eval.miss_mode)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(report.to_csv())
        (out / "per_agent.csv").write_text(report.per_agent_csv())
    print(report.table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    results = run_suite(lambda r: print(f"{'ok  ' if r.ok else 'FAIL'}  {r.name:28s} "
                                        f"rel.err {r.error:.2e} (tol {r.tol:.0e})  {r.seconds:.2f}s",
                                        flush=True))
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return EXIT_NUMERIC if bad else EXIT_OK


# -- parser ------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hgtraj", description="Heterogeneous-graph trajectory prediction")
    p.add_argument("--threads", type=int, default=1, help="worker cap for per-scene work (1 = deterministic)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        if config:
            sp.add_argument("--config", help="JSON run configuration")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a configuration value, e.g. model.hidden_dim=64")
        return sp

    sp = add("gen-scenes", cmd_gen_scenes, "generate synthetic scenes and their lane graph")
    sp.add_argument("--out", required=True)

    for name, fn, help_ in (("build-graph", cmd_build_graph, "build the heterogeneous graph of a scene"),
                            ("ssg", cmd_ssg, "semantic scene graph of a scene at one timestep"),
                            ("anchors", cmd_anchors, "anchor paths of the road-bound agents")):
        sp = add(name, fn, help_)
        sp.add_argument("--scene", required=True)
        sp.add_argument("--map", required=True)
        if name == "build-graph":
            sp.add_argument("--out")
        if name == "ssg":
            sp.add_argument("--t", type=int, default=0)
            sp.add_argument("--out")
        if name == "anchors":
            sp.add_argument("--agent")

    sp = add("rasterize", cmd_rasterize, "render a 10-channel map patch", config=False)
    sp.add_argument("--map", required=True)
    sp.add_argument("--scene")
    sp.add_argument("--agent")
    sp.add_argument("--x", type=float, default=0.0)
    sp.add_argument("--y", type=float, default=0.0)
    sp.add_argument("--heading", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stem", default="patch")

    sp = add("pretrain-autoencoder", cmd_pretrain_autoencoder, "train the map autoencoder")
    sp.add_argument("--out")

    for name, fn, help_ in (("train", cmd_train, "train the trajectory model"),
                            ("predict", cmd_predict, "write predictions for a scene directory")):
        sp = add(name, fn, help_)
        sp.add_argument("--scenes")
        sp.add_argument("--autoencoder")
        sp.add_argument("--out", required=name == "predict")
        if name == "predict":
            sp.add_argument("--model", required=True)

    sp = add("eval", cmd_eval, "metric report for a prediction file")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--scenes", help="scene directory, enables the off-road rate")
    sp.add_argument("--k", type=int, nargs="+")
    sp.add_argument("--miss-mode", choices=("all", "any"))
    sp.add_argument("--out")

    add("gradcheck", cmd_gradcheck, "finite-difference gradient suite", config=False)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
