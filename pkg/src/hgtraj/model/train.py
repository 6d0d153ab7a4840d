"""Dataset preparation, the training loop, checkpoints and inference."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import Adam, NumericError, load_checkpoint, no_grad, save_checkpoint, step_lr
from ..heterograph import AGENT_KINDS, GraphConfig, HeteroGraph, build_scene_graph, collate
from ..lanegraph import LaneGraph
from ..metrics import AgentPrediction
from ..raster import rasterize
from ..scene import Scene
from .autoencoder import MapAutoencoder
from .loss import compute_loss, supervised_rows
from .network import HGNet, ModelConfig, Output


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_every: int = 5
    weight_decay: float = 0.005
    batch_agents: int = 64       # agents per optimizer step (gradient accumulation)
    scenes_per_pass: int = 4     # scenes collated into one forward pass
    checkpoint_every: int = 5
    seed: int = 0


@dataclass
class Sample:
    scene_id: str
    graph: HeteroGraph
    z_map: dict[str, np.ndarray]
    lane_graph: LaneGraph        # local frame
    origin: np.ndarray


def map_latents(scene: Scene, g_world: LaneGraph, encoder: MapAutoencoder | None,
                latent_dim: int) -> dict[str, np.ndarray]:
    """z_map per agent from a patch at its current pose (zeros without an encoder)."""
    out = {}
    for kind in AGENT_KINDS:
        tracks = [tr for tr in scene.tracks if tr.agent_type.value == kind]
        if encoder is None or not tracks:
            out[kind] = np.zeros((len(tracks), latent_dim))
            continue
        patches = np.stack([rasterize(g_world, tr.current.position, tr.current.yaw).channels
                            for tr in tracks])
        encoder.eval()
        with no_grad():
            out[kind] = encoder.encode(patches).data.copy()
    return out


def prepare_samples(scenes: list[Scene], lane_graphs: dict[str, LaneGraph],
                    graph_cfg: GraphConfig = GraphConfig(), encoder: MapAutoencoder | None = None,
                    latent_dim: int = 128, threads: int = 1) -> list[Sample]:
    """Graphs and cached map latents for world-frame scenes. ``lane_graphs``
    maps each scene's ``lane_graph_ref`` to its world-frame lane graph."""
    if encoder is not None and encoder.cfg.latent_dim != latent_dim:
        raise ValueError(f"encoder latent {encoder.cfg.latent_dim} != model latent {latent_dim}")

    def one(scene: Scene) -> Sample:
        g = lane_graphs[scene.lane_graph_ref]
        hg = build_scene_graph(scene, g, graph_cfg)
        origin = scene.localized().origin
        return Sample(scene.scene_id, hg, map_latents(scene, g, encoder, latent_dim),
                      g.translated(-origin), origin)

    for s in scenes:
        if s.lane_graph_ref not in lane_graphs:
            raise ValueError(f"scene {s.scene_id} references unknown lane graph {s.lane_graph_ref}")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, scenes))
    return [one(s) for s in scenes]


def batch(samples: list[Sample]) -> tuple[HeteroGraph, dict[str, np.ndarray]]:
    hg = collate([s.graph for s in samples])
    z = {k: np.concatenate([s.z_map[k] for s in samples]).reshape(-1, samples[0].z_map[k].shape[1])
         for k in AGENT_KINDS}
    return hg, z


def winner_errors(out: Output, hg: HeteroGraph) -> tuple[list[float], list[float]]:
    """minADE_K and minFDE_K (over all modes) for every supervised agent."""
    ade, fde = [], []
    for kind in AGENT_KINDS:
        idx = supervised_rows(hg, kind)
        if len(idx) == 0:
            continue
        d = np.linalg.norm(out.traj[kind].data[idx] - hg.agents[kind].future[idx][:, None], axis=-1)
        ade.extend(d.mean(axis=2).min(axis=1).tolist())
        fde.extend(d[:, :, -1].min(axis=1).tolist())
    return ade, fde


LOG_FIELDS = ["epoch", "lr", "loss", "reg", "score", "yaw", "minADE_K", "minFDE_K", "seconds"]


@dataclass
class TrainResult:
    model: HGNet
    history: list[dict] = field(default_factory=list)


def train(samples: list[Sample], model_cfg: ModelConfig = ModelConfig(), cfg: TrainConfig = TrainConfig(),
          out_dir: str | Path | None = None, graph_cfg: GraphConfig | None = None,
          log: Callable[[dict], None] | None = None) -> TrainResult:
    """Train from scratch. Every optimizer step averages the loss over the
    supervised agents of the accumulated passes."""
    if not samples:
        raise ValueError("training needs at least one scene")
    model = HGNet(model_cfg, cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "train_log.csv", "w", newline="") as f:
            csv.writer(f).writerow(LOG_FIELDS)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        opt.lr = step_lr(cfg.lr, epoch, cfg.lr_decay, cfg.lr_every)
        order = rng.permutation(len(samples))
        sums = dict(loss=0.0, reg=0.0, score=0.0, yaw=0.0)
        n_epoch, pending = 0, 0
        ade, fde = [], []
        opt.zero_grad()
        passes = [order[i:i + cfg.scenes_per_pass] for i in range(0, len(order), cfg.scenes_per_pass)]
        for p, idx in enumerate(passes):
            part = [samples[i] for i in sorted(idx)]
            hg, z = batch(part)
            n = sum(len(supervised_rows(hg, k)) for k in AGENT_KINDS)
            if n:
                res = model(hg, z, train=True, rng=rng)
                lr_ = compute_loss(res, hg, model_cfg)
                terms = lr_.breakdown()
                if not all(np.isfinite(v) for v in terms.values()):
                    raise NumericError(f"non-finite loss in epoch {epoch} on scenes "
                                       f"{[s.scene_id for s in part]}: {terms}")
                (lr_.total * float(n)).backward()
                for key in sums:
                    sums[key] += terms[key] * n
                n_epoch += n
                pending += n
                a, f = winner_errors(res, hg)
                ade += a
                fde += f
            if pending and (pending >= cfg.batch_agents or p == len(passes) - 1):
                opt.step(1.0 / pending)
                opt.zero_grad()
                pending = 0
        row = {"epoch": epoch, "lr": opt.lr, **{k: v / max(n_epoch, 1) for k, v in sums.items()},
               "minADE_K": float(np.mean(ade)) if ade else float("nan"),
               "minFDE_K": float(np.mean(fde)) if fde else float("nan"),
               "seconds": time.perf_counter() - t0}
        history.append(row)
        if log:
            log(row)
        if out is not None:
            with open(out / "train_log.csv", "a", newline="") as f:
                csv.writer(f).writerow([f"{row[k]:.8g}" if isinstance(row[k], float) else row[k]
                                        for k in LOG_FIELDS])
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                save_model(model, out / f"model_epoch{epoch:03d}.ckpt", graph_cfg, epoch)
                save_model(model, out / "model.ckpt", graph_cfg, epoch)
    return TrainResult(model, history)


# -- persistence ---------------------------------------------------------------------------
def save_model(model: HGNet, path: str | Path, graph_cfg: GraphConfig | None = None, epoch: int = 0) -> None:
    meta = {"kind": "hgnet", "model_config": asdict(model.cfg), "epoch": epoch,
            "graph_config": asdict(graph_cfg) if graph_cfg is not None else None}
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path: str | Path) -> tuple[HGNet, dict]:
    state, meta = load_checkpoint(path)
    if meta.get("kind") != "hgnet":
        raise ValueError(f"{path} is not a model checkpoint")
    model = HGNet(ModelConfig(**meta["model_config"]))
    model.load_state_dict(state)
    return model.eval(), meta


# -- inference -----------------------------------------------------------------------------
def predict(model: HGNet, samples: list[Sample], targets_only: bool = True) -> list[AgentPrediction]:
    """Eval-mode predictions in each scene's local frame."""
    model.eval()
    preds = []
    with no_grad():
        for s in samples:
            hg = s.graph
            out = model(hg, s.z_map, train=False)
            for kind in AGENT_KINDS:
                ag = hg.agents[kind]
                for a, agent_id in enumerate(ag.ids):
                    if targets_only and not ag.is_target[a]:
                        continue
                    gt = ag.future[a]
                    anchors = []
                    if kind == "rb":
                        anchors = [int(ag.anchors[a][j].anchor_id) if j >= 0 else None
                                   for j in out.slot_anchor[a]]
                    preds.append(AgentPrediction(
                        s.scene_id, agent_id, kind, out.traj[kind].data[a].copy(),
                        out.score[kind].data[a].copy(), anchors,
                        gt.copy() if np.isfinite(gt).all() else None))
    return preds


def write_history(history: list[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(history, indent=1))
