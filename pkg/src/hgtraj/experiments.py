"""Desk-scale experiment drivers shared by ``scripts/`` and the acceptance
tests: the y_fork overfit run and its branch-coverage read-out."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .lanegraph import LaneGraph
from .metrics import AgentPrediction, evaluate
from .model.autoencoder import MapAutoencoder
from .model.network import ModelConfig
from .model.train import Sample, TrainConfig, TrainResult, predict, prepare_samples, train
from .scene import AgentType, GeneratorSpec, Scene, generate_synthetic_scenes
from .templates import build_template

BRANCHES = ("BL", "BR")
BRANCH_TOL = 2.0

# Overfitting eight scenes wants many small steps and a slow decay; the
# default schedule would halve the rate 40 times over 200 epochs.
OVERFIT_TRAIN = TrainConfig(epochs=200, lr=1e-3, lr_decay=0.5, lr_every=50, weight_decay=0.0,
                            batch_agents=1, scenes_per_pass=1, checkpoint_every=50, seed=0)
OVERFIT_MODEL = ModelConfig()


def branch_distances(g: LaneGraph, point) -> dict[str, float]:
    return {b: g[b].project(point)[0] for b in BRANCHES}


def branch_of(g: LaneGraph, point, tol: float = BRANCH_TOL) -> str | None:
    """The branch whose centerline is within ``tol`` of ``point`` while the
    other one is not; None near the fork or off both branches."""
    d = branch_distances(g, point)
    near = [b for b in BRANCHES if d[b] <= tol]
    return near[0] if len(near) == 1 else None


def fork_scenes(n: int = 8, seed: int = 0, n_rb: int = 2, n_nrb: int = 1) -> list[Scene]:
    """``n`` y_fork scenes whose road-bound futures end on both branches.
    Consecutive generator seeds are tried until that holds."""
    g = build_template("y_fork")
    for s in range(seed, seed + 100):
        scenes = generate_synthetic_scenes(GeneratorSpec("y_fork", n_rb, n_nrb, n), s)
        ends = {branch_of(g, tr.states[-1].position) for sc in scenes for tr in sc.tracks
                if tr.agent_type is AgentType.RoadBound}
        if set(BRANCHES) <= ends:
            return scenes
    raise RuntimeError("no seed in range gives both branch outcomes")


@dataclass
class PreForkCase:
    scene_id: str
    agent_id: str
    gt_branch: str
    covered: dict[str, bool]      # branch -> some mode ends on it


def pre_fork_cases(scenes: list[Scene], samples: list[Sample], preds: list[AgentPrediction]) -> list[PreForkCase]:
    """Road-bound agents still on the trunk at t=0 whose ground truth ends on a
    branch, with the branches their predicted endpoints reach."""
    by_scene = {s.scene_id: s for s in scenes}
    lane_graphs = {s.scene_id: s.lane_graph for s in samples}
    out = []
    for p in preds:
        if p.agent_type != "rb" or p.gt is None:
            continue
        g = lane_graphs[p.scene_id]
        track = by_scene[p.scene_id].localized().track(p.agent_id)
        if g["T"].project(track.current.position)[1] >= g["T"].length - 1e-6:
            continue
        gt_branch = branch_of(g, p.gt[-1])
        if gt_branch is None:
            continue
        reached = {branch_of(g, t[-1]) for t in p.trajs}
        out.append(PreForkCase(p.scene_id, p.agent_id, gt_branch, {b: b in reached for b in BRANCHES}))
    return out


@dataclass
class OverfitOutcome:
    result: TrainResult
    scenes: list[Scene]
    samples: list[Sample]
    preds: list[AgentPrediction]
    metrics: dict[str, float]

    @property
    def loss_reduction(self) -> float:
        h = self.result.history
        return 1.0 - h[-1]["loss"] / h[0]["loss"]


def overfit_run(out_dir: str | Path | None = None, encoder: MapAutoencoder | None = None,
                model_cfg: ModelConfig = OVERFIT_MODEL, cfg: TrainConfig = OVERFIT_TRAIN,
                n_scenes: int = 8, scene_seed: int = 0,
                log: Callable[[dict], None] | None = None) -> OverfitOutcome:
    scenes = fork_scenes(n_scenes, scene_seed)
    g = build_template("y_fork")
    samples = prepare_samples(scenes, {g.graph_id: g}, encoder=encoder, latent_dim=model_cfg.latent_dim)
    result = train(samples, model_cfg, cfg, out_dir, log=log)
    preds = predict(result.model, samples)
    k = model_cfg.num_modes
    report = evaluate(preds, ks=(1, k), lane_graphs={s.scene_id: s.lane_graph for s in samples})
    return OverfitOutcome(result, scenes, samples, preds, report.values)
