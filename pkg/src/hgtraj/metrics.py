"""minADE / minFDE / miss rate / off-road rate, the metric report and the
prediction file format."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lanegraph import LaneGraph, drivable_mask

MISS_THRESHOLD = 2.0


class MetricError(ValueError):
    pass


def _check(trajs, scores, gt, k) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    trajs = np.asarray(trajs, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if trajs.ndim != 3 or trajs.shape[2] != 2:
        raise MetricError(f"trajectories must be (K, T, 2), got {trajs.shape}")
    if scores.shape != (trajs.shape[0],):
        raise MetricError(f"expected {trajs.shape[0]} scores, got shape {scores.shape}")
    if gt.shape != trajs.shape[1:]:
        raise MetricError(f"ground truth shape {gt.shape} does not match {trajs.shape[1:]}")
    if not isinstance(k, (int, np.integer)) or k <= 0:
        raise MetricError(f"k must be a positive integer, got {k!r}")
    if k > trajs.shape[0]:
        raise MetricError(f"k={k} exceeds the {trajs.shape[0]} predicted modes")
    return trajs, scores, gt


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores; equal scores keep mode order."""
    return np.argsort(-np.asarray(scores), kind="stable")[:k]


def min_ade(trajs, scores, gt, k: int) -> float:
    trajs, scores, gt = _check(trajs, scores, gt, k)
    sel = trajs[top_k(scores, k)]
    return float(np.linalg.norm(sel - gt, axis=-1).mean(axis=1).min())


def min_fde(trajs, scores, gt, k: int) -> float:
    trajs, scores, gt = _check(trajs, scores, gt, k)
    sel = trajs[top_k(scores, k)]
    return float(np.linalg.norm(sel[:, -1] - gt[-1], axis=-1).min())


def is_miss(trajs, scores, gt, k: int, mode: str = "all") -> bool:
    """``mode="all"``: a miss when every top-k mode strays more than 2 m
    from the ground truth at some step. ``mode="any"``: a miss when at least
    one of them does."""
    trajs, scores, gt = _check(trajs, scores, gt, k)
    worst = np.linalg.norm(trajs[top_k(scores, k)] - gt, axis=-1).max(axis=1)
    missed = worst > MISS_THRESHOLD
    if mode == "all":
        return bool(missed.all())
    if mode == "any":
        return bool(missed.any())
    raise MetricError(f"unknown miss mode {mode!r}")


def miss_rate_2(cases, k: int, mode: str = "all") -> float:
    """Fraction of (trajs, scores, gt) cases that are misses."""
    cases = list(cases)
    if not cases:
        raise MetricError("no agents to evaluate")
    return float(np.mean([is_miss(t, s, g, k, mode) for t, s, g in cases]))


def offroad_rate(trajs, g: LaneGraph) -> float:
    """Fraction of trajectories with at least one point off the drivable area."""
    trajs = np.asarray(trajs, dtype=np.float64)
    if trajs.ndim == 2:
        trajs = trajs[None]
    if len(trajs) == 0:
        raise MetricError("no trajectories")
    inside = drivable_mask(g, trajs.reshape(-1, 2)).reshape(trajs.shape[:2])
    return float((~inside.all(axis=1)).mean())


# -- prediction file ---------------------------------------------------------------------
@dataclass
class AgentPrediction:
    scene_id: str
    agent_id: str
    agent_type: str
    trajs: np.ndarray             # (K, 12, 2), local frame
    scores: np.ndarray            # (K,)
    anchor_ids: list[int | None] = field(default_factory=list)
    gt: np.ndarray | None = None  # (12, 2) when known

    def to_dict(self) -> dict:
        d = {"scene_id": self.scene_id, "agent_id": self.agent_id, "agent_type": self.agent_type,
             "modes": [{"score": float(s), "points": t.tolist(),
                        **({"anchor_id": a} if a is not None else {})}
                       for s, t, a in zip(self.scores, self.trajs, self._anchors())]}
        if self.gt is not None:
            d["ground_truth"] = self.gt.tolist()
        return d

    def _anchors(self):
        return self.anchor_ids if self.anchor_ids else [None] * len(self.scores)

    @classmethod
    def from_dict(cls, d: dict) -> AgentPrediction:
        try:
            modes = d["modes"]
            trajs = np.array([m["points"] for m in modes], dtype=np.float64)
            scores = np.array([m["score"] for m in modes], dtype=np.float64)
            anchors = [m.get("anchor_id") for m in modes]
            gt = np.array(d["ground_truth"], dtype=np.float64) if "ground_truth" in d else None
            return cls(d.get("scene_id", ""), d["agent_id"], d.get("agent_type", ""), trajs, scores,
                       anchors if any(a is not None for a in anchors) else [], gt)
        except (KeyError, TypeError, ValueError) as exc:
            raise MetricError(f"malformed prediction entry: {exc}") from exc


def save_predictions(preds: list[AgentPrediction], path: str | Path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in preds], indent=1))


def load_predictions(path: str | Path) -> list[AgentPrediction]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MetricError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise MetricError(f"{path}: expected a list of agent predictions")
    return [AgentPrediction.from_dict(d) for d in raw]


# -- report ------------------------------------------------------------------------------
@dataclass
class MetricReport:
    ks: tuple[int, ...]
    values: dict[str, float]
    per_agent: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key, val in self.values.items():
            w.writerow([key, f"{val:.6f}"])
        return buf.getvalue()

    def per_agent_csv(self) -> str:
        if not self.per_agent:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.per_agent[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(self.per_agent)
        return buf.getvalue()

    def table(self) -> str:
        width = max(len(k) for k in self.values)
        lines = [f"{'metric'.ljust(width)}  value", f"{'-' * width}  --------"]
        lines += [f"{k.ljust(width)}  {v:8.4f}" for k, v in self.values.items()]
        return "\n".join(lines)


def evaluate(preds: list[AgentPrediction], ks=(1, 5, 10), lane_graphs: dict[str, LaneGraph] | None = None,
             miss_mode: str = "all") -> MetricReport:
    """Metrics over the predictions that carry ground truth. ``lane_graphs``
    maps scene ids to lane graphs in the prediction frame (for ORR)."""
    scored = [p for p in preds if p.gt is not None]
    if not scored:
        raise MetricError("no predictions with ground truth to evaluate")
    ks = tuple(sorted(set(int(k) for k in ks)))
    values: dict[str, float] = {}
    rows = []
    for p in scored:
        row = {"scene_id": p.scene_id, "agent_id": p.agent_id}
        for k in ks:
            row[f"minADE_{k}"] = min_ade(p.trajs, p.scores, p.gt, k)
            row[f"minFDE_{k}"] = min_fde(p.trajs, p.scores, p.gt, k)
            row[f"MR_2_{k}"] = float(is_miss(p.trajs, p.scores, p.gt, k, miss_mode))
        rows.append(row)
    for k in ks:
        for name in ("minADE", "minFDE", "MR_2"):
            values[f"{name}_{k}"] = float(np.mean([r[f"{name}_{k}"] for r in rows]))
    if lane_graphs is not None:
        rates, counts = [], []
        for p in preds:
            if p.scene_id in lane_graphs:
                rates.append(offroad_rate(p.trajs, lane_graphs[p.scene_id]))
                counts.append(len(p.trajs))
        if rates:
            values["ORR"] = float(np.average(rates, weights=counts))
    return MetricReport(ks, values, rows)
