"""Winner-takes-all regression, max-margin scoring and anchor-heading loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor
from ..autodiff import ops as T
from ..heterograph import AGENT_KINDS, HeteroGraph
from ..lanegraph import heading_along_anchor
from .network import ModelConfig, Output

DEGENERATE_STEP = 1e-9


@dataclass
class LossResult:
    total: Tensor
    reg: Tensor
    score: Tensor
    yaw: Tensor
    winners: dict[str, np.ndarray] = field(default_factory=dict)   # per supervised agent
    supervised: dict[str, np.ndarray] = field(default_factory=dict)  # agent rows

    def breakdown(self) -> dict[str, float]:
        return {"loss": self.total.item(), "reg": self.reg.item(),
                "score": self.score.item(), "yaw": self.yaw.item()}


def supervised_rows(hg: HeteroGraph, kind: str) -> np.ndarray:
    """Target agents with a complete ground-truth future."""
    ag = hg.agents[kind]
    if len(ag) == 0:
        return np.zeros(0, dtype=np.int64)
    ok = ag.is_target & np.isfinite(ag.future).all(axis=(1, 2))
    return np.flatnonzero(ok)


def select_winner(traj: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Mode with the least final displacement error; ties go to the lower index."""
    fde = np.linalg.norm(traj[:, :, -1] - gt[:, None, -1], axis=-1)
    return np.argmin(fde, axis=1)


def yaw_term(theta_anchor, theta) -> Tensor:
    """Elementwise 1 - cos(theta_anchor - theta)."""
    return 1.0 - T.cos(T.sub(theta_anchor, theta))


def margin_term(scores: Tensor, winner: np.ndarray, margin: float) -> Tensor:
    """Per-agent sum over non-winning modes of max(0, s_k + margin - s_win)."""
    n, K = scores.shape
    rows = np.arange(n)
    s_win = scores[rows, winner].reshape(n, 1)
    mask = np.ones((n, K))
    mask[rows, winner] = 0.0
    return (T.relu(scores + margin - s_win) * mask).sum(axis=1)


def step_headings(points: Tensor, start: np.ndarray, start_yaw: np.ndarray) -> Tensor:
    """Heading of each predicted step p_t - p_{t-1} with p_0 = ``start``.

    A zero-length step reuses the heading of the previous step; before the
    first real step the agent's current yaw is used.
    """
    n, F, _ = points.shape
    prev = T.concat([Tensor(start.reshape(n, 1, 2)), points[:, :-1]], axis=1)
    d = points - prev
    deg = np.linalg.norm(d.data, axis=-1) < DEGENERATE_STEP
    keep = (~deg).astype(np.float64)[..., None]
    safe = d * keep + deg[..., None] * np.array([1.0, 0.0])
    raw = T.atan2(safe[:, :, 1], safe[:, :, 0])
    src = np.where(~deg, np.arange(F)[None, :], -1)
    src = np.maximum.accumulate(src, axis=1)   # last real step at or before t
    ext = T.concat([Tensor(np.asarray(start_yaw, dtype=np.float64).reshape(n, 1)), raw], axis=1)
    return ext[np.arange(n)[:, None], src + 1]


def compute_loss(out: Output, hg: HeteroGraph, cfg: ModelConfig) -> LossResult:
    reg_sum, score_sum, yaw_sum = Tensor(0.0), Tensor(0.0), Tensor(0.0)
    n_reg = n_yaw = 0
    winners, sup = {}, {}
    for kind in AGENT_KINDS:
        idx = supervised_rows(hg, kind)
        sup[kind] = idx
        if len(idx) == 0:
            winners[kind] = np.zeros(0, dtype=np.int64)
            continue
        ag = hg.agents[kind]
        gt = ag.future[idx]
        traj = out.traj[kind][idx]
        kstar = select_winner(traj.data, gt)
        winners[kind] = kstar
        rows = np.arange(len(idx))
        win = traj[rows, kstar]                                   # (n, 12, 2)
        reg_sum = reg_sum + T.smooth_l1(win, gt, 1.0, "none").mean(axis=(1, 2)).sum()
        score_sum = score_sum + margin_term(out.score[kind][idx], kstar, cfg.margin).sum()
        n_reg += len(idx)
        if kind != "rb":
            continue
        has = np.array([len(ag.anchors[a]) > 0 for a in idx], dtype=bool)
        if not has.any():
            continue
        sel = np.flatnonzero(has)
        pts = win[sel]
        theta = step_headings(pts, ag.position[idx[sel]], ag.yaw[idx[sel]])
        target = np.empty(theta.shape)
        for r, s in enumerate(sel):
            a = idx[s]
            anchor = ag.anchors[a][out.slot_anchor[a, kstar[s]]]
            for t in range(pts.shape[1]):
                target[r, t] = heading_along_anchor(anchor, pts.data[r, t])
        yaw_sum = yaw_sum + yaw_term(target, theta).mean(axis=1).sum()
        n_yaw += len(sel)
    reg = reg_sum * (1.0 / max(n_reg, 1))
    score = score_sum * (1.0 / max(n_reg, 1))
    yaw = yaw_sum * (1.0 / max(n_yaw, 1))
    total = reg + cfg.w_score * score + cfg.w_yaw * yaw
    return LossResult(total, reg, score, yaw, winners, sup)
