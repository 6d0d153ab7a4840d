"""The heterogeneous GNN: embeddings, message-passing stages, anchor read-out
and the per-mode decoder heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import MLP, Module, Tensor
from ..autodiff import ops as T
from ..heterograph import (AGENT_KINDS, EdgeKind, HeteroGraph, anchor_kind, feature_width,
                           fusion_kinds, map_kinds, merge_kinds, ssg_kinds, temporal_kinds)
from ..scene import FUTURE
from .layers import EGCN, GATv2, StackedMLP, time_encoding

AGENT_IN = 5   # x, y, vx, vy, valid
MAP_IN = 4     # x, y, dx, dy


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 128
    num_heads: int = 4
    num_modes: int = 10
    agent_rounds: int = 1        # internal agent/map rounds before fusion
    fusion_rounds: int = 1       # internal agent/map rounds after the cross-edges
    latent_dim: int = 128
    dropout_map: float = 0.5
    edge_hidden: int = 64
    decoder_hidden: int = 128
    pos_scale: float = 20.0      # metres per unit for positions and distances
    vel_scale: float = 10.0
    out_scale: float = 10.0      # metres per decoder output unit
    w_score: float = 1.0
    w_yaw: float = 1.0
    margin: float = 0.2

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.num_modes < 1:
            raise ValueError("num_modes must be positive")
        if not 0.0 <= self.dropout_map < 1.0:
            raise ValueError("dropout_map must lie in [0, 1)")


@dataclass
class Output:
    """Raw network output. Trajectories are (A, K, 12, 2) in the graph's
    local frame; scores are (A, K). ``slot_anchor`` maps rb mode slots to
    anchor indices (-1 when the agent has no anchors)."""
    traj: dict[str, Tensor]
    score: dict[str, Tensor]
    slot_anchor: np.ndarray
    z_agent: dict[str, Tensor]
    z_anchor: Tensor  # (K, A_rb, hidden)


def _key(kind: EdgeKind) -> str:
    return str(kind)


def slot_assignment(num_anchors: list[int], K: int) -> np.ndarray:
    """Cyclic padding: slot k of an agent with n anchors uses anchor k mod n."""
    out = np.full((len(num_anchors), K), -1, dtype=np.int64)
    for a, n in enumerate(num_anchors):
        if n:
            out[a] = np.arange(K) % n
    return out


class HGNet(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        h, heads, K = cfg.hidden_dim, cfg.num_heads, cfg.num_modes
        self.node_embed = {"rb": MLP([AGENT_IN, h, h], rng), "nrb": MLP([AGENT_IN, h, h], rng),
                           "m": MLP([MAP_IN, h, h], rng)}
        kinds = temporal_kinds() + ssg_kinds() + map_kinds() + fusion_kinds() + merge_kinds()
        self.edge_embed = {_key(k): MLP([feature_width(k), cfg.edge_hidden, h], rng) for k in kinds}
        self.edge_embed["anchor"] = MLP([3, cfg.edge_hidden, h], rng)

        def agent_round():
            return ({_key(k): EGCN(h, h, rng) for k in temporal_kinds()}
                    | {_key(k): GATv2(h, h, heads, rng) for k in ssg_kinds()})

        def map_round():
            return {_key(k): EGCN(h, h, rng) for k in map_kinds()}

        self.agent_stage = [agent_round() for _ in range(cfg.agent_rounds)]
        self.map_stage = [map_round() for _ in range(cfg.agent_rounds)]
        self.fusion = {_key(k): GATv2(h, h, heads, rng) for k in fusion_kinds()}
        self.fusion_agent = [agent_round() for _ in range(cfg.fusion_rounds)]
        self.fusion_map = [map_round() for _ in range(cfg.fusion_rounds)]
        self.map_fuse = {k: MLP([h + cfg.latent_dim, h, h], rng) for k in AGENT_KINDS}
        self.merge = {_key(k): GATv2(h, h, heads, rng) for k in merge_kinds()}
        self.anchor_read = GATv2(h, h, heads, rng, residual=False)
        dh = cfg.decoder_hidden
        self.rb_traj = StackedMLP(K, 2 * h, dh, 2 * FUTURE, rng)
        self.rb_score = StackedMLP(K, 2 * h, dh, 1, rng)
        self.nrb_traj = StackedMLP(K, h, dh, 2 * FUTURE, rng)
        self.nrb_score = StackedMLP(K, h, dh, 1, rng)

    # -- embeddings --------------------------------------------------------------------
    def embed_nodes(self, hg: HeteroGraph) -> dict[str, Tensor]:
        c = self.cfg
        out = {}
        for kind in AGENT_KINDS:
            nt = hg.nodes[kind]
            x = np.concatenate([nt.feat[:, :2] / c.pos_scale, nt.feat[:, 2:] / c.vel_scale,
                                nt.valid[:, None].astype(np.float64)], axis=1).reshape(-1, AGENT_IN)
            out[kind] = self.node_embed[kind](Tensor(x)) + time_encoding(nt.t, c.hidden_dim)
        m = hg.nodes["m"].feat.reshape(-1, MAP_IN).copy()
        m[:, :2] /= c.pos_scale
        out["m"] = self.node_embed["m"](Tensor(m))
        return out

    def embed_edges(self, hg: HeteroGraph) -> dict[str, Tensor]:
        c = self.cfg
        out = {}
        for kind, es in hg.edges.items():
            f = es.feat.copy()
            if kind.rel == "ssg":
                f[:, 3] /= c.pos_scale
            else:
                f /= c.pos_scale
            name = "anchor" if kind.rel.startswith("anchor") else _key(kind)
            out[_key(kind)] = self.edge_embed[name](Tensor(f))
        return out

    # -- stages ---------------------------------------------------------------------------
    @staticmethod
    def _update(h: dict[str, Tensor], layers: dict, hg: HeteroGraph, e: dict[str, Tensor],
                kinds: list[EdgeKind]) -> dict[str, Tensor]:
        """One simultaneous step: every destination kind gets the sum of the
        residual terms of all its incoming relations, computed from the old
        states."""
        new = dict(h)
        for dst in {k.dst for k in kinds}:
            terms = []
            for k in kinds:
                if k.dst != dst:
                    continue
                es = hg.edges[k]
                if len(es) == 0:
                    continue
                layer = layers[_key(k)]
                fn = layer.delta if isinstance(layer, EGCN) else layer.aggregate
                terms.append(fn(h[k.src], h[dst], es.src, es.dst, e[_key(k)]))
            for t in terms:
                new[dst] = new[dst] + t
        return new

    def fuse_map_latent(self, h: dict[str, Tensor], hg: HeteroGraph, z_map: dict[str, np.ndarray],
                        train: bool, rng: np.random.Generator | None) -> dict[str, Tensor]:
        out = dict(h)
        for kind in AGENT_KINDS:
            z = np.asarray(z_map[kind], dtype=np.float64)
            if z.shape != (len(hg.agents[kind]), self.cfg.latent_dim):
                raise ValueError(f"z_map[{kind}] has shape {z.shape}, expected "
                                 f"({len(hg.agents[kind])}, {self.cfg.latent_dim})")
            per_node = T.gather_rows(Tensor(z), hg.nodes[kind].agent)
            dropped = T.dropout(per_node, self.cfg.dropout_map, train, rng)
            out[kind] = self.map_fuse[kind](T.concat([h[kind], dropped], axis=1))
        return out

    def run_stages(self, hg: HeteroGraph, z_map: dict[str, np.ndarray] | None = None,
                   train: bool = False, rng: np.random.Generator | None = None):
        """Return (z_agent per kind, z_anchor (K, A_rb, hidden), slot map)."""
        c = self.cfg
        if z_map is None:
            z_map = {k: np.zeros((len(hg.agents[k]), c.latent_dim)) for k in AGENT_KINDS}
        h = self.embed_nodes(hg)
        e = self.embed_edges(hg)
        agent_kinds = temporal_kinds() + ssg_kinds()
        for ar, mr in zip(self.agent_stage, self.map_stage):
            h = self._update(h, ar, hg, e, agent_kinds)
            h = self._update(h, mr, hg, e, map_kinds())
        h = self._update(h, self.fusion, hg, e, fusion_kinds())
        for ar, mr in zip(self.fusion_agent, self.fusion_map):
            h = self._update(h, ar, hg, e, agent_kinds)
            h = self._update(h, mr, hg, e, map_kinds())
        h = self.fuse_map_latent(h, hg, z_map, train, rng)
        h = self._update(h, self.merge, hg, e, merge_kinds())
        z_agent = {k: T.gather_rows(h[k], hg.agents[k].latest) for k in AGENT_KINDS}
        z_anchor, slots = self.anchor_embeddings(hg, h, z_agent["rb"], e)
        return z_agent, z_anchor, slots

    def anchor_embeddings(self, hg: HeteroGraph, h: dict[str, Tensor], z_rb: Tensor,
                          e: dict[str, Tensor]) -> tuple[Tensor, np.ndarray]:
        """Attention read-out of the map nodes on every anchor into the
        agent's latest state; the agent nodes themselves are not updated."""
        K, dim = hg.num_anchors, self.cfg.hidden_dim
        A = len(hg.agents["rb"])
        row_of = np.full(hg.num_nodes("rb"), -1, dtype=np.int64)
        row_of[hg.agents["rb"].latest] = np.arange(A)
        src, dst, feats = [], [], []
        for j in range(K):
            es = hg.edges[anchor_kind(j)]
            src.append(es.src)
            dst.append(j * A + row_of[es.dst])
            feats.append(e[_key(anchor_kind(j))])
        src, dst = np.concatenate(src), np.concatenate(dst)
        queries = T.concat([z_rb] * K, axis=0) if A else Tensor(np.zeros((0, dim)))
        per_anchor = self.anchor_read(h["m"], queries, src, dst, T.concat(feats, axis=0))
        slots = slot_assignment([len(a) for a in hg.agents["rb"].anchors], self.cfg.num_modes)
        # slot k of agent a reads anchor j = slots[a, k]; row K*A is the zero vector
        flat = np.where(slots >= 0, slots * A + np.arange(A)[:, None], K * A)
        table = T.concat([per_anchor, Tensor(np.zeros((1, dim)))], axis=0)
        z_anchor = T.gather_rows(table, flat.T.reshape(-1)).reshape(self.cfg.num_modes, A, dim)
        return z_anchor, slots

    # -- decoding -----------------------------------------------------------------------
    def decode(self, z_agent: dict[str, Tensor], z_anchor: Tensor, hg: HeteroGraph):
        K = self.cfg.num_modes
        traj, score = {}, {}
        for kind in AGENT_KINDS:
            z = z_agent[kind]
            A = z.shape[0]
            x = T.stack([z] * K, axis=0)                      # (K, A, h)
            if kind == "rb":
                x = T.concat([x, z_anchor], axis=2)
                raw, s = self.rb_traj(x), self.rb_score(x)
            else:
                raw, s = self.nrb_traj(x), self.nrb_score(x)
            off = raw.transpose(1, 0, 2).reshape(A, K * FUTURE, 2)
            yaw = hg.agents[kind].yaw
            c, sn = np.cos(yaw), np.sin(yaw)
            rot_t = np.stack([np.stack([c, sn], -1), np.stack([-sn, c], -1)], 1)  # R^T per agent
            world = (off @ rot_t) * self.cfg.out_scale
            world = world.reshape(A, K, FUTURE, 2) + hg.agents[kind].position[:, None, None, :]
            traj[kind] = world
            score[kind] = s.reshape(K, A).transpose(1, 0)
        return traj, score

    def __call__(self, hg: HeteroGraph, z_map: dict[str, np.ndarray] | None = None,
                 train: bool = False, rng: np.random.Generator | None = None) -> Output:
        if hg.num_anchors != self.cfg.num_modes:
            raise ValueError(f"graph has {hg.num_anchors} anchor slots, model expects {self.cfg.num_modes}")
        z_agent, z_anchor, slots = self.run_stages(hg, z_map, train, rng)
        traj, score = self.decode(z_agent, z_anchor, hg)
        return Output(traj, score, slots, z_agent, z_anchor)
