"""Typed-node, typed-edge spatio-temporal graph built from a scene.

Node kinds are ``rb`` / ``nrb`` agent nodes (one per history slot, five per
agent) and ``m`` map nodes. Edge kinds are ``EdgeKind(src, rel, dst)``
triples; :func:`edge_kinds` lists them all for a given number of anchors.
Every edge carries ``[dist, rel_x, rel_y]`` with ``rel = dst - src``,
except scene-graph edges, which carry ``[relation indicator (3), along_dist]``.
A pair holding more than one relation at a timestep gets a single edge
with several indicator bits set and the smallest distance.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import heading_of, points_to_segments_distance, wrap_angle
from .lanegraph import (ANCHOR_LENGTH, MAP_EXTENT, AnchorPath, LaneGraph, MapNode, Projection,
                        discretize_map, enumerate_anchor_paths)
from .scene import FUTURE, HISTORY, AgentType, Scene
from .ssg import HORIZON, LaneRelations, SsgEdge, build_ssg, project_scene_at

AGENT_KINDS = ("rb", "nrb")
NODE_KINDS = ("rb", "nrb", "m")
MAP_HOPS = 6
SSG_FEATURES = 4
GENERIC_FEATURES = 3


class GraphError(ValueError):
    pass


class EdgeKind(NamedTuple):
    src: str
    rel: str
    dst: str

    def __str__(self) -> str:
        return f"{self.src}-{self.rel}-{self.dst}"


def temporal_kinds() -> list[EdgeKind]:
    return [EdgeKind(k, r, k) for k in AGENT_KINDS for r in ("suc", "pre")]


def ssg_kinds() -> list[EdgeKind]:
    return [EdgeKind(a, "ssg", b) for a in AGENT_KINDS for b in AGENT_KINDS]


def map_kinds() -> list[EdgeKind]:
    out = [EdgeKind("m", f"suc{i}", "m") for i in range(1, MAP_HOPS + 1)]
    out += [EdgeKind("m", f"pre{i}", "m") for i in range(1, MAP_HOPS + 1)]
    return out + [EdgeKind("m", "left", "m"), EdgeKind("m", "right", "m")]


def fusion_kinds() -> list[EdgeKind]:
    return ([EdgeKind(a, "drives_on", "m") for a in AGENT_KINDS]
            + [EdgeKind("m", "gives_traffic_info", a) for a in AGENT_KINDS])


def merge_kinds() -> list[EdgeKind]:
    return [EdgeKind(k, "merge", k) for k in AGENT_KINDS]


def anchor_kind(k: int) -> EdgeKind:
    return EdgeKind("m", f"anchor{k}", "rb")


def edge_kinds(num_anchors: int) -> list[EdgeKind]:
    return (temporal_kinds() + ssg_kinds() + map_kinds() + fusion_kinds() + merge_kinds()
            + [anchor_kind(k) for k in range(num_anchors)])


def feature_width(kind: EdgeKind) -> int:
    return SSG_FEATURES if kind.rel == "ssg" else GENERIC_FEATURES


@dataclass(frozen=True)
class GraphConfig:
    map_step: float = 5.0
    map_extent: float = MAP_EXTENT
    drives_on_radius: float = 20.0
    anchor_radius: float = 2.0
    num_anchors: int = 10
    projection_radius: float = 3.0
    heading_tol: float = math.pi / 3
    ssg_horizon: float = HORIZON
    anchor_length: float = ANCHOR_LENGTH

    def __post_init__(self):
        if self.num_anchors < 1:
            raise ValueError("num_anchors must be >= 1")
        for name in ("map_step", "map_extent", "drives_on_radius", "anchor_radius", "projection_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class NodeTable:
    """Agent tables: ``feat`` is [x, y, vx, vy]; map table: [x, y, dx, dy]."""
    feat: np.ndarray
    t: np.ndarray | None = None       # agent nodes: timestep index
    valid: np.ndarray | None = None   # agent nodes: observed (not padded)
    agent: np.ndarray | None = None   # agent nodes: row in the agent table

    def __len__(self) -> int:
        return len(self.feat)

    @property
    def pos(self) -> np.ndarray:
        return self.feat[:, :2]


@dataclass
class EdgeSet:
    src: np.ndarray
    dst: np.ndarray
    feat: np.ndarray

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class AgentTable:
    """One row per agent of a kind (in scene order)."""
    ids: list[str]
    latest: np.ndarray        # node index of the t=0 node
    position: np.ndarray      # (A, 2) current position, local frame
    yaw: np.ndarray           # (A,)
    future: np.ndarray        # (A, 12, 2) ground truth, NaN when missing
    is_target: np.ndarray     # (A,) bool
    anchors: list[list[AnchorPath]] = field(default_factory=list)  # rb only

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class HeteroGraph:
    nodes: dict[str, NodeTable]
    edges: dict[EdgeKind, EdgeSet]
    agents: dict[str, AgentTable]
    num_anchors: int
    scene_ids: list[str] = field(default_factory=list)
    map_lanes: list[str] = field(default_factory=list)

    def num_nodes(self, kind: str) -> int:
        return len(self.nodes[kind])

    def edge(self, kind: EdgeKind) -> EdgeSet:
        return self.edges[kind]


# -- features -----------------------------------------------------------------------
def edge_feature(src_pos, dst_pos) -> np.ndarray:
    """[euclidean distance, rel_x, rel_y] with rel = dst - src."""
    rel = np.asarray(dst_pos, dtype=np.float64) - np.asarray(src_pos, dtype=np.float64)
    return np.array([math.hypot(rel[0], rel[1]), rel[0], rel[1]])


def edge_features(src_pos: np.ndarray, dst_pos: np.ndarray) -> np.ndarray:
    rel = dst_pos - src_pos
    return np.concatenate([np.hypot(rel[:, :1], rel[:, 1:2]), rel], axis=1).reshape(-1, 3)


def _generic(src_idx, dst_idx, src_pos, dst_pos) -> EdgeSet:
    src = np.asarray(src_idx, dtype=np.int64)
    dst = np.asarray(dst_idx, dtype=np.int64)
    return EdgeSet(src, dst, edge_features(src_pos[src], dst_pos[dst]) if len(src) else np.zeros((0, 3)))


def _empty(kind: EdgeKind) -> EdgeSet:
    return EdgeSet(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, feature_width(kind))))


# -- anchors ------------------------------------------------------------------------
def agent_anchors(g: LaneGraph, projections: list[Projection], k: int,
                  max_len: float = ANCHOR_LENGTH) -> list[AnchorPath]:
    """Union of the anchor paths of all projection identities of one agent,
    deduplicated by lane sequence, at most ``k`` (straightest first on
    overflow), ordered by lane sequence."""
    found: dict[tuple[str, ...], tuple[AnchorPath, float]] = {}
    for p in projections:
        for a in enumerate_anchor_paths(g, p, max_len=max_len, max_k=k):
            if a.lane_ids not in found or abs(p.lateral_offset) < found[a.lane_ids][1]:
                found[a.lane_ids] = (a, abs(p.lateral_offset))
    keys = sorted(found)
    if len(keys) > k:
        def straightness(key):
            a = found[key][0]
            hops = sum(v in (g[u].left, g[u].right) for u, v in zip(key, key[1:]))
            dev = abs(wrap_angle(heading_of(a.polyline[-1] - a.polyline[0]) - a.headings[0]))
            return hops, dev, key
        keys = sorted(sorted(keys, key=straightness)[:k])
    return [AnchorPath(i, key, found[key][0].polyline, found[key][0].headings) for i, key in enumerate(keys)]


# -- construction ---------------------------------------------------------------------
def _map_hop_edges(g: LaneGraph, nodes: list[MapNode]):
    index = {(n.lane_id, n.sample_index): n.node_id for n in nodes}
    succ: list[list[int]] = [[] for _ in nodes]
    for n in nodes:
        nxt = index.get((n.lane_id, n.sample_index + 1))
        if nxt is not None:
            succ[n.node_id].append(nxt)
        elif n.arc_pos >= g[n.lane_id].length - 1e-9:
            for s in sorted(g[n.lane_id].successors):
                if (s, 0) in index:
                    succ[n.node_id].append(index[(s, 0)])
    hops = {}
    for i in range(1, MAP_HOPS + 1):
        pairs = []
        for u in range(len(nodes)):
            frontier = {u}
            for _ in range(i):
                frontier = {w for v in frontier for w in succ[v]}
            pairs.extend((u, v) for v in sorted(frontier) if v != u)
        hops[i] = pairs
    return hops


def _map_lateral_edges(g: LaneGraph, nodes: list[MapNode], step: float):
    by_lane = defaultdict(list)
    for n in nodes:
        by_lane[n.lane_id].append(n)
    out = {"left": [], "right": []}
    for n in nodes:
        lane = g[n.lane_id]
        for side, nb in (("left", lane.left), ("right", lane.right)):
            if nb is None or not by_lane.get(nb):
                continue
            arc = g[nb].project(n.position)[1]
            cands = by_lane[nb]
            best = min(cands, key=lambda m: (abs(m.arc_pos - arc), m.node_id))
            if abs(best.arc_pos - arc) <= step / 2 + 1e-9:
                out[side].append((n.node_id, best.node_id))
    return out


def _within(a_pos: np.ndarray, b_pos: np.ndarray, radius: float):
    if len(a_pos) == 0 or len(b_pos) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    d = np.linalg.norm(a_pos[:, None, :] - b_pos[None, :, :], axis=2)
    ai, bi = np.nonzero(d <= radius)
    return ai.astype(np.int64), bi.astype(np.int64)


def build_graph(scene: Scene, g: LaneGraph, map_nodes: list[MapNode],
                ssg_edges: dict[int, list[SsgEdge]] | list[SsgEdge],
                anchors: dict[str, list[AnchorPath]], cfg: GraphConfig = GraphConfig()) -> HeteroGraph:
    """Assemble the graph. ``scene``, ``g``, ``map_nodes`` and ``anchors``
    must share a frame. ``ssg_edges`` is either a mapping timestep ->
    edges, or one edge list replicated at every timestep where both agents
    are observed."""
    if not scene.tracks:
        raise GraphError(f"scene {scene.scene_id} has no agents")
    K = cfg.num_anchors

    # agent nodes: five slots per agent
    tables, agent_tables, node_of = {}, {}, {}
    for kind in AGENT_KINDS:
        tracks = [tr for tr in scene.tracks if tr.agent_type.value == kind]
        feat, ts, valid, agent = [], [], [], []
        ids, latest, pos, yaw, fut, tgt, anc = [], [], [], [], [], [], []
        for a, tr in enumerate(tracks):
            states, ok = tr.history_window()
            for i, st in enumerate(states):
                if ok[i]:
                    node_of[(tr.agent_id, st.t)] = (kind, len(feat))
                feat.append([st.x, st.y, st.vx, st.vy])
                ts.append(st.t)
                valid.append(ok[i])
                agent.append(a)
            ids.append(tr.agent_id)
            latest.append(len(feat) - 1)
            pos.append(tr.current.position)
            yaw.append(tr.current.yaw)
            fut.append(tr.future_xy())
            tgt.append(tr.is_target)
            if kind == "rb":
                aps = list(anchors.get(tr.agent_id, []))
                if len(aps) > K:
                    raise GraphError(f"agent {tr.agent_id} has {len(aps)} anchors, more than K={K}")
                anc.append(aps)
        tables[kind] = NodeTable(np.asarray(feat, dtype=np.float64).reshape(-1, 4),
                                 np.asarray(ts, dtype=np.int64), np.asarray(valid, dtype=bool),
                                 np.asarray(agent, dtype=np.int64))
        agent_tables[kind] = AgentTable(ids, np.asarray(latest, dtype=np.int64),
                                        np.asarray(pos, dtype=np.float64).reshape(-1, 2),
                                        np.asarray(yaw, dtype=np.float64),
                                        np.asarray(fut, dtype=np.float64).reshape(-1, FUTURE, 2),
                                        np.asarray(tgt, dtype=bool), anc)
    mfeat = np.array([[*n.position, *n.direction] for n in map_nodes], dtype=np.float64).reshape(-1, 4)
    for i, n in enumerate(map_nodes):
        if n.node_id != i:
            raise GraphError("map node ids must be 0..N-1 in order")
        if n.lane_id not in g.lanes:
            raise GraphError(f"map node {i} references unknown lane {n.lane_id}")
    tables["m"] = NodeTable(mfeat)
    pos = {k: tables[k].pos for k in NODE_KINDS}
    edges: dict[EdgeKind, EdgeSet] = {}

    # temporal and merge edges
    for kind in AGENT_KINDS:
        nt = tables[kind]
        suc_s, suc_d, mer_s, mer_d = [], [], [], []
        for a, latest in enumerate(agent_tables[kind].latest):
            base = latest - (HISTORY - 1)
            for i in range(HISTORY - 1):
                if nt.valid[base + i] and nt.valid[base + i + 1]:
                    suc_s.append(base + i)
                    suc_d.append(base + i + 1)
            for i in range(HISTORY):
                if nt.valid[base + i]:
                    mer_s.append(base + i)
                    mer_d.append(latest)
        edges[EdgeKind(kind, "suc", kind)] = _generic(suc_s, suc_d, pos[kind], pos[kind])
        edges[EdgeKind(kind, "pre", kind)] = _generic(suc_d, suc_s, pos[kind], pos[kind])
        edges[EdgeKind(kind, "merge", kind)] = _generic(mer_s, mer_d, pos[kind], pos[kind])

    # scene-graph edges
    known = scene_agent_ids(scene)
    if isinstance(ssg_edges, dict):
        per_t = ssg_edges
    else:
        per_t = {t: list(ssg_edges) for t in range(1 - HISTORY, 1)}
    merged: dict[tuple, list[float]] = {}
    for t in sorted(per_t):
        for e in per_t[t]:
            src, dst = node_of.get((e.src, t)), node_of.get((e.dst, t))
            if src is None or dst is None:
                if e.src not in known or e.dst not in known:
                    raise GraphError(f"scene-graph edge references unknown agent {e.src}->{e.dst}")
                continue
            # several relations between one pair become one multi-hot edge
            f = merged.setdefault((src[0], dst[0], src[1], dst[1]), [0.0, 0.0, 0.0, math.inf])
            f[e.relation.value] = 1.0
            f[3] = min(f[3], e.along_dist)
    ssg_acc = {k: ([], [], []) for k in ssg_kinds()}
    for (sk, dk, si, di), f in merged.items():
        acc = ssg_acc[EdgeKind(sk, "ssg", dk)]
        acc[0].append(si)
        acc[1].append(di)
        acc[2].append(f)
    for kind, (s, d, f) in ssg_acc.items():
        edges[kind] = EdgeSet(np.asarray(s, np.int64), np.asarray(d, np.int64),
                              np.asarray(f, dtype=np.float64).reshape(-1, SSG_FEATURES))

    # map edges
    hops = _map_hop_edges(g, map_nodes)
    for i in range(1, MAP_HOPS + 1):
        s = [u for u, _ in hops[i]]
        d = [v for _, v in hops[i]]
        edges[EdgeKind("m", f"suc{i}", "m")] = _generic(s, d, pos["m"], pos["m"])
        edges[EdgeKind("m", f"pre{i}", "m")] = _generic(d, s, pos["m"], pos["m"])
    lateral = _map_lateral_edges(g, map_nodes, cfg.map_step)
    for side in ("left", "right"):
        s = [u for u, _ in lateral[side]]
        d = [v for _, v in lateral[side]]
        edges[EdgeKind("m", side, "m")] = _generic(s, d, pos["m"], pos["m"])

    # agent <-> map
    for kind in AGENT_KINDS:
        nt = tables[kind]
        valid_idx = np.flatnonzero(nt.valid)
        ai, mi = _within(nt.pos[valid_idx], pos["m"], cfg.drives_on_radius)
        ai = valid_idx[ai]
        edges[EdgeKind(kind, "drives_on", "m")] = _generic(ai, mi, pos[kind], pos["m"])
        edges[EdgeKind("m", "gives_traffic_info", kind)] = _generic(mi, ai, pos["m"], pos[kind])

    # anchors
    acc = {k: ([], []) for k in range(K)}
    for a, aps in enumerate(agent_tables["rb"].anchors):
        latest = agent_tables["rb"].latest[a]
        for k, ap in enumerate(aps):
            if len(pos["m"]) == 0:
                continue
            d = points_to_segments_distance(pos["m"], ap.polyline[:-1], ap.polyline[1:]).min(axis=1)
            members = np.flatnonzero(d <= cfg.anchor_radius)
            acc[k][0].extend(members.tolist())
            acc[k][1].extend([latest] * len(members))
    for k in range(K):
        edges[anchor_kind(k)] = _generic(acc[k][0], acc[k][1], pos["m"], pos["rb"])

    for kind in edge_kinds(K):
        edges.setdefault(kind, _empty(kind))
    return HeteroGraph(tables, edges, agent_tables, K, [scene.scene_id],
                       [n.lane_id for n in map_nodes])


def scene_agent_ids(scene: Scene) -> set[str]:
    return {tr.agent_id for tr in scene.tracks}


def build_scene_graph(scene: Scene, g: LaneGraph, cfg: GraphConfig = GraphConfig(),
                      relations: LaneRelations | None = None) -> HeteroGraph:
    """Full pipeline for a world-frame scene and its world-frame lane graph:
    localise, discretise the map, project agents, build the per-timestep
    scene graph and the anchors, then assemble."""
    local = scene.localized()
    gl = g.translated(-local.origin)
    nodes = discretize_map(gl, (0.0, 0.0), cfg.map_step, cfg.map_extent)
    rel = relations if relations is not None and relations.g is gl else LaneRelations(gl)
    gate = dict(radius=cfg.projection_radius, heading_tol=cfg.heading_tol)
    ssg = {}
    for t in range(1 - HISTORY, 1):
        ssg[t] = build_ssg(project_scene_at(local, gl, t, **gate), gl, cfg.ssg_horizon, rel)
    current = project_scene_at(local, gl, 0, **gate)
    anchors = {}
    for tr in local.tracks:
        if tr.agent_type is AgentType.RoadBound:
            mine = [p for p in current if p.agent_id == tr.agent_id]
            anchors[tr.agent_id] = agent_anchors(gl, mine, cfg.num_anchors, cfg.anchor_length)
    return build_graph(local, gl, nodes, ssg, anchors, cfg)


# -- batching ---------------------------------------------------------------------------
def collate(graphs: list[HeteroGraph]) -> HeteroGraph:
    """Disjoint union; node indices are offset per kind."""
    if not graphs:
        raise GraphError("nothing to collate")
    K = graphs[0].num_anchors
    if any(gr.num_anchors != K for gr in graphs):
        raise GraphError("graphs disagree on the number of anchors")
    offsets = {k: np.cumsum([0] + [gr.num_nodes(k) for gr in graphs])[:-1] for k in NODE_KINDS}
    agent_off = {k: np.cumsum([0] + [len(gr.agents[k]) for gr in graphs])[:-1] for k in AGENT_KINDS}
    nodes = {}
    for k in NODE_KINDS:
        parts = [gr.nodes[k] for gr in graphs]
        if k == "m":
            nodes[k] = NodeTable(np.concatenate([p.feat for p in parts]))
        else:
            nodes[k] = NodeTable(np.concatenate([p.feat for p in parts]),
                                 np.concatenate([p.t for p in parts]),
                                 np.concatenate([p.valid for p in parts]),
                                 np.concatenate([p.agent + o for p, o in zip(parts, agent_off[k])]))
    edges = {}
    for kind in edge_kinds(K):
        parts = [gr.edges[kind] for gr in graphs]
        so, do = offsets[kind.src], offsets[kind.dst]
        edges[kind] = EdgeSet(np.concatenate([p.src + o for p, o in zip(parts, so)]),
                              np.concatenate([p.dst + o for p, o in zip(parts, do)]),
                              np.concatenate([p.feat for p in parts]))
    agents = {}
    for k in AGENT_KINDS:
        parts = [gr.agents[k] for gr in graphs]
        agents[k] = AgentTable(
            [i for p in parts for i in p.ids],
            np.concatenate([p.latest + o for p, o in zip(parts, offsets[k])]),
            np.concatenate([p.position for p in parts]),
            np.concatenate([p.yaw for p in parts]),
            np.concatenate([p.future for p in parts]),
            np.concatenate([p.is_target for p in parts]),
            [a for p in parts for a in p.anchors])
    return HeteroGraph(nodes, edges, agents, K, [s for gr in graphs for s in gr.scene_ids],
                       [lane for gr in graphs for lane in gr.map_lanes])


# -- reporting ----------------------------------------------------------------------------
def graph_stats(hg: HeteroGraph | None, num_anchors: int = 10) -> dict[str, int]:
    """Node counts per kind and edge counts per edge kind (all kinds listed)."""
    K = hg.num_anchors if hg is not None else num_anchors
    out = {f"nodes:{k}": (hg.num_nodes(k) if hg is not None else 0) for k in NODE_KINDS}
    for kind in edge_kinds(K):
        out[f"edges:{kind}"] = len(hg.edges[kind]) if hg is not None else 0
    return out


def ssg_edge_total(hg: HeteroGraph) -> int:
    return sum(len(hg.edges[k]) for k in ssg_kinds())


def fully_connected_total(hg: HeteroGraph) -> int:
    """Directed agent-agent edges a fully connected graph would need, summed
    over timesteps (observed nodes only)."""
    counts = defaultdict(int)
    for k in AGENT_KINDS:
        nt = hg.nodes[k]
        for t in nt.t[nt.valid]:
            counts[int(t)] += 1
    return sum(n * (n - 1) for n in counts.values())


def dump_edges(hg: HeteroGraph) -> str:
    """Edge lists per kind: a header line ``# kind count`` followed by
    ``src dst feat...`` rows."""
    lines = []
    for kind in edge_kinds(hg.num_anchors):
        es = hg.edges[kind]
        lines.append(f"# {kind} {len(es)}")
        for s, d, f in zip(es.src, es.dst, es.feat):
            lines.append(f"{s} {d} " + " ".join(f"{v:.6f}" for v in f))
    return "\n".join(lines) + "\n"
