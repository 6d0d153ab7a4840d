"""Semantic scene graph: typed agent-agent relations with along-lane distances.

Relations are derived from lane projections at one timestep:

* longitudinal: one identity's lane is reachable from the other's through
  successor links within ``horizon`` meters (or both sit on the same lane).
  The edge is emitted in both directions with the same route distance.
* lateral: the lanes are left/right neighbours; distance is ``|arc_a - arc_b|``.
* intersecting: the centerlines cross and the lanes are neither connected
  by successor chains nor adjacent; distance is the source's arc distance
  to the nearest crossing.

When several identity pairs give the same relation for an agent pair, the
smallest distance is kept.
"""
from __future__ import annotations

import enum
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache

from .geometry import segment_intersections
from .lanegraph import LaneGraph, MapError, Projection, project_agent

HORIZON = 100.0


class RelationType(enum.Enum):
    Longitudinal = 0
    Lateral = 1
    Intersecting = 2


@dataclass(frozen=True)
class SsgEdge:
    src: str
    dst: str
    relation: RelationType
    along_dist: float


class LaneRelations:
    """Cached lane-level queries used by :func:`build_ssg`."""

    def __init__(self, g: LaneGraph):
        self.g = g
        self.route_to = lru_cache(maxsize=None)(self._route_to)
        self.crossings = lru_cache(maxsize=None)(self._crossings)
        self.connected = lru_cache(maxsize=None)(self._connected)

    def _route_to(self, src: str) -> dict[str, float]:
        """Shortest distance from the start of ``src`` to the start of every
        lane reachable through successor links (``src`` itself at 0)."""
        dist = {src: 0.0}
        heap = [(0.0, src)]
        while heap:
            d, lane_id = heapq.heappop(heap)
            if d > dist[lane_id]:
                continue
            nd = d + self.g[lane_id].length
            for nxt in self.g[lane_id].successors:
                if nd < dist.get(nxt, math.inf):
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
        return dist

    def route_distance(self, a: Projection, b: Projection) -> float | None:
        """Along-lane distance from ``a`` forward to ``b``, or None."""
        if a.lane_id == b.lane_id:
            return b.arc_pos - a.arc_pos if b.arc_pos >= a.arc_pos else None
        start = self.route_to(a.lane_id).get(b.lane_id)
        if start is None:
            return None
        return start - a.arc_pos + b.arc_pos

    def _connected(self, a: str, b: str) -> bool:
        return b in self.route_to(a) or a in self.route_to(b)

    def adjacent(self, a: str, b: str) -> bool:
        la = self.g[a]
        return b in (la.left, la.right)

    def _crossings(self, a: str, b: str) -> tuple[float, ...]:
        """Arc positions on lane ``a`` where it meets lane ``b``. Touches at
        a shared start point (a split) are not crossings."""
        la, lb = self.g[a], self.g[b]
        out = []
        for i, ta, j, tb in segment_intersections(la.centerline, lb.centerline):
            sa = la.arc[i] + ta * (la.arc[i + 1] - la.arc[i])
            sb = lb.arc[j] + tb * (lb.arc[j + 1] - lb.arc[j])
            if sa < 1e-9 and sb < 1e-9:
                continue
            out.append(float(sa))
        return tuple(sorted(out))


def build_ssg(projections: list[Projection], g: LaneGraph, horizon: float = HORIZON,
              relations: LaneRelations | None = None) -> list[SsgEdge]:
    """Relation edges for every ordered pair of distinct agents, sorted by
    (src, dst, relation)."""
    for p in projections:
        if p.lane_id not in g.lanes:
            raise MapError(f"projection of {p.agent_id} references unknown lane {p.lane_id}")
    rel = relations or LaneRelations(g)
    by_agent: dict[str, list[Projection]] = defaultdict(list)
    for p in projections:
        by_agent[p.agent_id].append(p)
    best: dict[tuple[str, str, RelationType], float] = {}

    def keep(src, dst, kind, d):
        key = (src, dst, kind)
        if d < best.get(key, math.inf):
            best[key] = d

    agents = sorted(by_agent)
    for a in agents:
        for b in agents:
            if a == b:
                continue
            for pa in by_agent[a]:
                for pb in by_agent[b]:
                    fwd = rel.route_distance(pa, pb)
                    back = rel.route_distance(pb, pa)
                    for d in (fwd, back):
                        if d is not None and d <= horizon:
                            keep(a, b, RelationType.Longitudinal, d)
                    if pa.lane_id == pb.lane_id:
                        continue
                    if rel.adjacent(pa.lane_id, pb.lane_id):
                        keep(a, b, RelationType.Lateral, abs(pa.arc_pos - pb.arc_pos))
                    elif not rel.connected(pa.lane_id, pb.lane_id):
                        cross = rel.crossings(pa.lane_id, pb.lane_id)
                        if cross:
                            keep(a, b, RelationType.Intersecting, min(abs(s - pa.arc_pos) for s in cross))
    return [SsgEdge(s, d, r, dist) for (s, d, r), dist in
            sorted(best.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value))]


def project_scene_at(scene, g: LaneGraph, t: int = 0, radius: float = 3.0,
                     heading_tol: float = math.pi / 3) -> list[Projection]:
    """Projections of every agent observed at timestep ``t``. ``scene`` and
    ``g`` must share a frame."""
    out = []
    for tr in scene.tracks:
        st = tr.state_at(t)
        if st is not None:
            out.extend(project_agent(g, st.position, st.yaw, radius, heading_tol, agent_id=tr.agent_id))
    return out


def related_pairs(edges: list[SsgEdge]) -> int:
    """Ordered agent pairs joined by at least one relation, i.e. the number
    of scene-graph edges once parallel relations are merged."""
    return len({(e.src, e.dst) for e in edges})


def ssg_reduction_ratio(scene, g: LaneGraph, t: int = 0, horizon: float = HORIZON, **gate) -> float:
    """1 - (related ordered pairs) / N(N-1) at timestep ``t``."""
    n = sum(tr.state_at(t) is not None for tr in scene.tracks)
    if n < 2:
        raise ValueError("reduction ratio needs at least two agents")
    edges = build_ssg(project_scene_at(scene, g, t, **gate), g, horizon)
    return 1.0 - related_pairs(edges) / (n * (n - 1))


def dump_ssg(edges: list[SsgEdge]) -> str:
    return "".join(f"{e.src} {e.dst} {e.relation.name} {e.along_dist:.6f}\n" for e in edges)
