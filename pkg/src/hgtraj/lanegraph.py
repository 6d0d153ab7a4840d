"""Lane network: map-node discretisation, agent projection, anchor paths
and drivable-area queries."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (cumulative_arc, dedupe, heading_of, interpolate, points_to_polyline_distance,
                       project_to_polyline, sub_polyline, wrap_angle)

# Raster channel order (fixed). Index == channel in RasterPatch.channels.
CHANNELS = (
    "drivable", "lane_border", "lane_divider", "ped_crossing", "walkway",
    "stop_area", "carpark", "road_divider", "traffic_sign", "intersection",
)
# extras under these tags are polylines; everything else is a polygon
LINE_CHANNELS = frozenset({"lane_border", "lane_divider", "road_divider"})

MAP_EXTENT = 190.0
ANCHOR_LENGTH = 100.0
LANE_CHANGE_MIN_OVERLAP = 5.0
LANE_CHANGE_DISTANCE = 5.0


class MapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Lane:
    lane_id: str
    centerline: np.ndarray
    width: float
    successors: tuple[str, ...] = ()
    predecessors: tuple[str, ...] = ()
    left: str | None = None
    right: str | None = None
    tags: tuple[str, ...] = ()
    arc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cl = np.asarray(self.centerline, dtype=np.float64)
        if cl.ndim != 2 or cl.shape[1] != 2 or len(cl) < 2:
            raise MapError(f"lane {self.lane_id}: centerline needs >= 2 points")
        if np.any(np.linalg.norm(np.diff(cl, axis=0), axis=1) == 0):
            raise MapError(f"lane {self.lane_id}: consecutive centerline points coincide")
        if not self.width > 0:
            raise MapError(f"lane {self.lane_id}: width must be positive")
        unknown = set(self.tags) - set(CHANNELS)
        if unknown:
            raise MapError(f"lane {self.lane_id}: unknown tags {sorted(unknown)}")
        object.__setattr__(self, "centerline", cl)
        object.__setattr__(self, "successors", tuple(self.successors))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "arc", cumulative_arc(cl))

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def point_at(self, s):
        return interpolate(self.centerline, self.arc, s)

    def tangent_at(self, s: float) -> np.ndarray:
        """Unit tangent of the polyline segment containing ``s``; at an
        interior vertex the bisector of the two adjacent segments."""
        cl, arc = self.centerline, self.arc
        s = min(max(s, 0.0), arc[-1])
        i = int(np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(cl) - 2))
        d = cl[i + 1] - cl[i]
        d = d / np.linalg.norm(d)
        if 0 < i and abs(s - arc[i]) < 1e-9:
            prev = cl[i] - cl[i - 1]
            d = d + prev / np.linalg.norm(prev)
            d = d / np.linalg.norm(d)
        return d

    def project(self, p) -> tuple[float, float, float, np.ndarray]:
        """(distance, arc, signed lateral offset, unit tangent) of the foot point."""
        dist, s, i, foot = project_to_polyline(self.centerline, p)
        tan = self.centerline[i + 1] - self.centerline[i]
        tan = tan / np.linalg.norm(tan)
        rel = np.asarray(p, dtype=np.float64) - foot
        lateral = float(tan[0] * rel[1] - tan[1] * rel[0])
        return dist, s, lateral, tan

    def translated(self, offset) -> Lane:
        return Lane(self.lane_id, self.centerline + offset, self.width, self.successors,
                    self.predecessors, self.left, self.right, self.tags)


@dataclass(eq=False)
class LaneGraph:
    lanes: dict[str, Lane]
    extras: dict[str, list[np.ndarray]] = field(default_factory=dict)
    graph_id: str = ""

    def __post_init__(self):
        self.extras = {k: [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in v]
                       for k, v in self.extras.items()}
        self.validate()

    def validate(self) -> None:
        for tag in self.extras:
            if tag not in CHANNELS:
                raise MapError(f"unknown extras channel {tag!r}")
        for lane in self.lanes.values():
            for ref in (*lane.successors, *lane.predecessors, lane.left, lane.right):
                if ref is not None and ref not in self.lanes:
                    raise MapError(f"lane {lane.lane_id} references unknown lane {ref}")
            if lane.left is not None and self.lanes[lane.left].right != lane.lane_id:
                raise MapError(f"neighbour links of {lane.lane_id} and {lane.left} disagree")
            if lane.right is not None and self.lanes[lane.right].left != lane.lane_id:
                raise MapError(f"neighbour links of {lane.lane_id} and {lane.right} disagree")

    def __getitem__(self, lane_id: str) -> Lane:
        return self.lanes[lane_id]

    def lane_ids(self) -> list[str]:
        return sorted(self.lanes)

    def translated(self, offset) -> LaneGraph:
        offset = np.asarray(offset, dtype=np.float64)
        return LaneGraph({k: v.translated(offset) for k, v in self.lanes.items()},
                         {k: [p + offset for p in v] for k, v in self.extras.items()}, self.graph_id)

    def rotated(self, theta: float) -> LaneGraph:
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, s], [-s, c]])  # row-vector form of R(theta)
        lanes = {k: Lane(v.lane_id, v.centerline @ rot, v.width, v.successors, v.predecessors,
                         v.left, v.right, v.tags) for k, v in self.lanes.items()}
        return LaneGraph(lanes, {k: [p @ rot for p in v] for k, v in self.extras.items()}, self.graph_id)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "id": self.graph_id,
            "lanes": [{
                "id": ln.lane_id,
                "centerline": ln.centerline.tolist(),
                "width": ln.width,
                "successors": list(ln.successors),
                "predecessors": list(ln.predecessors),
                "left": ln.left,
                "right": ln.right,
                "tags": list(ln.tags),
            } for ln in (self.lanes[k] for k in self.lane_ids())],
            "extras": {k: [p.tolist() for p in v] for k, v in sorted(self.extras.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> LaneGraph:
        allowed = {"id", "lanes", "extras"}
        if set(d) - allowed:
            raise MapError(f"unknown lane-graph fields {sorted(set(d) - allowed)}")
        lanes = {}
        lane_keys = {"id", "centerline", "width", "successors", "predecessors", "left", "right", "tags"}
        for ld in d["lanes"]:
            if set(ld) - lane_keys:
                raise MapError(f"unknown lane fields {sorted(set(ld) - lane_keys)}")
            lane = Lane(str(ld["id"]), np.asarray(ld["centerline"], dtype=np.float64), float(ld["width"]),
                        tuple(ld.get("successors", ())), tuple(ld.get("predecessors", ())),
                        ld.get("left"), ld.get("right"), tuple(ld.get("tags", ())))
            if lane.lane_id in lanes:
                raise MapError(f"duplicate lane id {lane.lane_id}")
            lanes[lane.lane_id] = lane
        return cls(lanes, d.get("extras", {}), str(d.get("id", "")))


def save_lane_graph(g: LaneGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=1, sort_keys=True))


def load_lane_graph(path: str | Path) -> LaneGraph:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MapError(f"{path}: malformed lane-graph file ({exc})") from exc
    return LaneGraph.from_dict(d)


# -- map nodes -----------------------------------------------------------------
@dataclass(frozen=True)
class MapNode:
    node_id: int
    lane_id: str
    position: np.ndarray
    direction: np.ndarray
    arc_pos: float
    sample_index: int  # index of this sample along its lane (before cropping)


def lane_samples(lane: Lane, step: float) -> np.ndarray:
    n = int(math.floor(lane.length / step + 1e-9))
    s = np.arange(n + 1) * step
    if lane.length - s[-1] > 1e-9:
        s = np.append(s, lane.length)
    return s


def discretize_map(g: LaneGraph, center, step: float = 5.0, extent: float = MAP_EXTENT) -> list[MapNode]:
    """Sample every lane every ``step`` meters (plus the end point) and keep
    the samples inside the axis-aligned ``extent`` square around ``center``."""
    if step <= 0:
        raise ValueError("step must be positive")
    if not g.lanes:
        raise MapError("cannot discretise an empty lane graph")
    center = np.asarray(center, dtype=np.float64)
    half = extent / 2.0
    nodes: list[MapNode] = []
    for lane_id in g.lane_ids():
        lane = g[lane_id]
        for k, s in enumerate(lane_samples(lane, step)):
            pos = lane.point_at(s)
            if np.all(np.abs(pos - center) <= half):
                nodes.append(MapNode(len(nodes), lane_id, pos, lane.tangent_at(float(s)), float(s), k))
    return nodes


# -- projection ----------------------------------------------------------------
@dataclass(frozen=True)
class Projection:
    agent_id: str
    lane_id: str
    arc_pos: float
    lateral_offset: float
    identity_id: str


def project_agent(g: LaneGraph, position, heading: float, radius: float = 3.0,
                  heading_tol: float = math.pi / 3, agent_id: str = "") -> list[Projection]:
    """One projection identity per lane within ``radius`` whose tangent at
    the foot point is within ``heading_tol`` of ``heading``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    out = []
    for lane_id in g.lane_ids():
        dist, s, lateral, tan = g[lane_id].project(position)
        if dist > radius:
            continue
        if abs(wrap_angle(heading_of(tan) - heading)) > heading_tol:
            continue
        out.append(Projection(agent_id, lane_id, s, lateral, f"{agent_id}@{lane_id}"))
    return out


# -- anchor paths ---------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class AnchorPath:
    anchor_id: int
    lane_ids: tuple[str, ...]
    polyline: np.ndarray
    headings: np.ndarray

    @property
    def length(self) -> float:
        return float(cumulative_arc(self.polyline)[-1])

    def translated(self, offset) -> AnchorPath:
        return AnchorPath(self.anchor_id, self.lane_ids, self.polyline + offset, self.headings)


def _polyline_headings(poly: np.ndarray) -> np.ndarray:
    d = np.diff(poly, axis=0)
    h = np.arctan2(d[:, 1], d[:, 0])
    return np.append(h, h[-1])


def lateral_entry_arc(src: Lane, s: float, dst: Lane) -> float:
    """Arc position on ``dst`` alongside arc ``s`` of ``src``."""
    return project_to_polyline(dst.centerline, src.point_at(s))[1]


def enumerate_anchor_paths(g: LaneGraph, proj: Projection, max_len: float = ANCHOR_LENGTH,
                           max_k: int | None = None,
                           min_overlap: float = LANE_CHANGE_MIN_OVERLAP,
                           change_dist: float = LANE_CHANGE_DISTANCE) -> list[AnchorPath]:
    """Depth-first enumeration of permitted paths from a projection.

    Transitions are successor links (entering at arc 0) and lateral hops to
    the left/right neighbour. A lateral hop starts at the point where the
    current lane was entered, lands ``change_dist`` further along the
    neighbour, requires ``min_overlap`` of shared length, and may not
    directly follow another lateral hop. Lanes never repeat. Paths stop at
    ``max_len`` of arc length or at a dead end. On overflow the ``max_k``
    paths with the fewest lateral hops, then the smallest end-point heading
    deviation, are kept.
    """
    if proj.lane_id not in g.lanes:
        raise MapError(f"projection lane {proj.lane_id} not in lane graph")
    found: dict[tuple[str, ...], np.ndarray] = {}

    def emit(seq, pieces):
        poly = dedupe(np.concatenate(pieces, axis=0))
        if len(poly) < 2:
            return
        found.setdefault(tuple(seq), poly)

    def visit(lane: Lane, entry: float, used: float, seq: list[str], pieces: list[np.ndarray],
              after_lateral: bool):
        avail = lane.length - entry
        remaining = max_len - used
        if avail >= remaining - 1e-9:
            emit(seq, pieces + [sub_polyline(lane.centerline, lane.arc, entry, entry + remaining)])
        else:
            here = pieces + [sub_polyline(lane.centerline, lane.arc, entry, lane.length)]
            nexts = [sid for sid in lane.successors if sid not in seq]
            if not nexts:
                emit(seq, here)
            for sid in sorted(nexts):
                visit(g[sid], 0.0, used + avail, seq + [sid], here, False)
        if after_lateral:
            return
        for nid in (lane.left, lane.right):
            if nid is None or nid in seq:
                continue
            nb = g[nid]
            b0 = lateral_entry_arc(lane, entry, nb)
            if min(avail, nb.length - b0) < min_overlap:
                continue
            b1 = min(b0 + change_dist, nb.length)
            start, land = lane.point_at(entry), nb.point_at(b1)
            hop = float(np.linalg.norm(land - start))
            if hop >= remaining:
                end = start + (land - start) * (remaining / hop)
                emit(seq + [nid], pieces + [np.stack([start, end])])
                continue
            visit(nb, b1, used + hop, seq + [nid], pieces + [np.stack([start, land])], True)

    start_lane = g[proj.lane_id]
    visit(start_lane, proj.arc_pos, 0.0, [proj.lane_id], [], False)

    keys = sorted(found)
    if max_k is not None and len(keys) > max_k:
        h0 = heading_of(start_lane.tangent_at(proj.arc_pos))

        def straightness(key):
            hops = sum(v in (g[u].left, g[u].right) for u, v in zip(key, key[1:]))
            poly = found[key]
            return hops, abs(wrap_angle(heading_of(poly[-1] - poly[0]) - h0)), key

        keys = sorted(sorted(keys, key=straightness)[:max_k])
    return [AnchorPath(i, k, found[k], _polyline_headings(found[k])) for i, k in enumerate(keys)]


def heading_along_anchor(a: AnchorPath, query) -> float:
    """Heading of the anchor segment nearest to ``query``; ties go to the
    earlier segment."""
    _, _, i, _ = project_to_polyline(a.polyline, query)
    return heading_of(a.polyline[i + 1] - a.polyline[i])


# -- drivable area --------------------------------------------------------------
def drivable_mask(g: LaneGraph, points) -> np.ndarray:
    """Closed-set test against the union of buffered centerlines."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    inside = np.zeros(len(pts), dtype=bool)
    for lane_id in g.lane_ids():
        lane = g[lane_id]
        todo = ~inside
        if not todo.any():
            break
        d = points_to_polyline_distance(pts[todo], lane.centerline)
        inside[np.flatnonzero(todo)] = d <= lane.width / 2.0 + 1e-9
    return inside


def is_on_drivable(g: LaneGraph, point) -> bool:
    return bool(drivable_mask(g, point)[0])
