"""Hand-built lane graphs standing in for real HD maps.

Every template is a plain :class:`LaneGraph` in a world frame whose origin
sits near the interesting part of the road (fork point, intersection
centre). Lanes are 3.5 m wide.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import arc_polyline, offset_polyline
from .lanegraph import Lane, LaneGraph

W = 3.5
TEMPLATES = ("straight", "curve", "y_fork", "cross_intersection", "lane_change")


def _line(p0, p1, spacing: float = 10.0) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / spacing)) + 1)
    return np.linspace(p0, p1, n)


def _rect(x0, y0, x1, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def straight() -> LaneGraph:
    lanes = {
        "E0": Lane("E0", _line((-120, -W / 2), (120, -W / 2)), W),
        "W0": Lane("W0", _line((120, W / 2), (-120, W / 2)), W),
    }
    extras = {
        "walkway": [_rect(-120, -7.0, 120, -W - 0.5), _rect(-120, W + 0.5, 120, 7.0)],
        "road_divider": [np.array([[-120.0, 0.0], [120.0, 0.0]])],
        "carpark": [_rect(20, -25, 50, -9)],
        "traffic_sign": [_rect(29, -8.5, 30, -7.5)],
    }
    return LaneGraph(lanes, extras, "straight")


def curve() -> LaneGraph:
    r = 40.0
    c0 = np.concatenate([
        _line((-80, 0), (0, 0))[:-1],
        arc_polyline((0, r), r, -math.pi / 2, 0.0, 40)[:-1],
        _line((r, r), (r, r + 100)),
    ])
    c1 = offset_polyline(c0, W)[::-1].copy()
    lanes = {"C0": Lane("C0", c0, W), "C1": Lane("C1", c1, W)}
    extras = {
        "walkway": [np.concatenate([offset_polyline(c0, -W / 2 - 0.5), offset_polyline(c0, -W / 2 - 3.5)[::-1]])],
        "road_divider": [offset_polyline(c0, W / 2)],
    }
    return LaneGraph(lanes, extras, "curve")


def y_fork(branch_angle: float = math.radians(30), radius: float = 40.0) -> LaneGraph:
    trunk = _line((-80, 0), (0, 0))
    bends = {}
    for name, sign in (("BL", 1.0), ("BR", -1.0)):
        arc = arc_polyline((0, sign * radius), radius, -sign * math.pi / 2,
                           -sign * math.pi / 2 + sign * branch_angle, 16)
        end = arc[-1]
        direction = np.array([math.cos(sign * branch_angle), math.sin(sign * branch_angle)])
        bends[name] = np.concatenate([arc[:-1], _line(end, end + 100 * direction)])
    lanes = {
        "T": Lane("T", trunk, W, successors=("BL", "BR")),
        "BL": Lane("BL", bends["BL"], W, predecessors=("T",)),
        "BR": Lane("BR", bends["BR"], W, predecessors=("T",)),
    }
    extras = {
        "walkway": [_rect(-80, -W / 2 - 3.5, 0, -W / 2 - 0.5), _rect(-80, W / 2 + 0.5, 0, W / 2 + 3.5)],
        "traffic_sign": [_rect(-5, 3.0, -4, 4.0)],
    }
    return LaneGraph(lanes, extras, "y_fork")


def cross_intersection(half_box: float = 15.0, reach: float = 110.0) -> LaneGraph:
    h, o = half_box, W / 2
    spec = {
        # name: (side the traffic comes from, lateral offset of the lane)
        "E": ((-1, 0), (0, -o)),
        "W": ((1, 0), (0, o)),
        "N": ((0, -1), (o, 0)),
        "S": ((0, 1), (-o, 0)),
    }
    lanes: dict[str, Lane] = {}
    for name, (frm, off) in spec.items():
        frm = np.array(frm, float)
        off = np.array(off, float)
        p_far, p_box = frm * reach + off, frm * h + off
        q_box, q_far = -frm * h + off, -frm * reach + off
        lanes[f"{name}_in"] = Lane(f"{name}_in", _line(p_far, p_box), W, successors=(f"{name}_mid",))
        lanes[f"{name}_mid"] = Lane(f"{name}_mid", _line(p_box, q_box, 5.0), W, successors=(f"{name}_out",),
                                    predecessors=(f"{name}_in",), tags=("intersection",))
        lanes[f"{name}_out"] = Lane(f"{name}_out", _line(q_box, q_far), W, predecessors=(f"{name}_mid",))
    crossings = [_rect(-h - 7, -W, -h - 3, W), _rect(h + 3, -W, h + 7, W),
                 _rect(-W, -h - 7, W, -h - 3), _rect(-W, h + 3, W, h + 7)]
    stops = [_rect(-h - 9, -W, -h - 7, 0), _rect(h + 7, 0, h + 9, W),
             _rect(0, -h - 9, W, -h - 7), _rect(-W, h + 7, 0, h + 9)]
    walks = []
    for a0, a1 in ((-reach, -h), (h, reach)):
        for b0, b1 in ((W + 0.5, W + 3.5), (-W - 3.5, -W - 0.5)):
            walks.append(_rect(a0, b0, a1, b1))  # along the east-west road
            walks.append(_rect(b0, a0, b1, a1))  # along the north-south road
    extras = {
        "ped_crossing": crossings,
        "stop_area": stops,
        "walkway": walks,
        "intersection": [_rect(-h, -h, h, h)],
        "road_divider": [np.array([[-reach, 0.0], [-h, 0.0]]), np.array([[h, 0.0], [reach, 0.0]]),
                         np.array([[0.0, -reach], [0.0, -h]]), np.array([[0.0, h], [0.0, reach]])],
    }
    return LaneGraph(lanes, extras, "cross_intersection")


def lane_change(split: float = 0.0, reach: float = 120.0) -> LaneGraph:
    lanes = {
        "R0": Lane("R0", _line((-reach, 0), (split, 0)), W, successors=("R1",), left="L0"),
        "R1": Lane("R1", _line((split, 0), (reach, 0)), W, predecessors=("R0",), left="L1"),
        "L0": Lane("L0", _line((-reach, W), (split, W)), W, successors=("L1",), right="R0"),
        "L1": Lane("L1", _line((split, W), (reach, W)), W, predecessors=("L0",), right="R1"),
    }
    extras = {
        "walkway": [_rect(-reach, -W / 2 - 3.5, reach, -W / 2 - 0.5),
                    _rect(-reach, W * 1.5 + 0.5, reach, W * 1.5 + 3.5)],
        "lane_divider": [np.array([[-reach, W / 2], [reach, W / 2]])],
    }
    return LaneGraph(lanes, extras, "lane_change")


_BUILDERS = {
    "straight": straight,
    "curve": curve,
    "y_fork": y_fork,
    "cross_intersection": cross_intersection,
    "lane_change": lane_change,
}


def build_template(name: str) -> LaneGraph:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown lane-graph template {name!r}; choose from {TEMPLATES}") from None


# Spawn regions for road-bound agents: lane -> (min arc, max arc) at t = -4,
# and walking paths for non-road-bound agents.
SPAWN = {
    "straight": {"E0": (10.0, 110.0), "W0": (10.0, 110.0)},
    "curve": {"C0": (0.0, 60.0), "C1": (0.0, 60.0)},
    "y_fork": {"T": (5.0, 62.0)},
    "cross_intersection": {"E_in": (45.0, 85.0), "W_in": (45.0, 85.0),
                           "N_in": (45.0, 85.0), "S_in": (45.0, 85.0)},
    "lane_change": {"R0": (10.0, 90.0), "L0": (10.0, 90.0)},
}

WALK_PATHS = {
    "straight": [np.array([[-100.0, -5.25], [100.0, -5.25]]), np.array([[-100.0, 5.25], [100.0, 5.25]])],
    "curve": [np.array([[-70.0, -4.0], [-5.0, -4.0]])],
    "y_fork": [np.array([[-75.0, -3.75], [-5.0, -3.75]]), np.array([[-75.0, 3.75], [-5.0, 3.75]])],
    "cross_intersection": [np.array([[-80.0, -5.25], [-20.0, -5.25]]), np.array([[20.0, 5.25], [80.0, 5.25]]),
                           np.array([[-20.0, -10.0], [-20.0, 10.0]]), np.array([[5.25, 20.0], [5.25, 80.0]])],
    "lane_change": [np.array([[-100.0, -3.75], [100.0, -3.75]]), np.array([[-100.0, 7.25], [100.0, 7.25]])],
}
