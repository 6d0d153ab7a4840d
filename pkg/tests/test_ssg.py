import math

import numpy as np
import pytest
from shapely.geometry import LineString, Point

from hgtraj.lanegraph import Lane, LaneGraph, MapError, Projection
from hgtraj.scene import AgentState, AgentTrack, AgentType, GeneratorSpec, Scene, generate_synthetic_scenes
from hgtraj.ssg import (RelationType, build_ssg, dump_ssg, project_scene_at, related_pairs,
                        ssg_reduction_ratio)
from hgtraj.templates import TEMPLATES, build_template


# -- independent oracle --------------------------------------------------------------
def oracle_ssg(projections, g, horizon=100.0):
    """Exhaustive pairwise checks: every simple successor path for routes,
    shapely for crossings."""
    lines = {k: LineString(g[k].centerline) for k in g.lanes}

    def simple_paths(a, b):
        out, stack = [], [(a, [a])]
        while stack:
            cur, path = stack.pop()
            if cur == b and len(path) > 1:
                out.append(path)
                continue
            for s in g[cur].successors:
                if s not in path:
                    stack.append((s, path + [s]))
        return out

    def route(pa, pb):
        if pa.lane_id == pb.lane_id:
            return [pb.arc_pos - pa.arc_pos] if pb.arc_pos >= pa.arc_pos else []
        dists = []
        for path in simple_paths(pa.lane_id, pb.lane_id):
            d = lines[pa.lane_id].length - pa.arc_pos + sum(lines[k].length for k in path[1:-1]) + pb.arc_pos
            dists.append(d)
        return dists

    def reachable(a, b):
        return bool(simple_paths(a, b)) or bool(simple_paths(b, a))

    def crossing_arcs(a, b):
        inter = lines[a].intersection(lines[b])
        if inter.is_empty:
            return []
        pts = [inter] if isinstance(inter, Point) else list(getattr(inter, "geoms", []))
        arcs = []
        for p in pts:
            if not isinstance(p, Point):
                continue
            sa, sb = lines[a].project(p), lines[b].project(p)
            if sa < 1e-6 and sb < 1e-6:
                continue
            arcs.append(sa)
        return arcs

    best = {}
    agents = sorted({p.agent_id for p in projections})
    for a in agents:
        for b in agents:
            if a == b:
                continue
            for pa in (p for p in projections if p.agent_id == a):
                for pb in (p for p in projections if p.agent_id == b):
                    cands = []
                    for d in route(pa, pb) + route(pb, pa):
                        if d <= horizon:
                            cands.append(("Longitudinal", d))
                    if pa.lane_id != pb.lane_id:
                        la = g[pa.lane_id]
                        if pb.lane_id in (la.left, la.right):
                            cands.append(("Lateral", abs(pa.arc_pos - pb.arc_pos)))
                        elif not reachable(pa.lane_id, pb.lane_id):
                            for s in crossing_arcs(pa.lane_id, pb.lane_id):
                                cands.append(("Intersecting", abs(s - pa.arc_pos)))
                    for rel, d in cands:
                        key = (a, b, rel)
                        best[key] = min(best.get(key, math.inf), d)
    return best


def as_dict(edges):
    return {(e.src, e.dst, e.relation.name): e.along_dist for e in edges}


def assert_matches_oracle(projections, g):
    ours = as_dict(build_ssg(projections, g))
    ref = oracle_ssg(projections, g)
    assert ours.keys() == ref.keys()
    for k in ours:
        assert ours[k] == pytest.approx(ref[k], abs=1e-6)


def proj(agent, lane, arc):
    return Projection(agent, lane, arc, 0.0, f"{agent}@{lane}")


# -- examples ------------------------------------------------------------------------
def test_same_lane_longitudinal_both_ways():
    g = build_template("straight")
    edges = build_ssg([proj("A", "E0", 30.0), proj("B", "E0", 42.0)], g)
    assert as_dict(edges) == {("A", "B", "Longitudinal"): 12.0, ("B", "A", "Longitudinal"): 12.0}
    assert_matches_oracle([proj("A", "E0", 30.0), proj("B", "E0", 42.0)], g)


def test_crossing_lanes_intersecting_both_ways():
    g = build_template("cross_intersection")
    ps = [proj("A", "E_mid", 5.0), proj("B", "N_mid", 20.0)]
    d = as_dict(build_ssg(ps, g))
    assert set(d) == {("A", "B", "Intersecting"), ("B", "A", "Intersecting")}
    # E_mid runs along y=-1.75 from x=-15, N_mid along x=1.75 from y=-15
    assert d[("A", "B", "Intersecting")] == pytest.approx(abs(15 + 1.75 - 5.0))
    assert d[("B", "A", "Intersecting")] == pytest.approx(abs(15 - 1.75 - 20.0))
    assert_matches_oracle(ps, g)


def test_lateral_neighbours():
    g = build_template("lane_change")
    d = as_dict(build_ssg([proj("A", "R0", 40.0), proj("B", "L0", 47.5)], g))
    assert d == {("A", "B", "Lateral"): 7.5, ("B", "A", "Lateral"): 7.5}


def test_fork_siblings_are_not_intersecting():
    g = build_template("y_fork")
    assert build_ssg([proj("A", "BL", 5.0), proj("B", "BR", 5.0)], g) == []


def test_route_beyond_horizon_dropped():
    g = build_template("cross_intersection")
    ps = [proj("A", "E_in", 0.0), proj("B", "E_out", 90.0)]
    assert build_ssg(ps, g) == []
    assert len(build_ssg(ps, g, horizon=300.0)) == 2


def test_single_agent_no_edges():
    assert build_ssg([proj("A", "E0", 1.0)], build_template("straight")) == []


def test_unknown_lane_errors():
    with pytest.raises(MapError):
        build_ssg([proj("A", "nowhere", 1.0)], build_template("straight"))


def _still(agent_id, x, y, yaw, kind=AgentType.RoadBound):
    return AgentTrack(agent_id, kind, (AgentState(0, x, y, 0.0, 0.0, yaw),))


def test_reduction_ratio_examples():
    g = build_template("straight")
    two = Scene("s", (_still("a", 0.0, -1.75, 0.0), _still("b", 20.0, -1.75, 0.0)), "straight")
    assert ssg_reduction_ratio(two, g) == 0.0
    three = Scene("s", (*two.tracks, _still("c", 0.0, 60.0, 0.0, AgentType.NonRoadBound)), "straight")
    edges = build_ssg(project_scene_at(three, g), g)
    assert len(edges) <= 2
    assert ssg_reduction_ratio(three, g) == pytest.approx(1 - related_pairs(edges) / 6)
    assert ssg_reduction_ratio(three, g) >= 2 / 3
    with pytest.raises(ValueError):
        ssg_reduction_ratio(Scene("s", two.tracks[:1], "straight"), g)


def test_parallel_relations_count_once():
    g = build_template("lane_change")
    # "A" straddles both lanes, "B" is ahead on the right lane
    ps = [proj("A", "R0", 30.0), proj("A", "L0", 30.0), proj("B", "R0", 45.0)]
    edges = build_ssg(ps, g)
    assert {e.relation.name for e in edges if e.src == "A"} == {"Longitudinal", "Lateral"}
    assert related_pairs(edges) == 2


def test_dump_format():
    g = build_template("straight")
    text = dump_ssg(build_ssg([proj("A", "E0", 30.0), proj("B", "E0", 42.0)], g))
    assert text.splitlines()[0] == "A B Longitudinal 12.000000"


# -- generated scenes --------------------------------------------------------------
@pytest.mark.parametrize("name", TEMPLATES)
def test_generated_scenes_match_oracle_and_bounds(name):
    g = build_template(name)
    for seed in range(20):
        (scene,) = generate_synthetic_scenes(GeneratorSpec(name, n_rb=4, n_nrb=1), seed)
        for t in (-4, 0):
            ps = project_scene_at(scene, g, t)
            assert_matches_oracle(ps, g)
            edges = build_ssg(ps, g)
            n = len(scene.tracks)
            assert related_pairs(edges) <= n * (n - 1)
            kinds = {(e.src, e.dst, e.relation) for e in edges}
            for e in edges:
                assert e.along_dist >= 0 and e.src != e.dst
                if e.relation is RelationType.Longitudinal:
                    assert e.along_dist <= 100.0
                if e.relation is not RelationType.Longitudinal:
                    assert (e.dst, e.src, e.relation) in kinds


def test_random_projection_sets_match_oracle():
    rng = np.random.default_rng(5)
    for name in TEMPLATES:
        g = build_template(name)
        ids = g.lane_ids()
        for _ in range(10):
            ps = []
            for a in range(rng.integers(2, 6)):
                for lane in rng.choice(ids, size=rng.integers(1, 3), replace=False):
                    ps.append(proj(f"a{a}", str(lane), float(rng.uniform(0, g[str(lane)].length))))
            assert_matches_oracle(ps, g)
