"""Agents, scenes, the scene file format and the synthetic scene generator."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import cumulative_arc, heading_of, interpolate, wrap_angle
from .lanegraph import LaneGraph, Projection, enumerate_anchor_paths
from .templates import SPAWN, TEMPLATES, WALK_PATHS, build_template

DT = 0.5
HISTORY = 5   # t = -4 .. 0
FUTURE = 12   # t = 1 .. 12


class SceneError(ValueError):
    """Malformed or invalid scene data."""


class AgentType(enum.Enum):
    RoadBound = "rb"
    NonRoadBound = "nrb"


@dataclass(frozen=True)
class AgentState:
    t: int
    x: float
    y: float
    vx: float
    vy: float
    yaw: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])


@dataclass(frozen=True)
class AgentTrack:
    agent_id: str
    agent_type: AgentType
    states: tuple[AgentState, ...]
    is_target: bool = True

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        validate_track(self)

    def state_at(self, t: int) -> AgentState | None:
        for s in self.states:
            if s.t == t:
                return s
        return None

    @property
    def observed(self) -> tuple[AgentState, ...]:
        return tuple(s for s in self.states if s.t <= 0)

    @property
    def current(self) -> AgentState:
        return self.state_at(0)

    def has_full_future(self) -> bool:
        return all(self.state_at(t) is not None for t in range(1, FUTURE + 1))

    def future_xy(self) -> np.ndarray:
        """(12, 2) ground-truth future; NaN where missing."""
        out = np.full((FUTURE, 2), np.nan)
        for s in self.states:
            if s.t > 0:
                out[s.t - 1] = (s.x, s.y)
        return out

    def history_window(self) -> tuple[list[AgentState], np.ndarray]:
        """The 5 history slots t=-4..0 with a validity mask. Missing slots
        before the first observation repeat the oldest state; gaps repeat
        the previous one."""
        obs = {s.t: s for s in self.observed}
        oldest = obs[min(obs)]
        out, valid, last = [], np.zeros(HISTORY, dtype=bool), oldest
        for i, t in enumerate(range(1 - HISTORY, 1)):
            if t in obs:
                last = obs[t]
                valid[i] = True
            out.append(replace(last, t=t))
        return out, valid


def validate_track(track: AgentTrack) -> None:
    ts = [s.t for s in track.states]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise SceneError(f"agent {track.agent_id}: timesteps not strictly increasing")
    if 0 not in ts:
        raise SceneError(f"agent {track.agent_id}: no state at the current timestep t=0")
    if ts[0] < 1 - HISTORY or ts[-1] > FUTURE:
        raise SceneError(f"agent {track.agent_id}: timesteps outside [{1 - HISTORY}, {FUTURE}]")
    for s in track.states:
        vals = (s.x, s.y, s.vx, s.vy, s.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise SceneError(f"agent {track.agent_id}: non-finite state at t={s.t}")
        if not -math.pi < s.yaw <= math.pi:
            raise SceneError(f"agent {track.agent_id}: yaw {s.yaw} outside (-pi, pi] at t={s.t}")


def observed_centroid(tracks) -> np.ndarray:
    pts = [(s.x, s.y) for tr in tracks for s in tr.observed]
    if not pts:
        return np.zeros(2)
    return np.asarray(pts, dtype=np.float64).mean(axis=0)


@dataclass(frozen=True, eq=False)
class Scene:
    """A scene in world coordinates. ``origin`` is the centroid of all
    observed positions; :meth:`localized` gives the origin-centred copy
    used by the graph pipeline."""

    scene_id: str
    tracks: tuple[AgentTrack, ...]
    lane_graph_ref: str
    origin: np.ndarray = field(default=None)
    frame: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        ids = [t.agent_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise SceneError(f"scene {self.scene_id}: duplicate agent ids")
        if self.origin is None:
            object.__setattr__(self, "origin", observed_centroid(self.tracks))
        else:
            object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Scene) and self.scene_id == other.scene_id
                and self.tracks == other.tracks and self.lane_graph_ref == other.lane_graph_ref
                and self.frame == other.frame and self.origin.tobytes() == other.origin.tobytes())

    def track(self, agent_id: str) -> AgentTrack:
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        raise KeyError(agent_id)

    def localized(self) -> Scene:
        if self.frame == "local":
            return self
        ox, oy = self.origin
        tracks = tuple(replace(tr, states=tuple(replace(s, x=s.x - ox, y=s.y - oy) for s in tr.states))
                       for tr in self.tracks)
        return Scene(self.scene_id, tracks, self.lane_graph_ref, self.origin, frame="local")


# -- file format ----------------------------------------------------------------
_SCENE_KEYS = {"scene_id", "lane_graph", "origin", "tracks"}
_TRACK_KEYS = {"agent_id", "agent_type", "is_target", "states"}
_STATE_KEYS = {"t", "x", "y", "vx", "vy", "yaw"}


def scene_to_dict(scene: Scene) -> dict:
    if scene.frame != "world":
        raise SceneError("only world-frame scenes are written to disk")
    return {
        "scene_id": scene.scene_id,
        "lane_graph": scene.lane_graph_ref,
        "origin": [float(v) for v in scene.origin],
        "tracks": [{
            "agent_id": tr.agent_id,
            "agent_type": tr.agent_type.value,
            "is_target": tr.is_target,
            "states": [{"t": s.t, "x": s.x, "y": s.y, "vx": s.vx, "vy": s.vy, "yaw": s.yaw}
                       for s in tr.states],
        } for tr in scene.tracks],
    }


def _check_keys(d, allowed: set, what: str, required: set | None = None):
    if not isinstance(d, dict):
        raise SceneError(f"{what}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise SceneError(f"{what}: unknown fields {sorted(extra)}")
    missing = (required if required is not None else allowed) - set(d)
    if missing:
        raise SceneError(f"{what}: missing fields {sorted(missing)}")


def scene_from_dict(d: dict) -> Scene:
    _check_keys(d, _SCENE_KEYS, "scene", required={"scene_id", "lane_graph", "tracks"})
    tracks = []
    for td in d["tracks"]:
        _check_keys(td, _TRACK_KEYS, "track", required={"agent_id", "agent_type", "states"})
        try:
            atype = AgentType(td["agent_type"])
        except ValueError:
            raise SceneError(f"unknown agent_type {td['agent_type']!r}") from None
        states = []
        for sd in td["states"]:
            _check_keys(sd, _STATE_KEYS, "state")
            if isinstance(sd["t"], bool) or not float(sd["t"]).is_integer():
                raise SceneError(f"non-integer timestep {sd['t']!r}")
            states.append(AgentState(int(sd["t"]), float(sd["x"]), float(sd["y"]), float(sd["vx"]),
                                     float(sd["vy"]), float(sd["yaw"])))
        tracks.append(AgentTrack(str(td["agent_id"]), atype, tuple(states), bool(td.get("is_target", True))))
    scene = Scene(str(d["scene_id"]), tuple(tracks), str(d["lane_graph"]))
    if "origin" in d:
        given = np.asarray(d["origin"], dtype=np.float64)
        if given.shape != (2,) or np.linalg.norm(given - scene.origin) > 1e-6:
            raise SceneError(f"scene {scene.scene_id}: origin {d['origin']} is not the observed centroid")
    return scene


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1, sort_keys=True))


def load_scene(path: str | Path) -> Scene:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: malformed scene file ({exc})") from exc
    return scene_from_dict(d)


# -- synthetic generator -------------------------------------------------------------
@dataclass(frozen=True)
class GeneratorSpec:
    template: str = "straight"
    n_rb: int = 2
    n_nrb: int = 1
    n_scenes: int = 1
    speed_range: tuple[float, float] = (5.0, 11.0)
    walk_speed_range: tuple[float, float] = (0.8, 1.8)
    lateral_noise: float = 0.25
    speed_noise: float = 0.15
    min_gap: float = 8.0


def _route_states(poly: np.ndarray, s: np.ndarray, lateral: np.ndarray, speeds: np.ndarray, t0: int):
    arc = cumulative_arc(poly)
    pts = interpolate(poly, arc, s)
    ahead = interpolate(poly, arc, np.minimum(s + 0.5, arc[-1]))
    behind = interpolate(poly, arc, np.maximum(s - 0.5, 0.0))
    tan = ahead - behind
    tan = tan / np.linalg.norm(tan, axis=1, keepdims=True)
    normal = np.stack([-tan[:, 1], tan[:, 0]], axis=1)
    pos = pts + lateral[:, None] * normal
    states = []
    for i in range(len(s)):
        yaw = float(wrap_angle(heading_of(tan[i])))
        v = speeds[i] * tan[i]
        states.append(AgentState(t0 + i, float(pos[i, 0]), float(pos[i, 1]), float(v[0]), float(v[1]), yaw))
    return states


def _nearest_lane_distance(g: LaneGraph, p) -> tuple[float, float]:
    best = (math.inf, 1.0)
    for lane in g.lanes.values():
        d = lane.project(p)[0]
        if d < best[0]:
            best = (d, lane.width / 2)
    return best


def _road_bound(g: LaneGraph, template: str, spec: GeneratorSpec, rng: np.random.Generator):
    n = HISTORY + FUTURE
    spawn = SPAWN[template]
    lane_id = sorted(spawn)[rng.integers(len(spawn))]
    s0 = rng.uniform(*spawn[lane_id])
    v0 = rng.uniform(*spec.speed_range)
    speeds = np.clip(v0 + np.cumsum(rng.normal(0, spec.speed_noise, n)), 1.0, None)
    s = s0 + np.concatenate([[0.0], np.cumsum(speeds[:-1] * DT)])
    proj = Projection("", lane_id, s0, 0.0, "")
    routes = [a for a in enumerate_anchor_paths(g, proj, max_len=float(s[-1] - s0) + 2.0)
              if a.length >= float(s[-1] - s0) + 1.0]
    if not routes:
        return None
    route = routes[rng.integers(len(routes))]
    lateral = np.clip(rng.uniform(-1, 1) * spec.lateral_noise + rng.normal(0, 0.03, n),
                      -2 * spec.lateral_noise, 2 * spec.lateral_noise)
    states = _route_states(route.polyline, s - s0, lateral, speeds, 1 - HISTORY)
    for st in states:
        d, half = _nearest_lane_distance(g, st.position)
        if d > half:
            # noise pushed the agent out of the corridor (mid lane change); drive the centre
            return _route_states(route.polyline, s - s0, np.zeros(n), speeds, 1 - HISTORY), route
    return states, route


def _non_road_bound(template: str, spec: GeneratorSpec, rng: np.random.Generator):
    n = HISTORY + FUTURE
    paths = WALK_PATHS[template]
    path = paths[rng.integers(len(paths))]
    if rng.random() < 0.5:
        path = path[::-1].copy()
    v0 = rng.uniform(*spec.walk_speed_range)
    speeds = np.clip(v0 + np.cumsum(rng.normal(0, 0.05, n)), 0.3, None)
    travel = np.concatenate([[0.0], np.cumsum(speeds[:-1] * DT)])
    length = cumulative_arc(path)[-1]
    s0 = rng.uniform(0.0, max(length - travel[-1], 0.0))
    lateral = np.clip(rng.normal(0, 0.15) + rng.normal(0, 0.05, n), -0.6, 0.6)
    return _route_states(path, np.minimum(s0 + travel, length), lateral, speeds, 1 - HISTORY)


def generate_scene(template: str, spec: GeneratorSpec, rng: np.random.Generator, scene_id: str) -> Scene:
    g = build_template(template)
    tracks: list[AgentTrack] = []
    placed: list[np.ndarray] = []
    for i in range(spec.n_rb):
        for _attempt in range(200):
            res = _road_bound(g, template, spec, rng)
            if res is None:
                continue
            states, _ = res
            cur = states[HISTORY - 1].position
            if all(np.linalg.norm(cur - p) >= spec.min_gap for p in placed):
                break
        else:
            raise RuntimeError(f"could not place road-bound agent {i} on template {template}")
        placed.append(cur)
        tracks.append(AgentTrack(f"rb{i}", AgentType.RoadBound, tuple(states), True))
    for i in range(spec.n_nrb):
        states = _non_road_bound(template, spec, rng)
        tracks.append(AgentTrack(f"nrb{i}", AgentType.NonRoadBound, tuple(states), True))
    return Scene(scene_id, tuple(tracks), g.graph_id)


def generate_synthetic_scenes(spec: GeneratorSpec, seed: int) -> list[Scene]:
    """Deterministic for a fixed (spec, seed)."""
    if spec.template not in TEMPLATES:
        raise ValueError(f"unknown lane-graph template {spec.template!r}; choose from {TEMPLATES}")
    rng = np.random.default_rng(seed)
    return [generate_scene(spec.template, spec, rng, f"{spec.template}_{seed}_{i:04d}")
            for i in range(spec.n_scenes)]

