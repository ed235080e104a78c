"""Scene types, target-centric frame transforms and network input tensors."""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

HISTORY_STEPS = 10  # 1 s at 10 Hz
FUTURE_STEPS = 16  # 8 s at 2 Hz
HISTORY_DT = 0.1
FUTURE_DT = 0.5
MAX_NEIGHBORS = 10
NEIGHBOR_RADIUS = 30.0
STATE_DIM = 5
SCENE_SCHEMA = "recoat-scene/1"

ROAD_LINE_TYPES = ("road_edge", "solid_white", "broken_white", "yellow")
LIGHT_STATES = ("red", "green")


class SceneError(ValueError):
    """Base class for scene validation problems."""


class RejectedInputError(SceneError):
    """Non-finite coordinates or poses."""


class MalformedSceneError(SceneError):
    """Shapes or fields that break the scene contract."""


class SchemaVersionError(SceneError):
    pass


class AgentType(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


def normalize_angle(a):
    """Map angles to (-pi, pi]; values already in range are returned untouched."""
    a = np.asarray(a, dtype=np.float64)
    wrapped = math.pi - np.mod(math.pi - a, 2.0 * math.pi)
    out = np.where((a > -math.pi) & (a <= math.pi), a, wrapped)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class AgentState:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    heading: float = 0.0
    valid: bool = True

    def __post_init__(self):
        if not self.valid:
            for f in ("x", "y", "vx", "vy", "heading"):
                object.__setattr__(self, f, 0.0)
        else:
            object.__setattr__(self, "heading", float(normalize_angle(self.heading)))

    def as_row(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.heading, float(self.valid)])


def _clean_states(states) -> np.ndarray:
    arr = np.array(states, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise MalformedSceneError(f"track states must have shape (T, 6), got {arr.shape}")
    valid = arr[:, 5] != 0
    arr[:, 5] = valid
    arr[~valid, :5] = 0.0
    arr[:, 4] = normalize_angle(arr[:, 4])
    return arr


@dataclass
class AgentTrack:
    """History of one agent; ``states`` rows are (x, y, vx, vy, heading, valid), oldest first."""

    agent_type: AgentType
    states: np.ndarray

    def __post_init__(self):
        self.agent_type = AgentType(self.agent_type)
        self.states = _clean_states(self.states)

    @classmethod
    def from_states(cls, agent_type, states: Sequence[AgentState]) -> "AgentTrack":
        return cls(agent_type, np.stack([s.as_row() for s in states]))

    def state(self, t: int) -> AgentState:
        x, y, vx, vy, h, v = self.states[t]
        return AgentState(x, y, vx, vy, h, bool(v))

    @property
    def valid(self) -> np.ndarray:
        return self.states[:, 5] != 0

    def last_valid(self) -> np.ndarray | None:
        idx = np.flatnonzero(self.valid)
        return None if idx.size == 0 else self.states[idx[-1]]


def _closed(poly) -> np.ndarray:
    p = np.array(poly, dtype=np.float64).reshape(-1, 2)
    if len(p) and not np.array_equal(p[0], p[-1]):
        p = np.vstack([p, p[:1]])
    return p


@dataclass
class RoadLine:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        if self.kind not in ROAD_LINE_TYPES:
            raise MalformedSceneError(f"unknown road line type {self.kind!r}")
        self.points = np.array(self.points, dtype=np.float64).reshape(-1, 2)


@dataclass
class TrafficLight:
    position: np.ndarray
    state: str

    def __post_init__(self):
        if self.state not in LIGHT_STATES:
            raise MalformedSceneError(f"unknown traffic light state {self.state!r}")
        self.position = np.array(self.position, dtype=np.float64).reshape(2)


@dataclass
class MapContext:
    lanes: list = field(default_factory=list)
    road_lines: list = field(default_factory=list)
    crosswalks: list = field(default_factory=list)
    speed_bumps: list = field(default_factory=list)
    stop_signs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    traffic_lights: list = field(default_factory=list)

    def __post_init__(self):
        self.lanes = [_closed(p) for p in self.lanes]
        self.crosswalks = [_closed(p) for p in self.crosswalks]
        self.speed_bumps = [_closed(p) for p in self.speed_bumps]
        self.road_lines = [r if isinstance(r, RoadLine) else RoadLine(*r) for r in self.road_lines]
        self.stop_signs = np.array(self.stop_signs, dtype=np.float64).reshape(-1, 2)
        self.traffic_lights = [t if isinstance(t, TrafficLight) else TrafficLight(*t)
                               for t in self.traffic_lights]

    def map_points(self, fn) -> "MapContext":
        return MapContext(
            lanes=[fn(p) for p in self.lanes],
            road_lines=[RoadLine(r.kind, fn(r.points)) for r in self.road_lines],
            crosswalks=[fn(p) for p in self.crosswalks],
            speed_bumps=[fn(p) for p in self.speed_bumps],
            stop_signs=fn(self.stop_signs),
            traffic_lights=[TrafficLight(fn(t.position[None])[0], t.state) for t in self.traffic_lights],
        )


@dataclass
class Scene:
    scenario_id: str
    target: AgentTrack
    target_future: np.ndarray
    neighbors: list = field(default_factory=list)
    map: MapContext = field(default_factory=MapContext)
    centerlines: list = field(default_factory=list)
    # ground-truth futures of the neighbors (FUTURE_STEPS, 2) each; optional, used for overlap metrics
    neighbor_futures: list | None = None

    def __post_init__(self):
        self.target_future = np.array(self.target_future, dtype=np.float64).reshape(-1, 2)
        self.centerlines = [np.array(c, dtype=np.float64).reshape(-1, 2) for c in self.centerlines]
        if self.neighbor_futures is not None:
            self.neighbor_futures = [np.array(f, dtype=np.float64).reshape(-1, 2) for f in self.neighbor_futures]

    @property
    def agent_type(self) -> AgentType:
        return self.target.agent_type


def validate_scene(scene: Scene) -> None:
    tracks = [scene.target, *scene.neighbors]
    for tr in tracks:
        if tr.states.shape[0] != HISTORY_STEPS:
            raise MalformedSceneError(f"{scene.scenario_id}: history has {tr.states.shape[0]} states, "
                                      f"expected {HISTORY_STEPS}")
    if scene.target_future.shape != (FUTURE_STEPS, 2):
        raise MalformedSceneError(f"{scene.scenario_id}: target_future shape {scene.target_future.shape}")
    if scene.neighbor_futures is not None:
        if len(scene.neighbor_futures) != len(scene.neighbors):
            raise MalformedSceneError(f"{scene.scenario_id}: neighbor_futures/neighbors length mismatch")
        if any(f.shape != (FUTURE_STEPS, 2) for f in scene.neighbor_futures):
            raise MalformedSceneError(f"{scene.scenario_id}: bad neighbor future shape")
    arrays = [t.states for t in tracks] + [scene.target_future] + scene.centerlines
    m = scene.map
    arrays += m.lanes + m.crosswalks + m.speed_bumps + [r.points for r in m.road_lines] + [m.stop_signs]
    arrays += [t.position for t in m.traffic_lights] + list(scene.neighbor_futures or [])
    if not all(np.isfinite(a).all() for a in arrays):
        raise RejectedInputError(f"{scene.scenario_id}: non-finite coordinates")


# ---------------------------------------------------------------- frame transforms

def _check_pose(pose) -> tuple[float, float, float]:
    x0, y0, h0 = (float(v) for v in pose)
    if not all(math.isfinite(v) for v in (x0, y0, h0)):
        raise RejectedInputError(f"non-finite target pose {pose}")
    return x0, y0, h0


def points_to_frame(points, pose) -> np.ndarray:
    """Express world points (N, 2) in the frame whose origin/heading is ``pose``."""
    x0, y0, h0 = _check_pose(pose)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.isfinite(p).all():
        raise RejectedInputError("non-finite coordinates")
    c, s = math.cos(h0), math.sin(h0)
    dx, dy = p[:, 0] - x0, p[:, 1] - y0
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def points_from_frame(points, pose) -> np.ndarray:
    x0, y0, h0 = _check_pose(pose)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(h0), math.sin(h0)
    return np.stack([c * p[:, 0] - s * p[:, 1] + x0, s * p[:, 0] + c * p[:, 1] + y0], axis=1)


def _track_transform(track: AgentTrack, pose, inverse: bool) -> AgentTrack:
    x0, y0, h0 = _check_pose(pose)
    st = track.states
    if not np.isfinite(st).all():
        raise RejectedInputError("non-finite track state")
    out = st.copy()
    valid = track.valid
    c, s = math.cos(h0), math.sin(h0)
    if inverse:
        out[:, :2] = points_from_frame(st[:, :2], pose)
        out[:, 2] = c * st[:, 2] - s * st[:, 3]
        out[:, 3] = s * st[:, 2] + c * st[:, 3]
        out[:, 4] = normalize_angle(st[:, 4] + h0)
    else:
        out[:, :2] = points_to_frame(st[:, :2], pose)
        out[:, 2] = c * st[:, 2] + s * st[:, 3]
        out[:, 3] = -s * st[:, 2] + c * st[:, 3]
        out[:, 4] = normalize_angle(st[:, 4] - h0)
    out[~valid, :5] = 0.0
    return AgentTrack(track.agent_type, out)


def to_target_frame(track: AgentTrack, target_pose) -> AgentTrack:
    """Translate then rotate ``track`` so ``target_pose`` becomes the origin facing +x."""
    return _track_transform(track, target_pose, inverse=False)


def from_target_frame(track: AgentTrack, target_pose) -> AgentTrack:
    return _track_transform(track, target_pose, inverse=True)


def target_pose(scene: Scene) -> tuple[float, float, float]:
    last = scene.target.last_valid()
    if last is None:
        raise MalformedSceneError(f"{scene.scenario_id}: target has no valid state")
    return float(last[0]), float(last[1]), float(last[4])


def scene_to_target_frame(scene: Scene, pose=None) -> Scene:
    """Apply the target-centric transform to every element of the scene."""
    pose = target_pose(scene) if pose is None else pose

    def fn(p):
        return points_to_frame(p, pose)

    return replace(
        scene,
        target=to_target_frame(scene.target, pose),
        target_future=fn(scene.target_future),
        neighbors=[to_target_frame(n, pose) for n in scene.neighbors],
        map=scene.map.map_points(fn),
        centerlines=[fn(c) for c in scene.centerlines],
        neighbor_futures=None if scene.neighbor_futures is None else [fn(f) for f in scene.neighbor_futures],
    )


# ---------------------------------------------------------------- network inputs

@dataclass
class NeighborTensor:
    data: np.ndarray  # (MAX_NEIGHBORS, HISTORY_STEPS, STATE_DIM)
    count: int
    positions: np.ndarray  # (MAX_NEIGHBORS, 2) t0 positions, zero rows for padding
    indices: tuple[int, ...] = ()  # source indices into scene.neighbors


def build_neighbor_tensor(scene: Scene) -> NeighborTensor:
    """Up to ten nearest neighbors within 30 m, nearest first, zero padded.

    Distance uses each neighbor's last valid state; tracks with no valid state
    are dropped.  Ties keep input order.
    """
    cands = []
    for i, nb in enumerate(scene.neighbors):
        last = nb.last_valid()
        if last is None:
            continue
        d = math.hypot(last[0], last[1])
        if d <= NEIGHBOR_RADIUS:
            cands.append((d, i, last[:2]))
    cands.sort(key=lambda c: c[0])  # stable
    cands = cands[:MAX_NEIGHBORS]
    data = np.zeros((MAX_NEIGHBORS, HISTORY_STEPS, STATE_DIM))
    pos = np.zeros((MAX_NEIGHBORS, 2))
    for row, (_, i, p) in enumerate(cands):
        st = scene.neighbors[i].states
        if st.shape[0] != HISTORY_STEPS:
            raise MalformedSceneError(f"{scene.scenario_id}: neighbor {i} history length {st.shape[0]}")
        data[row] = st[:, :STATE_DIM]
        pos[row] = p
    return NeighborTensor(data, len(cands), pos, tuple(c[1] for c in cands))


def target_state_tensor(scene: Scene) -> np.ndarray:
    st = scene.target.states
    if st.shape[0] != HISTORY_STEPS:
        raise MalformedSceneError(f"{scene.scenario_id}: target history has {st.shape[0]} states, "
                                  f"expected {HISTORY_STEPS}")
    return st[:, :STATE_DIM].copy()


def target_speed(scene: Scene) -> float:
    last = scene.target.last_valid()
    return 0.0 if last is None else float(math.hypot(last[2], last[3]))


# ---------------------------------------------------------------- scene files

def scene_to_dict(scene: Scene) -> dict:
    def track(t: AgentTrack):
        rows = t.states.tolist()
        for r in rows:
            r[5] = int(r[5])
        return {"type": t.agent_type.value, "states": rows}

    m = scene.map
    out = {
        "version": SCENE_SCHEMA,
        "scenario_id": scene.scenario_id,
        "target": track(scene.target),
        "target_future": scene.target_future.tolist(),
        "neighbors": [track(n) for n in scene.neighbors],
        "map": {
            "lanes": [p.tolist() for p in m.lanes],
            "road_lines": [{"type": r.kind, "points": r.points.tolist()} for r in m.road_lines],
            "crosswalks": [p.tolist() for p in m.crosswalks],
            "speed_bumps": [p.tolist() for p in m.speed_bumps],
            "stop_signs": m.stop_signs.tolist(),
            "traffic_lights": [{"position": t.position.tolist(), "state": t.state} for t in m.traffic_lights],
        },
        "centerlines": [c.tolist() for c in scene.centerlines],
    }
    if scene.neighbor_futures is not None:
        out["neighbor_futures"] = [f.tolist() for f in scene.neighbor_futures]
    return out


def scene_from_dict(d: dict) -> Scene:
    version = d.get("version")
    if version != SCENE_SCHEMA:
        raise SchemaVersionError(f"unsupported scene schema {version!r}, expected {SCENE_SCHEMA!r}")
    try:
        m = d["map"]
        scene = Scene(
            scenario_id=str(d["scenario_id"]),
            target=AgentTrack(d["target"]["type"], d["target"]["states"]),
            target_future=d["target_future"],
            neighbors=[AgentTrack(n["type"], n["states"]) for n in d["neighbors"]],
            map=MapContext(
                lanes=m["lanes"],
                road_lines=[RoadLine(r["type"], r["points"]) for r in m["road_lines"]],
                crosswalks=m["crosswalks"],
                speed_bumps=m["speed_bumps"],
                stop_signs=m["stop_signs"],
                traffic_lights=[TrafficLight(t["position"], t["state"]) for t in m["traffic_lights"]],
            ),
            centerlines=d["centerlines"],
            neighbor_futures=d.get("neighbor_futures"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise MalformedSceneError(f"malformed scene field: {exc!r}") from exc
    validate_scene(scene)
    return scene


def write_scene(scene: Scene, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), separators=(",", ":")))


def read_scene(path: str | os.PathLike) -> Scene:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedSceneError(f"{path}: invalid JSON ({exc})") from exc
    return scene_from_dict(d)
