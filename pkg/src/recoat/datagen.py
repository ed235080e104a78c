"""Synthetic multi-intent driving scenarios with known ground truth.

Scenes are laid out in a road frame (target lane along +x, right-hand
traffic, lane width 3.5 m), then placed in the world with a random rigid pose.
The target follows one of four intents: straight, left_turn, right_turn or
stop.  Turning targets are already a little way into their arc at t0 and
stopping targets are already braking, so the history carries the intent.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .scene import (FUTURE_DT, FUTURE_STEPS, HISTORY_DT, HISTORY_STEPS, AgentTrack, AgentType, MapContext,
                    RoadLine, Scene, TrafficLight, normalize_angle, points_from_frame, read_scene, write_scene)

INTENTS = ("straight", "left_turn", "right_turn", "stop")
TEMPLATES = ("straight_road", "T_junction", "crossroad")
COMPATIBLE = {
    "straight_road": ("straight", "stop"),
    "T_junction": ("left_turn", "right_turn", "stop"),
    "crossroad": INTENTS,
}
LANE_W = 3.5
LEFT_RADIUS = 9.5
RIGHT_RADIUS = 6.0
BRAKE_DECEL = 1.5
ROAD_BACK = -60.0
ROAD_AHEAD = 100.0
SPEED_RANGE = {
    AgentType.VEHICLE: (3.0, 8.0),
    AgentType.CYCLIST: (2.0, 5.0),
    AgentType.PEDESTRIAN: (0.6, 1.8),
}

__all__ = ["ScenarioSpec", "generate", "sample_spec", "generate_dataset", "read_manifest", "classify_intent",
           "write_scene", "read_scene", "INTENTS", "TEMPLATES"]


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    intent: str = "straight"
    speed_range: tuple[float, float] = (3.0, 8.0)
    neighbor_range: tuple[int, int] = (0, 12)
    map_template: str = "crossroad"
    agent_type: AgentType = AgentType.VEHICLE
    noise_sigma: float = 0.1
    # how far (m) a turning target has travelled into its arc at t0
    turn_progress: tuple[float, float] = (2.0, 2.0)
    random_pose: bool = True

    def __post_init__(self):
        object.__setattr__(self, "agent_type", AgentType(self.agent_type))
        lo, hi = self.speed_range
        if not 0.0 <= lo <= hi <= 20.0:
            raise ValueError(f"speed range {self.speed_range} must lie within [0, 20]")
        nlo, nhi = self.neighbor_range
        if not 0 <= nlo <= nhi <= 12:
            raise ValueError(f"neighbor range {self.neighbor_range} must lie within [0, 12]")
        if self.intent not in INTENTS:
            raise ValueError(f"unknown intent {self.intent!r}")
        if self.map_template not in TEMPLATES:
            raise ValueError(f"unknown map template {self.map_template!r}")
        if self.intent not in COMPATIBLE[self.map_template]:
            raise ValueError(f"intent {self.intent!r} cannot be realised on {self.map_template!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def sample_spec(seed: int, agent_type=AgentType.VEHICLE, **overrides) -> ScenarioSpec:
    """Uniform intent, then a uniformly chosen compatible template."""
    rng = np.random.default_rng([seed, 7])
    intent = INTENTS[rng.integers(len(INTENTS))]
    options = [t for t in TEMPLATES if intent in COMPATIBLE[t]]
    template = options[rng.integers(len(options))]
    agent_type = AgentType(agent_type)
    kw = dict(seed=seed, intent=intent, map_template=template, agent_type=agent_type,
              speed_range=SPEED_RANGE[agent_type])
    kw.update(overrides)
    return ScenarioSpec(**kw)


# ---------------------------------------------------------------- paths

@dataclass
class _Path:
    """Straight along +x from x=start to x=arc_start, then optionally a 90 degree arc, then straight."""

    arc_start: float
    radius: float = 0.0
    turn: int = 0  # +1 left, -1 right, 0 none

    def pose(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=np.float64)
        if self.turn == 0:
            return s.copy(), np.zeros_like(s), np.zeros_like(s)
        r, sign = self.radius, self.turn
        arc_len = 0.5 * math.pi * r
        u = s - self.arc_start
        pre = u <= 0
        post = u >= arc_len
        phi = np.clip(u, 0.0, arc_len) / r
        x = np.where(pre, s, self.arc_start + r * np.sin(phi))
        y = np.where(pre, 0.0, sign * r * (1.0 - np.cos(phi)))
        h = np.where(pre, 0.0, sign * phi)
        extra = np.maximum(u - arc_len, 0.0)
        x = np.where(post, self.arc_start + r, x)
        y = np.where(post, sign * (r + extra), y)
        return x, y, h


def _polyline(path: _Path, s0: float, s1: float, step: float = 1.0) -> np.ndarray:
    s = np.arange(s0, s1 + 1e-9, step)
    x, y, _ = path.pose(s)
    return np.stack([x, y], axis=1)


def _rect(x0, x1, y0, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])


# ---------------------------------------------------------------- generation

def _target_motion(spec: ScenarioSpec, rng) -> tuple[_Path, np.ndarray, np.ndarray, float, float]:
    """Return the path, path-length samples for history/future, the junction x and speed."""
    v0 = float(rng.uniform(*spec.speed_range))
    th = (np.arange(HISTORY_STEPS) - (HISTORY_STEPS - 1)) * HISTORY_DT  # -0.9 .. 0
    tf = np.arange(1, FUTURE_STEPS + 1) * FUTURE_DT
    if spec.intent in ("left_turn", "right_turn"):
        left = spec.intent == "left_turn"
        progress = float(rng.uniform(*spec.turn_progress))
        radius = LEFT_RADIUS if left else RIGHT_RADIUS
        # arc start such that both turns land in the proper cross-road lane
        junction_x = -progress + LEFT_RADIUS - LANE_W / 2
        path = _Path(arc_start=-progress, radius=radius, turn=1 if left else -1)
        return path, v0 * th, v0 * tf, junction_x, v0
    path = _Path(arc_start=0.0)
    if spec.intent == "stop":
        a = BRAKE_DECEL
        t_stop = v0 / a
        sh = v0 * th - 0.5 * a * th**2
        tc = np.minimum(tf, t_stop)
        sf = v0 * tc - 0.5 * a * tc**2
        junction_x = v0 * v0 / (2 * a) + LANE_W
        return path, sh, sf, junction_x, v0
    junction_x = float(rng.uniform(10.0, 30.0))
    return path, v0 * th, v0 * tf, junction_x, v0


def _speeds(spec: ScenarioSpec, v0: float) -> np.ndarray:
    th = (np.arange(HISTORY_STEPS) - (HISTORY_STEPS - 1)) * HISTORY_DT
    if spec.intent == "stop":
        return v0 - BRAKE_DECEL * th
    return np.full(HISTORY_STEPS, v0)


def _map_and_centerlines(spec: ScenarioSpec, junction_x: float, rng) -> tuple[MapContext, list[np.ndarray]]:
    w = LANE_W
    tmpl = spec.map_template
    lanes, lines, crosswalks, bumps, lights, signs = [], [], [], [], [], []
    arc_start = junction_x - (LEFT_RADIUS - w / 2)
    if tmpl == "straight_road":
        lanes += [_rect(ROAD_BACK, ROAD_AHEAD, -w / 2, w / 2), _rect(ROAD_BACK, ROAD_AHEAD, w / 2, 1.5 * w)]
        for y, kind in ((-w / 2, "road_edge"), (1.5 * w, "road_edge"), (w / 2, "yellow")):
            lines.append(RoadLine(kind, [[ROAD_BACK, y], [ROAD_AHEAD, y]]))
        lines.append(RoadLine("solid_white", [[ROAD_BACK, -w / 2 + 0.2], [ROAD_AHEAD, -w / 2 + 0.2]]))
        if rng.random() < 0.5:
            bx = float(rng.uniform(15.0, 40.0))
            bumps.append(_rect(bx, bx + 1.0, -w / 2, 1.5 * w))
        if spec.intent == "stop":
            signs.append([junction_x - w, -w / 2 - 1.0])
        centers = [np.array([[ROAD_BACK / 6, 0.0], [ROAD_AHEAD, 0.0]])]
    else:
        main_end = junction_x - w if tmpl == "T_junction" else ROAD_AHEAD
        lanes += [_rect(ROAD_BACK, main_end, -w / 2, w / 2), _rect(ROAD_BACK, main_end, w / 2, 1.5 * w)]
        lanes += [_rect(junction_x - w, junction_x, -60.0, 60.0), _rect(junction_x, junction_x + w, -60.0, 60.0)]
        for y in (-w / 2, 1.5 * w):
            lines.append(RoadLine("road_edge", [[ROAD_BACK, y], [junction_x - w, y]]))
            if tmpl == "crossroad":
                lines.append(RoadLine("road_edge", [[junction_x + w, y], [ROAD_AHEAD, y]]))
        lines.append(RoadLine("yellow", [[ROAD_BACK, w / 2], [junction_x - w, w / 2]]))
        lines.append(RoadLine("broken_white", [[junction_x, -60.0], [junction_x, -w / 2]]))
        lines.append(RoadLine("broken_white", [[junction_x, 1.5 * w], [junction_x, 60.0]]))
        if tmpl == "T_junction":
            lines.append(RoadLine("road_edge", [[junction_x + w, -60.0], [junction_x + w, 60.0]]))
        crosswalks.append(_rect(junction_x - w - 3.0, junction_x - w - 0.5, -w / 2, 1.5 * w))
        state = "red" if spec.intent == "stop" else "green"
        lights.append(TrafficLight([junction_x - w, 0.0], state))
        if spec.intent == "stop":
            signs.append([junction_x - w, -w / 2 - 1.0])
        start = min(ROAD_BACK / 6, arc_start - 5.0)
        centers = [_polyline(_Path(arc_start, LEFT_RADIUS, 1), start, arc_start + 40.0),
                   _polyline(_Path(arc_start, RIGHT_RADIUS, -1), start, arc_start + 40.0)]
        if tmpl == "crossroad":
            centers.insert(0, np.array([[start, 0.0], [ROAD_AHEAD, 0.0]]))
    return MapContext(lanes=lanes, road_lines=lines, crosswalks=crosswalks, speed_bumps=bumps,
                      stop_signs=np.array(signs, dtype=np.float64).reshape(-1, 2),
                      traffic_lights=lights), centers


def _neighbors(spec: ScenarioSpec, junction_x: float, rng) -> tuple[list[AgentTrack], list[np.ndarray]]:
    n = int(rng.integers(spec.neighbor_range[0], spec.neighbor_range[1] + 1))
    th = (np.arange(HISTORY_STEPS) - (HISTORY_STEPS - 1)) * HISTORY_DT
    tf = np.arange(1, FUTURE_STEPS + 1) * FUTURE_DT
    w = LANE_W
    tracks, futures = [], []
    for _ in range(n):
        kind = rng.integers(6)
        agent_type = AgentType.VEHICLE
        speed = float(rng.uniform(0.0, 10.0))
        if kind <= 1:  # same lane, keep a gap
            s = float(rng.choice([-1.0, 1.0]) * rng.uniform(8.0, 40.0))
            origin, heading = np.array([s, 0.0]), 0.0
        elif kind <= 3:  # oncoming lane
            origin, heading = np.array([float(rng.uniform(-35.0, 45.0)), w]), math.pi
        elif kind == 4:  # cross road
            south = rng.random() < 0.5
            x = junction_x - w / 2 if south else junction_x + w / 2
            origin = np.array([x, float(rng.uniform(-30.0, 30.0))])
            heading = -math.pi / 2 if south else math.pi / 2
        else:  # pedestrian or cyclist along the roadside
            agent_type = AgentType.PEDESTRIAN if rng.random() < 0.5 else AgentType.CYCLIST
            speed = float(rng.uniform(0.5, 1.5) if agent_type is AgentType.PEDESTRIAN else rng.uniform(2.0, 5.0))
            origin = np.array([float(rng.uniform(-25.0, 35.0)), -w / 2 - 1.5])
            heading = 0.0 if rng.random() < 0.5 else math.pi
        d = np.array([math.cos(heading), math.sin(heading)])
        hist = origin + (speed * th)[:, None] * d
        fut = origin + (speed * tf)[:, None] * d
        if spec.noise_sigma > 0:
            hist = hist + rng.normal(0.0, spec.noise_sigma, hist.shape)
            fut = fut + rng.normal(0.0, spec.noise_sigma, fut.shape)
        states = np.zeros((HISTORY_STEPS, 6))
        states[:, :2] = hist
        states[:, 2:4] = speed * d
        states[:, 4] = heading
        states[:, 5] = 1.0
        # some tracks start late
        if rng.random() < 0.1:
            states[: int(rng.integers(1, 5))] = 0.0
        tracks.append(AgentTrack(agent_type, states))
        futures.append(fut)
    return tracks, futures


def generate(spec: ScenarioSpec) -> Scene:
    """Build one scene in world coordinates."""
    rng = np.random.default_rng(spec.seed)
    path, sh, sf, junction_x, v0 = _target_motion(spec, rng)
    xh, yh, hh = path.pose(sh)
    xf, yf, _ = path.pose(sf)
    speeds = _speeds(spec, v0)
    hist = np.stack([xh, yh], axis=1)
    fut = np.stack([xf, yf], axis=1)
    if spec.noise_sigma > 0:
        hist = hist + rng.normal(0.0, spec.noise_sigma, hist.shape)
        fut = fut + rng.normal(0.0, spec.noise_sigma, fut.shape)
    states = np.zeros((HISTORY_STEPS, 6))
    states[:, :2] = hist
    states[:, 2] = speeds * np.cos(hh)
    states[:, 3] = speeds * np.sin(hh)
    states[:, 4] = hh
    states[:, 5] = 1.0

    # road frame has the target at t0 near its history end; shift so it is the origin
    shift = np.array([xh[-1], yh[-1]])
    map_ctx, centers = _map_and_centerlines(spec, junction_x, rng)
    neighbors, nb_futures = _neighbors(spec, junction_x, rng)

    if spec.random_pose:
        pose = (float(rng.uniform(-500, 500)), float(rng.uniform(-500, 500)), float(rng.uniform(-math.pi, math.pi)))
    else:
        pose = (0.0, 0.0, 0.0)
    h0 = pose[2]

    def place(p):
        return points_from_frame(np.asarray(p, dtype=np.float64).reshape(-1, 2) - shift, pose)

    def place_track(tr: AgentTrack) -> AgentTrack:
        st = tr.states.copy()
        valid = st[:, 5] != 0
        c, s = math.cos(h0), math.sin(h0)
        st[:, :2] = place(st[:, :2])
        vx, vy = st[:, 2].copy(), st[:, 3].copy()
        st[:, 2] = c * vx - s * vy
        st[:, 3] = s * vx + c * vy
        st[:, 4] = normalize_angle(st[:, 4] + h0)
        st[~valid, :5] = 0.0
        return AgentTrack(tr.agent_type, st)

    return Scene(
        scenario_id=f"syn-{spec.seed:08d}",
        target=place_track(AgentTrack(spec.agent_type, states)),
        target_future=place(fut),
        neighbors=[place_track(t) for t in neighbors],
        map=map_ctx.map_points(place),
        centerlines=[place(c) for c in centers],
        neighbor_futures=[place(f) for f in nb_futures],
    )


def classify_intent(future: np.ndarray, initial_heading: float = 0.0, stop_eps: float = 0.25) -> str:
    """Heading-change classifier on a target-frame future (T, 2)."""
    fut = np.asarray(future, dtype=np.float64)
    pts = np.vstack([[0.0, 0.0], fut])
    step = np.hypot(*np.diff(pts, axis=0).T)
    if step[-1] < stop_eps:
        return "stop"
    d = pts[-1] - pts[-2]
    dh = float(normalize_angle(math.atan2(d[1], d[0]) - initial_heading))
    if dh > math.pi / 4:
        return "left_turn"
    if dh < -math.pi / 4:
        return "right_turn"
    return "straight"


# ---------------------------------------------------------------- datasets

def generate_dataset(out_dir: str | os.PathLike, count: int, seed: int = 0, agent_type=AgentType.VEHICLE,
                     **spec_overrides) -> Path:
    """Write ``count`` scenes plus ``manifest.csv`` (path, intent, template) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        spec = sample_spec(seed * 1_000_003 + i, agent_type, **spec_overrides)
        scene = generate(spec)
        name = f"{scene.scenario_id}.json"
        write_scene(scene, out / name)
        rows.append((name, spec.intent, spec.map_template))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "intent", "template"])
        w.writerows(rows)
    return manifest


def read_manifest(path: str | os.PathLike) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["path"] = str(path.parent / r["path"])
    return rows


def iter_dataset(path: str | os.PathLike) -> Iterator[Scene]:
    """Scenes from a manifest file or a directory holding one."""
    path = Path(path)
    manifest = path / "manifest.csv" if path.is_dir() else path
    for row in read_manifest(manifest):
        yield read_scene(row["path"])
