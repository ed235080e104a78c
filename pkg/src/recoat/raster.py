"""Semantic bird's-eye-view rendering of a target-frame scene.

The image is 240x240x3 uint8.  The target sits at row 120, column 48 facing
image-right; 4/5 of the image lies ahead of it.  Geometry is scan-converted on
pixel centers with no anti-aliasing, so output bytes are a pure function of the
scene, the palette and the config.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image, PngImagePlugin

from .scene import AgentType, Scene

IMAGE_SIZE = 240
ANCHOR_COL = IMAGE_SIZE // 5
ANCHOR_ROW = IMAGE_SIZE // 2
EXTENT_M = {AgentType.VEHICLE: 80.0, AgentType.CYCLIST: 60.0, AgentType.PEDESTRIAN: 40.0}

PALETTE_KEYS = (
    "background", "lane", "crosswalk", "speed_bump", "road_edge", "solid_white", "broken_white",
    "yellow", "centerline", "vehicle", "pedestrian", "cyclist", "stop_sign", "light_red",
    "light_green", "target",
)


class PaletteError(ValueError):
    pass


@dataclass(frozen=True)
class RasterPalette:
    colors: Mapping[str, tuple[int, int, int]]

    def __post_init__(self):
        missing = set(PALETTE_KEYS) - set(self.colors)
        if missing:
            raise PaletteError(f"palette missing entries: {sorted(missing)}")
        clean = {}
        for k, v in self.colors.items():
            rgb = tuple(int(c) for c in v)
            if len(rgb) != 3 or not all(0 <= c <= 255 for c in rgb):
                raise PaletteError(f"palette entry {k!r} is not an RGB triple: {v}")
            clean[k] = rgb
        if len(set(clean.values())) != len(clean):
            raise PaletteError("palette entries must be distinct")
        object.__setattr__(self, "colors", clean)

    def __getitem__(self, key: str) -> tuple[int, int, int]:
        return self.colors[key]


def load_palette(path: str | os.PathLike | None = None) -> RasterPalette:
    """Read a name -> [r, g, b] JSON file; ``None`` gives the packaged default."""
    if path is None:
        text = resources.files("recoat").joinpath("data/palette.json").read_text()
    else:
        text = Path(path).read_text()
    return RasterPalette(json.loads(text))


def save_palette(palette: RasterPalette, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps({k: list(v) for k, v in palette.colors.items()}, indent=2))


@dataclass(frozen=True)
class RasterConfig:
    # box (length, width) in meters
    box_size: Mapping[AgentType, tuple[float, float]] = field(default_factory=lambda: {
        AgentType.VEHICLE: (4.5, 2.0),
        AgentType.PEDESTRIAN: (0.8, 0.8),
        AgentType.CYCLIST: (1.8, 0.6),
    })
    tail_steps: int = 10
    dash_on_m: float = 3.0
    dash_off_m: float = 3.0
    stop_sign_radius_m: float = 1.0
    light_radius_m: float = 1.0


@dataclass
class RasterImage:
    pixels: np.ndarray
    meters_per_pixel: float


def meters_per_pixel(agent_type) -> float:
    return EXTENT_M[AgentType(agent_type)] / IMAGE_SIZE


class _Canvas:
    def __init__(self, mpp: float, background):
        self.mpp = mpp
        self.img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
        self.img[:] = background

    def to_px(self, pts) -> np.ndarray:
        """World (x, y) in meters -> continuous (col, row); pixel centers sit at +0.5."""
        p = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.stack([ANCHOR_COL + 0.5 + p[:, 0] / self.mpp,
                         ANCHOR_ROW + 0.5 - p[:, 1] / self.mpp], axis=1)

    def fill_polygon(self, poly_m, color) -> None:
        pts = self.to_px(poly_m)
        if len(pts) < 3:
            return
        c0 = max(int(math.floor(pts[:, 0].min())), 0)
        c1 = min(int(math.ceil(pts[:, 0].max())), IMAGE_SIZE)
        r0 = max(int(math.floor(pts[:, 1].min())), 0)
        r1 = min(int(math.ceil(pts[:, 1].max())), IMAGE_SIZE)
        if c0 >= c1 or r0 >= r1:
            return
        cx = np.arange(c0, c1) + 0.5
        cy = (np.arange(r0, r1) + 0.5)[:, None]
        inside = np.zeros((r1 - r0, c1 - c0), dtype=bool)
        a = pts
        b = np.roll(pts, -1, axis=0)
        for (xa, ya), (xb, yb) in zip(a, b):
            if ya == yb:
                continue
            crosses = (ya > cy) != (yb > cy)
            x_int = xa + (cy - ya) * (xb - xa) / (yb - ya)
            inside ^= crosses & (cx < x_int)
        self.img[r0:r1, c0:c1][inside] = color

    def draw_polyline(self, line_m, color, dash: tuple[float, float] | None = None) -> None:
        pts = self.to_px(line_m)
        if len(pts) == 0:
            return
        if len(pts) == 1:
            samples = pts
            arclen = np.zeros(1)
        else:
            chunks, lens = [], []
            offset = 0.0
            for a, b in zip(pts[:-1], pts[1:]):
                seg = float(np.hypot(*(b - a)))
                n = max(int(math.ceil(seg * 2.0)), 1)
                t = np.arange(n + 1) / n
                chunks.append(a + t[:, None] * (b - a))
                lens.append(offset + t * seg)
                offset += seg
            samples = np.concatenate(chunks)
            arclen = np.concatenate(lens) * self.mpp
        if dash is not None:
            on, off = dash
            keep = np.mod(arclen, on + off) < on
            samples = samples[keep]
        self._plot(samples, color)

    def _plot(self, samples, color) -> None:
        cols = np.floor(samples[:, 0]).astype(np.int64)
        rows = np.floor(samples[:, 1]).astype(np.int64)
        ok = (cols >= 0) & (cols < IMAGE_SIZE) & (rows >= 0) & (rows < IMAGE_SIZE)
        self.img[rows[ok], cols[ok]] = color

    def fill_circle(self, center_m, radius_m, color) -> None:
        (cc, rc), = self.to_px(center_m)
        rad = max(radius_m / self.mpp, 0.5)
        c0, c1 = max(int(math.floor(cc - rad)), 0), min(int(math.ceil(cc + rad)), IMAGE_SIZE)
        r0, r1 = max(int(math.floor(rc - rad)), 0), min(int(math.ceil(rc + rad)), IMAGE_SIZE)
        if c0 >= c1 or r0 >= r1:
            return
        dx = np.arange(c0, c1) + 0.5 - cc
        dy = (np.arange(r0, r1) + 0.5 - rc)[:, None]
        inside = dx * dx + dy * dy <= rad * rad
        if not inside.any():
            # keep sub-pixel markers visible
            inside[min(max(int(rc) - r0, 0), r1 - r0 - 1), min(max(int(cc) - c0, 0), c1 - c0 - 1)] = True
        self.img[r0:r1, c0:c1][inside] = color

    def fill_box(self, x, y, heading, length, width, color) -> None:
        c, s = math.cos(heading), math.sin(heading)
        hl, hw = length / 2.0, width / 2.0
        corners = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        poly = [(x + c * u - s * v, y + s * u + c * v) for u, v in corners]
        self.fill_polygon(poly, color)
        # a box thinner than a pixel still marks its center pixel
        self._plot(self.to_px([(x, y)]), color)


def rasterize(scene: Scene, agent_type=None, palette: RasterPalette | None = None,
              config: RasterConfig | None = None) -> RasterImage:
    """Render a target-frame scene.  ``agent_type`` defaults to the target's type and sets the scale."""
    palette = palette or DEFAULT_PALETTE
    config = config or RasterConfig()
    agent_type = AgentType(agent_type or scene.agent_type)
    mpp = meters_per_pixel(agent_type)
    cv = _Canvas(mpp, palette["background"])
    m = scene.map

    for lane in m.lanes:
        cv.fill_polygon(lane, palette["lane"])
    for poly in m.crosswalks:
        cv.fill_polygon(poly, palette["crosswalk"])
    for poly in m.speed_bumps:
        cv.fill_polygon(poly, palette["speed_bump"])
    for line in m.road_lines:
        dash = (config.dash_on_m, config.dash_off_m) if line.kind == "broken_white" else None
        cv.draw_polyline(line.points, palette[line.kind], dash)
    for cl in scene.centerlines:
        cv.draw_polyline(cl, palette["centerline"])

    tracks = [(nb, palette[nb.agent_type.value]) for nb in scene.neighbors]
    for track, color in tracks + [(scene.target, palette["target"])]:
        st = track.states[-config.tail_steps:]
        st = st[st[:, 5] != 0]
        if len(st) >= 2:
            cv.draw_polyline(st[:, :2], color)
    for track, color in tracks:
        last = track.last_valid()
        if last is None:
            continue
        length, width = config.box_size[track.agent_type]
        cv.fill_box(last[0], last[1], last[4], length, width, color)
    for pos in m.stop_signs:
        cv.fill_circle(pos, config.stop_sign_radius_m, palette["stop_sign"])
    for light in m.traffic_lights:
        cv.fill_circle(light.position, config.light_radius_m, palette[f"light_{light.state}"])

    last = scene.target.last_valid()
    x, y, h = (0.0, 0.0, 0.0) if last is None else (last[0], last[1], last[4])
    length, width = config.box_size[scene.agent_type]
    cv.fill_box(x, y, h, length, width, palette["target"])
    return RasterImage(cv.img, mpp)


# ---------------------------------------------------------------- file output

def export_image(img: RasterImage, path: str | os.PathLike) -> None:
    """Write a PNG; the scale is kept in a text chunk."""
    info = PngImagePlugin.PngInfo()
    info.add_text("meters_per_pixel", repr(float(img.meters_per_pixel)))
    try:
        Image.fromarray(np.ascontiguousarray(img.pixels, dtype=np.uint8)).save(path, format="PNG", pnginfo=info)
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def import_image(path: str | os.PathLike) -> RasterImage:
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        mpp = float(im.info.get("meters_per_pixel", "nan"))
    return RasterImage(pixels, mpp)


def image_filename(scenario_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", scenario_id) + ".png"


def export_batch(scenes: Iterable[Scene], out_dir: str | os.PathLike, palette: RasterPalette | None = None,
                 config: RasterConfig | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sc in scenes:
        p = out_dir / image_filename(sc.scenario_id)
        export_image(rasterize(sc, palette=palette, config=config), p)
        paths.append(p)
    return paths


DEFAULT_PALETTE = load_palette()
