"""Agent-centred, heading-up 10-channel map patches.

Each pixel centre is mapped to world coordinates and tested analytically
against the map geometry, so rotating the world together with the pose
reproduces the same image.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import offset_polyline, points_in_polygon, points_to_polyline_distance
from .lanegraph import CHANNELS, LINE_CHANNELS, LaneGraph

PATCH_PX = 128
PATCH_M = 50.0
LINE_HALF_WIDTH = 0.4  # meters, painted width of border/divider lines


@dataclass(frozen=True, eq=False)
class RasterPatch:
    channels: np.ndarray  # (10, 128, 128) of {0, 1}
    center: np.ndarray
    heading: float
    resolution: float = PATCH_M / PATCH_PX

    def __post_init__(self):
        if self.channels.shape != (len(CHANNELS), PATCH_PX, PATCH_PX):
            raise ValueError(f"raster patch must be {(len(CHANNELS), PATCH_PX, PATCH_PX)}, "
                             f"got {self.channels.shape}")


def pixel_world_coords(center, heading: float, px: int = PATCH_PX, size_m: float = PATCH_M) -> np.ndarray:
    """(px*px, 2) world coordinates of pixel centres, row-major. Row 0 is
    the far end in the heading direction; column 0 is on the left."""
    res = size_m / px
    offs = (np.arange(px) + 0.5 - px / 2) * res
    fwd = np.array([math.cos(heading), math.sin(heading)])
    right = np.array([math.sin(heading), -math.cos(heading)])
    ahead = -offs  # row r -> forward distance
    side = offs    # col c -> distance to the right
    a, s = np.meshgrid(ahead, side, indexing="ij")
    return np.asarray(center, dtype=np.float64) + a.reshape(-1, 1) * fwd + s.reshape(-1, 1) * right


def _near_polyline(pts, poly, half_width):
    return points_to_polyline_distance(pts, poly) <= half_width


def rasterize(g: LaneGraph, center, heading: float) -> RasterPatch:
    """Render the 10 channels (order: ``lanegraph.CHANNELS``) around ``center``
    with ``heading`` pointing up."""
    if not math.isfinite(heading):
        raise ValueError("heading must be finite")
    pts = pixel_world_coords(center, heading)
    reach = PATCH_M * math.sqrt(2) / 2 + 1.0
    c = np.asarray(center, dtype=np.float64)
    masks = np.zeros((len(CHANNELS), PATCH_PX * PATCH_PX), dtype=bool)
    idx = {name: i for i, name in enumerate(CHANNELS)}

    def relevant(poly, pad=0.0, polygon=False):
        if points_to_polyline_distance(c[None], poly)[0] <= reach + pad:
            return True
        return polygon and bool(points_in_polygon(c[None], poly)[0])

    for lane_id in g.lane_ids():
        lane = g[lane_id]
        if not relevant(lane.centerline, lane.width):
            continue
        corridor = points_to_polyline_distance(pts, lane.centerline) <= lane.width / 2 + 1e-9
        masks[idx["drivable"]] |= corridor
        if "intersection" in lane.tags:
            masks[idx["intersection"]] |= corridor
        for side, neighbour in ((1.0, lane.left), (-1.0, lane.right)):
            edge = offset_polyline(lane.centerline, side * lane.width / 2)
            channel = "lane_divider" if neighbour is not None else "lane_border"
            masks[idx[channel]] |= _near_polyline(pts, edge, LINE_HALF_WIDTH)

    for tag, prims in g.extras.items():
        ch = idx[tag]
        for prim in prims:
            is_line = tag in LINE_CHANNELS
            if len(prim) < 2 or not relevant(prim, 1.0, polygon=not is_line):
                continue
            if is_line:
                masks[ch] |= _near_polyline(pts, prim, LINE_HALF_WIDTH)
            else:
                masks[ch] |= points_in_polygon(pts, prim)

    channels = masks.reshape(len(CHANNELS), PATCH_PX, PATCH_PX).astype(np.float64)
    return RasterPatch(channels, c.copy(), float(heading))


def export_patch(patch: RasterPatch, out_dir: str | Path, stem: str = "patch") -> list[Path]:
    """One binary PGM per channel plus a JSON sidecar with the pose."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, name in enumerate(CHANNELS):
        path = out / f"{stem}_{i:02d}_{name}.pgm"
        img = (patch.channels[i] * 255).astype(np.uint8)
        path.write_bytes(f"P5\n{PATCH_PX} {PATCH_PX}\n255\n".encode() + img.tobytes())
        written.append(path)
    side = out / f"{stem}_pose.json"
    side.write_text(json.dumps({"center": patch.center.tolist(), "heading": patch.heading,
                                "resolution": patch.resolution, "channels": list(CHANNELS)}, indent=1))
    written.append(side)
    return written
