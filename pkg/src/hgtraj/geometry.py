"""Planar polyline/polygon helpers shared by the map, raster and scene-graph code."""
from __future__ import annotations

import math

import numpy as np


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def heading_of(v) -> float:
    return math.atan2(float(v[1]), float(v[0]))


def cumulative_arc(poly: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def interpolate(poly: np.ndarray, arc: np.ndarray, s):
    """Point(s) at arc length ``s`` (clamped to the polyline)."""
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, arc[-1])
    idx = np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(poly) - 2)
    seg_len = arc[idx + 1] - arc[idx]
    t = np.where(seg_len > 0, (s - arc[idx]) / np.where(seg_len > 0, seg_len, 1.0), 0.0)
    t = t[..., None] if np.ndim(s) else t
    return poly[idx] + t * (poly[idx + 1] - poly[idx])


def sub_polyline(poly: np.ndarray, arc: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Portion of the polyline between arc positions ``s0 <= s1``."""
    inner = poly[(arc > s0) & (arc < s1)]
    pts = [interpolate(poly, arc, s0)[None], inner, interpolate(poly, arc, s1)[None]]
    return np.concatenate(pts, axis=0)


def dedupe(poly: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if len(poly) < 2:
        return poly
    keep = np.concatenate([[True], np.linalg.norm(np.diff(poly, axis=0), axis=1) > tol])
    return poly[keep]


def project_to_polyline(poly: np.ndarray, p) -> tuple[float, float, int, np.ndarray]:
    """Closest point on ``poly`` to ``p``.

    Returns (distance, arc position of the foot, segment index, foot point).
    Ties go to the earliest segment.
    """
    p = np.asarray(p, dtype=np.float64)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    foot = a + t[:, None] * ab
    d = np.linalg.norm(foot - p, axis=1)
    i = int(np.argmin(d))
    seg = np.sqrt(denom)
    arc = float(np.sum(seg[:i]) + t[i] * seg[i])
    return float(d[i]), arc, i, foot[i]


def points_to_segments_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance matrix (P, S) from points to segments a->b."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    ap = points[:, None, :] - a[None, :, :]
    t = np.einsum("psk,sk->ps", ap, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    d = ap - t[..., None] * ab[None]
    return np.sqrt(np.einsum("psk,psk->ps", d, d))


def points_to_polyline_distance(points: np.ndarray, poly: np.ndarray, chunk: int = 4096) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        out[lo:lo + chunk] = points_to_segments_distance(points[lo:lo + chunk], poly[:-1], poly[1:]).min(axis=1)
    return out


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule; points on the boundary may fall either way."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    px, py = poly[:, 0], poly[:, 1]
    j = len(poly) - 1
    for i in range(len(poly)):
        xi, yi, xj, yj = px[i], py[i], px[j], py[j]
        cond = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= cond & (x < xc)
        j = i
    return inside


def offset_polyline(poly: np.ndarray, d: float) -> np.ndarray:
    """Shift vertices by ``d`` along the left normal (vertex normals averaged)."""
    seg = np.diff(poly, axis=0)
    seg = seg / np.linalg.norm(seg, axis=1, keepdims=True)
    normals = np.stack([-seg[:, 1], seg[:, 0]], axis=1)
    vn = np.empty_like(poly)
    vn[0], vn[-1] = normals[0], normals[-1]
    if len(poly) > 2:
        avg = normals[:-1] + normals[1:]
        vn[1:-1] = avg / np.linalg.norm(avg, axis=1, keepdims=True)
    return poly + d * vn


def segment_intersections(p: np.ndarray, q: np.ndarray) -> list[tuple[int, float, int, float]]:
    """All proper-or-touching intersections between segments of polylines
    ``p`` and ``q``. Returns (seg_p, t_p, seg_q, t_q) with t in [0, 1].
    Collinear overlaps are ignored.
    """
    a, b = p[:-1], p[1:]
    c, d = q[:-1], q[1:]
    r = b - a
    s = d - c
    rxs = r[:, None, 0] * s[None, :, 1] - r[:, None, 1] * s[None, :, 0]
    ca = c[None, :, :] - a[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ca[..., 0] * s[None, :, 1] - ca[..., 1] * s[None, :, 0]) / rxs
        u = (ca[..., 0] * r[:, None, 1] - ca[..., 1] * r[:, None, 0]) / rxs
    eps = 1e-12
    hit = (np.abs(rxs) > eps) & (t >= -eps) & (t <= 1 + eps) & (u >= -eps) & (u <= 1 + eps)
    ii, jj = np.nonzero(hit)
    return [(int(i), float(np.clip(t[i, j], 0, 1)), int(j), float(np.clip(u[i, j], 0, 1)))
            for i, j in zip(ii, jj)]


def arc_polyline(center, radius: float, a0: float, a1: float, n: int) -> np.ndarray:
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])
