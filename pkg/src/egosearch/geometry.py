"""Analytic primitives for oriented boxes: overlap tests and ray intersection.

All solids are yaw-oriented boxes (no general rotation), so every query
reduces to a 2D rotation into the box frame plus axis-aligned tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Box:
    """Oriented box: center, half-extents (all strictly positive), yaw about z."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not all(h > 0 for h in self.half_extents):
            raise ValueError(f"half_extents must be strictly positive: {self.half_extents}")

    @property
    def z_interval(self) -> tuple[float, float]:
        return (self.center[2] - self.half_extents[2], self.center[2] + self.half_extents[2])

    def top(self) -> float:
        return self.center[2] + self.half_extents[2]

    def to_local_xy(self, x: float, y: float) -> tuple[float, float]:
        """World xy into the box's yaw-aligned frame."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        dx, dy = x - self.center[0], y - self.center[1]
        return (c * dx + s * dy, -s * dx + c * dy)

    def contains_xy(self, x: float, y: float) -> bool:
        lx, ly = self.to_local_xy(x, y)
        return abs(lx) <= self.half_extents[0] and abs(ly) <= self.half_extents[1]


def circle_box_distance(box: Box, x: float, y: float) -> float:
    """Planar distance from point (x, y) to the box footprint; 0 inside."""
    lx, ly = box.to_local_xy(x, y)
    qx = abs(lx) - box.half_extents[0]
    qy = abs(ly) - box.half_extents[1]
    return float(np.hypot(max(qx, 0.0), max(qy, 0.0)))


def circle_box_overlap(box: Box, x: float, y: float, radius: float) -> bool:
    """Strict overlap of a circle with the box footprint (tangency is no contact)."""
    return circle_box_distance(box, x, y) < radius


def cylinder_box_overlap(box: Box, x: float, y: float, radius: float, height: float) -> bool:
    """Vertical cylinder over [0, height] vs oriented box, strict on both axes."""
    z_lo, z_hi = box.z_interval
    if not (z_lo < height and z_hi > 0.0):
        return False
    return circle_box_overlap(box, x, y, radius)


def sphere_box_distance(box: Box, p: np.ndarray) -> float:
    """3D distance from point p to the box surface; 0 inside."""
    lx, ly = box.to_local_xy(float(p[0]), float(p[1]))
    lz = float(p[2]) - box.center[2]
    q = np.maximum(np.abs([lx, ly, lz]) - np.asarray(box.half_extents), 0.0)
    return float(np.linalg.norm(q))


def sphere_box_overlap(box: Box, p: np.ndarray, radius: float) -> bool:
    return sphere_box_distance(box, p) < radius


def contact_normal(box: Box, x: float, y: float) -> np.ndarray:
    """Outward planar normal at the footprint point nearest to (x, y).

    For a point inside the footprint, the normal of the least-penetrated face.
    """
    lx, ly = box.to_local_xy(x, y)
    hx, hy = box.half_extents[0], box.half_extents[1]
    cx = min(max(lx, -hx), hx)
    cy = min(max(ly, -hy), hy)
    nx, ny = lx - cx, ly - cy
    if nx == 0.0 and ny == 0.0:
        # inside: push out of the closest face
        pen_x = hx - abs(lx)
        pen_y = hy - abs(ly)
        if pen_x <= pen_y:
            nx = 1.0 if lx >= 0 else -1.0
        else:
            ny = 1.0 if ly >= 0 else -1.0
    n = np.array([nx, ny], dtype=np.float64)
    n /= np.linalg.norm(n)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    return np.array([c * n[0] - s * n[1], s * n[0] + c * n[1]])


class BoxArray:
    """Struct-of-arrays view of many boxes for vectorized ray queries."""

    def __init__(self, boxes: list[Box]):
        n = len(boxes)
        self.n = n
        self.centers = np.array([b.center for b in boxes], dtype=np.float64).reshape(n, 3)
        self.half = np.array([b.half_extents for b in boxes], dtype=np.float64).reshape(n, 3)
        yaws = np.array([b.yaw for b in boxes], dtype=np.float64)
        self.cos = np.cos(yaws)
        self.sin = np.sin(yaws)

    def cylinder_contacts(self, x: float, y: float, radius: float, height: float) -> int:
        """Count of boxes strictly overlapping a vertical cylinder over [0, height]."""
        if self.n == 0:
            return 0
        dx = x - self.centers[:, 0]
        dy = y - self.centers[:, 1]
        lx = self.cos * dx + self.sin * dy
        ly = -self.sin * dx + self.cos * dy
        qx = np.maximum(np.abs(lx) - self.half[:, 0], 0.0)
        qy = np.maximum(np.abs(ly) - self.half[:, 1], 0.0)
        planar = qx * qx + qy * qy < radius * radius
        z_lo = self.centers[:, 2] - self.half[:, 2]
        z_hi = self.centers[:, 2] + self.half[:, 2]
        return int(np.count_nonzero(planar & (z_lo < height) & (z_hi > 0.0)))

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Nearest hit parameter per ray over all boxes; +inf where no hit.

        origin: (3,), dirs: (R, 3) unit vectors. Slab test in each box frame.
        """
        if self.n == 0:
            return np.full(dirs.shape[0], np.inf)
        # per-box frames: rotate origin offset and directions by -yaw
        off = origin[None, :] - self.centers  # (B, 3)
        ox = self.cos * off[:, 0] + self.sin * off[:, 1]
        oy = -self.sin * off[:, 0] + self.cos * off[:, 1]
        oz = off[:, 2]
        dx = self.cos[:, None] * dirs[None, :, 0] + self.sin[:, None] * dirs[None, :, 1]
        dy = -self.sin[:, None] * dirs[None, :, 0] + self.cos[:, None] * dirs[None, :, 1]
        dz = np.broadcast_to(dirs[None, :, 2], dx.shape)

        tmin = np.full(dx.shape, -np.inf)
        tmax = np.full(dx.shape, np.inf)
        tiny = 1e-300
        for o_ax, d_ax, h_ax in (
            (ox[:, None], dx, self.half[:, 0:1]),
            (oy[:, None], dy, self.half[:, 1:2]),
            (oz[:, None], dz, self.half[:, 2:3]),
        ):
            d_safe = np.where(np.abs(d_ax) < tiny, tiny, d_ax)
            t1 = (-h_ax - o_ax) / d_safe
            t2 = (h_ax - o_ax) / d_safe
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
            # parallel ray outside the slab never hits
            outside = (np.abs(d_ax) < tiny) & (np.abs(o_ax) > h_ax)
            lo = np.where(outside, np.inf, lo)
            hi = np.where(outside, -np.inf, hi)
            tmin = np.maximum(tmin, lo)
            tmax = np.minimum(tmax, hi)

        hit = (tmax >= tmin) & (tmax > 0.0)
        t = np.where(tmin > 0.0, tmin, tmax)  # origin inside: exit point
        t = np.where(hit, t, np.inf)
        return t.min(axis=0)


def ray_sphere(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Smallest positive hit parameter per unit-direction ray; +inf where no hit."""
    oc = origin - center
    b = dirs @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > 0.0, t_near, t_far)
    return np.where(hit & (t > 0.0), t, np.inf)
