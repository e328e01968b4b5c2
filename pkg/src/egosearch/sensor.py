"""Egocentric perception: raycast depth camera, target mask, mask features.

The camera is a pinhole with a 90 degree field of view horizontally and
vertically. Pixel rays are endpoint-inclusive: the leftmost and rightmost
columns look along exactly +/-45 degrees, and odd image sizes have an exact
center ray. Depth is the Euclidean hit distance clamped at ``MAX_DEPTH``
and normalized to [0, 1]; rays that hit nothing within range read 1.0.

All functions are pure: identical (scene, camera) pairs render identical
images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ray_sphere
from .scene import Scene

MAX_DEPTH = 5.0
FOV_DEG = 90.0


@dataclass
class CameraPose:
    position: tuple[float, float, float]
    yaw: float    # world heading of the optical axis (body yaw + camera yaw)
    pitch: float  # positive looks up


@dataclass
class MaskFeature:
    """Compact descriptor of the target mask.

    ``x_c, y_c`` are the mean coordinates of mask pixels in a center-origin
    frame normalized to [-1, 1] (+x right, +y up); ``r`` and ``alpha`` are
    their polar form; ``m_tilde`` is a 5x5 average-pooled (fractional)
    downsample of the mask. When no pixel is set, ``visible`` is False and
    every numeric field is zero so the policy can tell "absent" from
    "centered".
    """

    x_c: float
    y_c: float
    r: float
    alpha: float
    m_tilde: np.ndarray
    visible: bool

    DIM = 30

    def vector(self) -> np.ndarray:
        """[x_c, y_c, r, alpha, m_tilde row-major, visible] as float32 (30,)."""
        out = np.empty(self.DIM, dtype=np.float32)
        out[0:4] = (self.x_c, self.y_c, self.r, self.alpha)
        out[4:29] = self.m_tilde.reshape(-1)
        out[29] = 1.0 if self.visible else 0.0
        return out


def camera_basis(cam: CameraPose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(forward, right, up) unit vectors for a yaw-then-pitch camera."""
    cy, sy = math.cos(cam.yaw), math.sin(cam.yaw)
    cp, sp = math.cos(cam.pitch), math.sin(cam.pitch)
    forward = np.array([cp * cy, cp * sy, sp])
    right = np.array([sy, -cy, 0.0])
    up = np.array([-sp * cy, -sp * sy, cp])
    return forward, right, up


def ray_directions(cam: CameraPose, w: int, h: int) -> np.ndarray:
    """Unit ray directions, row-major (h*w, 3)."""
    if w < 1 or h < 1:
        raise ValueError("image size must be at least 1x1")
    forward, right, up = camera_basis(cam)
    half_tan = math.tan(math.radians(FOV_DEG) / 2.0)
    u = np.zeros(w) if w == 1 else (2.0 * np.arange(w) / (w - 1) - 1.0)
    v = np.zeros(h) if h == 1 else (1.0 - 2.0 * np.arange(h) / (h - 1))
    uu, vv = np.meshgrid(u * half_tan, v * half_tan)
    dirs = forward[None, :] + uu.reshape(-1, 1) * right[None, :] + vv.reshape(-1, 1) * up[None, :]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def _solid_hits(scene: Scene, cam: CameraPose, w: int, h: int) -> np.ndarray:
    boxes = scene.solids_array()
    dirs = ray_directions(cam, w, h)
    origin = np.asarray(cam.position, dtype=np.float64)
    return boxes.ray_hits(origin, dirs)


def render_depth(scene: Scene, cam: CameraPose, w: int = 100, h: int = 100) -> np.ndarray:
    """Depth image (h, w) float64 in [0, 1]: min(hit distance, 5 m) / 5 m."""
    t = _solid_hits(scene, cam, w, h)
    return np.minimum(t, MAX_DEPTH).reshape(h, w) / MAX_DEPTH


def render_mask(scene: Scene, cam: CameraPose, w: int = 100, h: int = 100) -> np.ndarray:
    """Binary target mask (h, w): 1 where the ray hits the target sphere
    strictly before any solid geometry and within sensing range."""
    dirs = ray_directions(cam, w, h)
    origin = np.asarray(cam.position, dtype=np.float64)
    t_sphere = ray_sphere(origin, dirs, np.asarray(scene.target.position), scene.target.radius)
    candidates = np.isfinite(t_sphere) & (t_sphere <= MAX_DEPTH)
    mask = np.zeros(dirs.shape[0], dtype=bool)
    if candidates.any():
        boxes = scene.solids_array()
        t_solid = boxes.ray_hits(origin, dirs[candidates])
        mask[candidates] = t_sphere[candidates] < t_solid
    return mask.reshape(h, w)


def render_depth_and_mask(
    scene: Scene, cam: CameraPose, w: int = 100, h: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Both images from one set of ray queries; identical to the single calls."""
    dirs = ray_directions(cam, w, h)
    origin = np.asarray(cam.position, dtype=np.float64)
    boxes = scene.solids_array()
    t_solid = boxes.ray_hits(origin, dirs)
    depth = np.minimum(t_solid, MAX_DEPTH).reshape(h, w) / MAX_DEPTH
    t_sphere = ray_sphere(origin, dirs, np.asarray(scene.target.position), scene.target.radius)
    mask = (np.isfinite(t_sphere) & (t_sphere <= MAX_DEPTH) & (t_sphere < t_solid)).reshape(h, w)
    return depth, mask


def target_visible(scene: Scene, cam: CameraPose, w: int, h: int) -> bool:
    return bool(render_mask(scene, cam, w, h).any())


def mask_features(mask: np.ndarray) -> MaskFeature:
    """Centroid, polar coordinates, and 5x5 fractional downsample of a mask."""
    h, w = mask.shape
    ii, jj = np.nonzero(mask)
    if ii.size == 0:
        return MaskFeature(0.0, 0.0, 0.0, 0.0, np.zeros((5, 5)), visible=False)
    x = 0.0 if w == 1 else float(2.0 * jj.mean() / (w - 1) - 1.0)
    y = 0.0 if h == 1 else float(1.0 - 2.0 * ii.mean() / (h - 1))
    r = math.hypot(x, y)
    alpha = math.atan2(y, x)
    return MaskFeature(x, y, r, alpha, downsample_mask(mask), visible=True)


def downsample_mask(mask: np.ndarray, grid: int = 5) -> np.ndarray:
    """Average-pool a mask onto a grid x grid array of fractional occupancy."""
    h, w = mask.shape
    m = mask.astype(np.float64)
    row_edges = [int(math.floor(k * h / grid)) for k in range(grid + 1)]
    col_edges = [int(math.floor(k * w / grid)) for k in range(grid + 1)]
    # reduceat sums each block; degenerate (empty) blocks cannot occur for h, w >= grid
    if h < grid or w < grid:
        raise ValueError(f"mask {h}x{w} smaller than pooling grid {grid}x{grid}")
    rows = np.add.reduceat(m, row_edges[:-1], axis=0)
    blocks = np.add.reduceat(rows, col_edges[:-1], axis=1)
    counts = np.outer(np.diff(row_edges), np.diff(col_edges))
    return blocks / counts


def center_crop(image: np.ndarray, out_w: int = 84, out_h: int = 84) -> np.ndarray:
    """Deterministic centered sub-window of the trailing (h, w) axes."""
    h, w = image.shape[-2], image.shape[-1]
    if h < out_h or w < out_w:
        raise ValueError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    i = (h - out_h) // 2
    j = (w - out_w) // 2
    return image[..., i : i + out_h, j : j + out_w]


def random_crop(
    image: np.ndarray, rng: np.random.Generator, out_w: int = 84, out_h: int = 84
) -> np.ndarray:
    """Sub-window with offsets uniform over all valid positions."""
    h, w = image.shape[-2], image.shape[-1]
    if h < out_h or w < out_w:
        raise ValueError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    i = int(rng.integers(0, h - out_h + 1))
    j = int(rng.integers(0, w - out_w + 1))
    return image[..., i : i + out_h, j : j + out_w]


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    """Plain (P2) portable graymap dump of a [0, 1] image for debugging."""
    h, w = image.shape
    levels = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255), 0, 255).astype(int)
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    Path(path).write_text("\n".join(lines) + "\n")


def write_feature_rows(features: list[MaskFeature], path: str | Path) -> None:
    """Feature vectors, one tab-separated row per frame."""
    rows = ["\t".join(repr(float(v)) for v in f.vector()) for f in features]
    Path(path).write_text("\n".join(rows) + "\n")
