"""Procedural indoor scenes and geometric queries.

A scene is a rectangle bounded by wall boxes and populated with furniture
boxes, open-front cabinets, and a single spherical target object. Scenes
are immutable after generation; the navigation grid is derived lazily and
cached. Generation retries layouts until the inflated free space is one
connected component.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import Box, BoxArray, circle_box_overlap, sphere_box_overlap

SCENE_FORMAT = "egosearch-scene/1"


class SceneGenerationError(Exception):
    """Raised when no valid layout is found within the retry budget."""


class NoFreeSpaceError(Exception):
    """Raised when a free-pose or surface sample cannot be produced."""


class UnreachableError(Exception):
    """Raised when no collision-free grid path connects two points."""


class TargetMode(Enum):
    EXCLUDE_CABINETS = "exclude_cabinets"
    EVERYWHERE = "everywhere"


@dataclass
class Cabinet:
    """Open-front cabinet: a box shell whose +x local face is missing.

    ``shell`` is the outer box; solid geometry is the five panels (back,
    two sides, top, bottom) of the given thickness. ``interior_zone`` is
    the placement region strictly inside the shell.
    """

    shell: Box
    thickness: float = 0.05

    def __post_init__(self) -> None:
        hx, hy, hz = self.shell.half_extents
        t = self.thickness
        if not (t > 0 and 2 * t < min(hx, hy, hz)):
            raise ValueError("cabinet thickness leaves no interior")

    @property
    def interior_zone(self) -> Box:
        hx, hy, hz = self.shell.half_extents
        t = self.thickness
        c, s = math.cos(self.shell.yaw), math.sin(self.shell.yaw)
        # interior extends to the open face (+x local), inset elsewhere
        off_local = t / 2.0
        cx = self.shell.center[0] + c * off_local
        cy = self.shell.center[1] + s * off_local
        return Box(
            center=(cx, cy, self.shell.center[2]),
            half_extents=(hx - t / 2.0 - 1e-9, hy - t - 1e-9, hz - t - 1e-9),
            yaw=self.shell.yaw,
        )

    def panels(self) -> list[Box]:
        """Five solid panels; the +x local face stays open."""
        hx, hy, hz = self.shell.half_extents
        t = self.thickness
        cx, cy, cz = self.shell.center
        c, s = math.cos(self.shell.yaw), math.sin(self.shell.yaw)

        def local_box(lx: float, ly: float, lz: float, ex: float, ey: float, ez: float) -> Box:
            wx = cx + c * lx - s * ly
            wy = cy + s * lx + c * ly
            return Box(center=(wx, wy, cz + lz), half_extents=(ex, ey, ez), yaw=self.shell.yaw)

        return [
            local_box(-hx + t / 2, 0.0, 0.0, t / 2, hy, hz),            # back
            local_box(0.0, -hy + t / 2, 0.0, hx, t / 2, hz),            # side -y
            local_box(0.0, hy - t / 2, 0.0, hx, t / 2, hz),             # side +y
            local_box(0.0, 0.0, -hz + t / 2, hx, hy, t / 2),            # bottom
            local_box(0.0, 0.0, hz - t / 2, hx, hy, t / 2),             # top
        ]


@dataclass
class TargetObject:
    """Search target approximated by its bounding sphere."""

    position: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError("target radius must be > 0")


@dataclass
class SceneParams:
    """Knobs for procedural generation."""

    width: float = 10.0
    depth: float = 10.0
    wall_thickness: float = 0.2
    wall_height: float = 2.5
    furniture_range: tuple[int, int] = (4, 8)
    cabinet_range: tuple[int, int] = (0, 2)
    furniture_half_xy: tuple[float, float] = (0.2, 0.7)
    furniture_height: tuple[float, float] = (0.3, 1.2)
    cabinet_half_xy: tuple[float, float] = (0.35, 0.5)
    cabinet_height: tuple[float, float] = (0.5, 0.8)
    target_radius: float = 0.2
    target_mode: TargetMode = TargetMode.EXCLUDE_CABINETS
    # relative draw weights for the target's resting surface class
    surface_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    agent_radius: float = 0.3
    nav_resolution: float = 0.1
    max_retries: int = 100


@dataclass
class NavGrid:
    """Free-space occupancy over the scene interior, inflated by agent radius."""

    origin: tuple[float, float]
    resolution: float
    free: np.ndarray  # bool (ny, nx)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        j = int(math.floor((x - self.origin[0]) / self.resolution))
        i = int(math.floor((y - self.origin[1]) / self.resolution))
        return i, j

    def center_of(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin[0] + (j + 0.5) * self.resolution,
            self.origin[1] + (i + 0.5) * self.resolution,
        )

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.free.shape[0] and 0 <= j < self.free.shape[1]

    def is_free(self, x: float, y: float) -> bool:
        i, j = self.cell_of(x, y)
        return self.in_bounds(i, j) and bool(self.free[i, j])


@dataclass
class Scene:
    """Static world: wall/furniture boxes, cabinets, and the target object."""

    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    walls: list[Box]
    furniture: list[Box]
    cabinets: list[Cabinet]
    target: TargetObject
    nav_resolution: float = 0.1
    agent_radius: float = 0.3
    _navgrid: NavGrid | None = field(default=None, repr=False, compare=False)
    _solids: BoxArray | None = field(default=None, repr=False, compare=False)

    def solid_boxes(self) -> list[Box]:
        boxes = list(self.walls) + list(self.furniture)
        for cab in self.cabinets:
            boxes.extend(cab.panels())
        return boxes

    def solids_array(self) -> BoxArray:
        if self._solids is None:
            self._solids = BoxArray(self.solid_boxes())
        return self._solids

    def navgrid(self) -> NavGrid:
        if self._navgrid is None:
            self._navgrid = _build_navgrid(self)
        return self._navgrid

    def with_target(self, target: TargetObject) -> "Scene":
        """Copy with a different target; nav grid and solids carry over unchanged."""
        return replace(self, target=target, _navgrid=self._navgrid, _solids=self._solids)


# ---------------------------------------------------------------------------
# collision and free-space queries


def check_collision(
    scene: Scene, center_xy: tuple[float, float], radius: float, height: float
) -> tuple[bool, int]:
    """Vertical cylinder (footprint circle, z in [0, height]) vs all solids.

    Strict overlap: a cylinder exactly tangent to a face does not collide.
    Returns (collides, number of solids in contact).
    """
    if radius <= 0 or height <= 0:
        raise ValueError("cylinder radius and height must be > 0")
    x, y = center_xy
    count = scene.solids_array().cylinder_contacts(x, y, radius, height)
    return count > 0, count


def target_penetrates(scene: Scene, position: np.ndarray, radius: float) -> bool:
    return any(sphere_box_overlap(b, position, radius) for b in scene.solid_boxes())


def sample_free_pose(
    scene: Scene, rng: np.random.Generator, clearance: float, max_tries: int = 10_000
) -> tuple[float, float, float]:
    """Uniform collision-free planted pose (x, y, yaw) with the given clearance."""
    if clearance < scene.agent_radius:
        raise ValueError("clearance below the scene's agent radius")
    xmin, ymin, xmax, ymax = scene.bounds
    for _ in range(max_tries):
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        collides, _ = check_collision(scene, (x, y), clearance, height=2.0)
        if not collides:
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            return float(x), float(y), float(yaw)
    raise NoFreeSpaceError(f"no free pose with clearance {clearance} after {max_tries} tries")


def sample_target_location(
    scene: Scene,
    rng: np.random.Generator,
    mode: TargetMode = TargetMode.EXCLUDE_CABINETS,
    radius: float | None = None,
    max_tries: int = 10_000,
    surface_weights: tuple[float, float, float] = (0.5, 0.3, 0.2),
) -> tuple[float, float, float]:
    """Resting position for a target sphere: floor, furniture top, or cabinet interior.

    Surface class is drawn with the given weights (floor, furniture, cabinet;
    renormalized over the classes present) rather than by area, so cabinet
    interiors appear at a usable rate regardless of their tiny footprint.
    """
    r = scene.target.radius if radius is None else radius
    xmin, ymin, xmax, ymax = scene.bounds
    classes: list[str] = ["floor"]
    weights: list[float] = [surface_weights[0]]
    if scene.furniture:
        classes.append("furniture")
        weights.append(surface_weights[1])
    if scene.cabinets and mode is TargetMode.EVERYWHERE:
        classes.append("cabinet")
        weights.append(surface_weights[2])
    w = np.asarray(weights) / sum(weights)

    for _ in range(max_tries):
        surface = classes[int(rng.choice(len(classes), p=w))]
        if surface == "floor":
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            p = np.array([x, y, r])
            if any(cab.interior_zone.contains_xy(x, y) for cab in scene.cabinets):
                continue
        elif surface == "furniture":
            areas = np.array([4 * b.half_extents[0] * b.half_extents[1] for b in scene.furniture])
            box = scene.furniture[int(rng.choice(len(scene.furniture), p=areas / areas.sum()))]
            hx, hy = box.half_extents[0], box.half_extents[1]
            # the contact point must lie on the top face; the sphere itself may
            # overhang the edges without penetrating anything
            lx = rng.uniform(-hx, hx)
            ly = rng.uniform(-hy, hy)
            c, s = math.cos(box.yaw), math.sin(box.yaw)
            # nano lift keeps exact tangency out of the strict penetration test
            p = np.array(
                [box.center[0] + c * lx - s * ly, box.center[1] + s * lx + c * ly,
                 box.top() + r + 1e-9]
            )
        else:
            cab = scene.cabinets[int(rng.integers(len(scene.cabinets)))]
            zone = cab.interior_zone
            hx, hy = zone.half_extents[0], zone.half_extents[1]
            if hx <= r or hy <= r:
                continue
            lx = rng.uniform(-(hx - r), hx - r)
            ly = rng.uniform(-(hy - r), hy - r)
            c, s = math.cos(zone.yaw), math.sin(zone.yaw)
            z = zone.center[2] - zone.half_extents[2] + r
            p = np.array(
                [zone.center[0] + c * lx - s * ly, zone.center[1] + s * lx + c * ly, z]
            )
        if not (xmin < p[0] < xmax and ymin < p[1] < ymax):
            continue
        if not target_penetrates(scene, p, r):
            return float(p[0]), float(p[1]), float(p[2])
    raise NoFreeSpaceError(f"no resting target position after {max_tries} tries")


def target_in_cabinet(scene: Scene, position: tuple[float, float, float] | None = None) -> bool:
    pos = scene.target.position if position is None else position
    for cab in scene.cabinets:
        zone = cab.interior_zone
        if zone.contains_xy(pos[0], pos[1]) and abs(pos[2] - zone.center[2]) <= zone.half_extents[2]:
            return True
    return False


# ---------------------------------------------------------------------------
# navigation grid and shortest paths


def _build_navgrid(scene: Scene) -> NavGrid:
    xmin, ymin, xmax, ymax = scene.bounds
    res = scene.nav_resolution
    nx = int(round((xmax - xmin) / res))
    ny = int(round((ymax - ymin) / res))
    xs = xmin + (np.arange(nx) + 0.5) * res
    ys = ymin + (np.arange(ny) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
    free = np.ones((ny, nx), dtype=bool)
    r = scene.agent_radius
    for b in scene.solid_boxes():
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        dx = gx - b.center[0]
        dy = gy - b.center[1]
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        qx = np.maximum(np.abs(lx) - b.half_extents[0], 0.0)
        qy = np.maximum(np.abs(ly) - b.half_extents[1], 0.0)
        free &= qx * qx + qy * qy >= r * r
    return NavGrid(origin=(xmin, ymin), resolution=res, free=free)


def navgrid_components(grid: NavGrid) -> int:
    """Number of 8-connected components of free cells."""
    free = grid.free
    seen = np.zeros_like(free)
    count = 0
    ny, nx = free.shape
    for i0 in range(ny):
        for j0 in range(nx):
            if free[i0, j0] and not seen[i0, j0]:
                count += 1
                stack = [(i0, j0)]
                seen[i0, j0] = True
                while stack:
                    i, j = stack.pop()
                    for di in (-1, 0, 1):
                        for dj in (-1, 0, 1):
                            ii, jj = i + di, j + dj
                            if 0 <= ii < ny and 0 <= jj < nx and free[ii, jj] and not seen[ii, jj]:
                                seen[ii, jj] = True
                                stack.append((ii, jj))
    return count


_NEIGHBORS = [
    (-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
    (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)),
    (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2)),
]


def shortest_path_length(
    scene: Scene, start: tuple[float, float], goal: tuple[float, float]
) -> float:
    """Length of the shortest 8-connected path over the inflated nav grid.

    Diagonal moves cost sqrt(2) * resolution. Endpoints must fall in free
    cells. Always >= the straight-line distance between the cell centers.
    """
    grid = scene.navgrid()
    si, sj = grid.cell_of(*start)
    gi, gj = grid.cell_of(*goal)
    for (i, j), name in (((si, sj), "start"), ((gi, gj), "goal")):
        if not (grid.in_bounds(i, j) and grid.free[i, j]):
            raise UnreachableError(f"{name} {start if name == 'start' else goal} not in free space")
    if (si, sj) == (gi, gj):
        return 0.0
    res = grid.resolution
    free = grid.free
    ny, nx = free.shape
    dist = {(si, sj): 0.0}
    pq = [(_octile(si, sj, gi, gj), si, sj)]
    while pq:
        f, i, j = heapq.heappop(pq)
        d = dist[(i, j)]
        if f > d + _octile(i, j, gi, gj) + 1e-9:
            continue  # stale queue entry
        if (i, j) == (gi, gj):
            return d * res
        for di, dj, c in _NEIGHBORS:
            ii, jj = i + di, j + dj
            if 0 <= ii < ny and 0 <= jj < nx and free[ii, jj]:
                nd = d + c
                if nd < dist.get((ii, jj), math.inf) - 1e-12:
                    dist[(ii, jj)] = nd
                    heapq.heappush(pq, (nd + _octile(ii, jj, gi, gj), ii, jj))
    raise UnreachableError(f"no grid path from {start} to {goal}")


def _octile(i: int, j: int, gi: int, gj: int) -> float:
    di, dj = abs(i - gi), abs(j - gj)
    return max(di, dj) + (math.sqrt(2) - 1.0) * min(di, dj)


def distance_field(scene: Scene, start: tuple[float, float]) -> np.ndarray:
    """Grid of shortest-path distances (meters) from start; +inf where unreachable."""
    grid = scene.navgrid()
    si, sj = grid.cell_of(*start)
    if not (grid.in_bounds(si, sj) and grid.free[si, sj]):
        raise UnreachableError(f"start {start} not in free space")
    free = grid.free
    ny, nx = free.shape
    dist = np.full((ny, nx), np.inf)
    dist[si, sj] = 0.0
    pq = [(0.0, si, sj)]
    while pq:
        d, i, j = heapq.heappop(pq)
        if d > dist[i, j] + 1e-12:
            continue
        for di, dj, c in _NEIGHBORS:
            ii, jj = i + di, j + dj
            if 0 <= ii < ny and 0 <= jj < nx and free[ii, jj]:
                nd = d + c
                if nd < dist[ii, jj] - 1e-12:
                    dist[ii, jj] = nd
                    heapq.heappush(pq, (nd, ii, jj))
    return dist * grid.resolution


def path_length_to_region(
    scene: Scene, start: tuple[float, float], center: tuple[float, float], region_radius: float
) -> float:
    """Shortest grid distance from start to any free cell within region_radius
    of center. Used when the goal point itself is not navigable (e.g. a target
    resting on furniture)."""
    grid = scene.navgrid()
    dist = distance_field(scene, start)
    ny, nx = grid.free.shape
    xs = grid.origin[0] + (np.arange(nx) + 0.5) * grid.resolution
    ys = grid.origin[1] + (np.arange(ny) + 0.5) * grid.resolution
    gx, gy = np.meshgrid(xs, ys)
    in_region = (gx - center[0]) ** 2 + (gy - center[1]) ** 2 <= region_radius**2
    candidates = dist[in_region & grid.free]
    if candidates.size == 0 or not np.isfinite(candidates).any():
        raise UnreachableError(f"no reachable free cell within {region_radius} m of {center}")
    return float(candidates.min())


# ---------------------------------------------------------------------------
# generation


def generate_scene(seed: int, params: SceneParams) -> Scene:
    """Deterministic layout for (seed, params); retries until the free space is
    one connected component."""
    rng = np.random.default_rng(seed)
    w, d = params.width, params.depth
    t, h = params.wall_thickness, params.wall_height
    xmin, ymin, xmax, ymax = -w / 2, -d / 2, w / 2, d / 2
    walls = [
        Box(center=(0.0, ymin + t / 2, h / 2), half_extents=(w / 2, t / 2, h / 2)),
        Box(center=(0.0, ymax - t / 2, h / 2), half_extents=(w / 2, t / 2, h / 2)),
        Box(center=(xmin + t / 2, 0.0, h / 2), half_extents=(t / 2, d / 2 - t, h / 2)),
        Box(center=(xmax - t / 2, 0.0, h / 2), half_extents=(t / 2, d / 2 - t, h / 2)),
    ]

    last_err = "no attempt"
    for _ in range(params.max_retries):
        furniture = _place_furniture(rng, params, walls)
        cabinets = _place_cabinets(rng, params, walls, furniture)
        scene = Scene(
            bounds=(xmin, ymin, xmax, ymax),
            walls=walls,
            furniture=furniture,
            cabinets=cabinets,
            target=TargetObject(position=(0.0, 0.0, params.target_radius), radius=params.target_radius),
            nav_resolution=params.nav_resolution,
            agent_radius=params.agent_radius,
        )
        grid = scene.navgrid()
        if not grid.free.any():
            last_err = "no free cells"
            continue
        if navgrid_components(grid) != 1:
            last_err = "free space disconnected"
            continue
        try:
            pos = sample_target_location(scene, rng, mode=params.target_mode,
                                         surface_weights=params.surface_weights)
        except NoFreeSpaceError as e:
            last_err = str(e)
            continue
        return scene.with_target(TargetObject(position=pos, radius=params.target_radius))
    raise SceneGenerationError(
        f"seed {seed}: no valid scene in {params.max_retries} attempts ({last_err})"
    )


def _footprint_clear(candidate: Box, others: list[Box], gap: float) -> bool:
    # coarse plan-view separation: corner-circle test keeps placement cheap
    for b in others:
        cx, cy = candidate.center[0], candidate.center[1]
        r_cand = math.hypot(candidate.half_extents[0], candidate.half_extents[1])
        if circle_box_overlap(b, cx, cy, r_cand + gap):
            return True
    return False


def _place_furniture(rng: np.random.Generator, params: SceneParams, walls: list[Box]) -> list[Box]:
    lo, hi = params.furniture_range
    n = int(rng.integers(lo, hi + 1))
    w, d, t = params.width, params.depth, params.wall_thickness
    placed: list[Box] = []
    for _ in range(n):
        for _ in range(50):
            hx = rng.uniform(*params.furniture_half_xy)
            hy = rng.uniform(*params.furniture_half_xy)
            hz = rng.uniform(*params.furniture_height) / 2
            margin = math.hypot(hx, hy) + t
            cx = rng.uniform(-w / 2 + margin, w / 2 - margin)
            cy = rng.uniform(-d / 2 + margin, d / 2 - margin)
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            box = Box(center=(cx, cy, hz), half_extents=(hx, hy, hz), yaw=yaw)
            if not _footprint_clear(box, placed, gap=0.05):
                placed.append(box)
                break
    return placed


def _place_cabinets(
    rng: np.random.Generator, params: SceneParams, walls: list[Box], furniture: list[Box]
) -> list[Cabinet]:
    lo, hi = params.cabinet_range
    n = int(rng.integers(lo, hi + 1))
    w, d, t = params.width, params.depth, params.wall_thickness
    placed: list[Cabinet] = []
    for _ in range(n):
        for _ in range(50):
            hx = rng.uniform(*params.cabinet_half_xy)
            hy = rng.uniform(*params.cabinet_half_xy)
            hz = rng.uniform(*params.cabinet_height) / 2
            margin = math.hypot(hx, hy) + t
            cx = rng.uniform(-w / 2 + margin, w / 2 - margin)
            cy = rng.uniform(-d / 2 + margin, d / 2 - margin)
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            shell = Box(center=(cx, cy, hz), half_extents=(hx, hy, hz), yaw=yaw)
            others = furniture + [c.shell for c in placed]
            if not _footprint_clear(shell, others, gap=0.05):
                placed.append(Cabinet(shell=shell))
                break
    return placed


# ---------------------------------------------------------------------------
# serialization (exact round-trip)


def _box_to_dict(b: Box) -> dict:
    return {"center": list(b.center), "half_extents": list(b.half_extents), "yaw": b.yaw}


def _box_from_dict(d: dict) -> Box:
    return Box(center=tuple(d["center"]), half_extents=tuple(d["half_extents"]), yaw=d["yaw"])


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "bounds": list(scene.bounds),
        "nav_resolution": scene.nav_resolution,
        "agent_radius": scene.agent_radius,
        "walls": [_box_to_dict(b) for b in scene.walls],
        "furniture": [_box_to_dict(b) for b in scene.furniture],
        "cabinets": [
            {"shell": _box_to_dict(c.shell), "thickness": c.thickness} for c in scene.cabinets
        ],
        "target": {"position": list(scene.target.position), "radius": scene.target.radius},
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("format") != SCENE_FORMAT:
        raise ValueError(f"unsupported scene format: {d.get('format')!r}")
    return Scene(
        bounds=tuple(d["bounds"]),
        walls=[_box_from_dict(b) for b in d["walls"]],
        furniture=[_box_from_dict(b) for b in d["furniture"]],
        cabinets=[Cabinet(shell=_box_from_dict(c["shell"]), thickness=c["thickness"]) for c in d["cabinets"]],
        target=TargetObject(position=tuple(d["target"]["position"]), radius=d["target"]["radius"]),
        nav_resolution=d["nav_resolution"],
        agent_radius=d["agent_radius"],
    )


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
