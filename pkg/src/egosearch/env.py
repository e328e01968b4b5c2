"""The search POMDP: agent state, transition, observation, reward, termination.

The agent is a vertical cylinder with an independently steerable camera on
top (two joints: pitch and yaw). Per step it commands relative body motion
and camera-joint deltas; translation that would penetrate geometry slides
along the contact tangent and is cancelled if still blocked, counting one
collision. Reward is a weighted sum of five terms: proximity success,
visible-target distance shaping, a constant live penalty, a clipped
cumulative-collision penalty, and a terminal bonus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import sensor
from .geometry import circle_box_distance, contact_normal, cylinder_box_overlap
from .scene import Scene, sample_free_pose
from .sensor import CameraPose, MaskFeature


class Termination(Enum):
    SUCCESS = "success"
    TIMEOUT = "timeout"


@dataclass
class EpisodeConfig:
    """Episode constants; defaults are the standard full-scale settings."""

    t_max: int = 100
    success_radius: float = 0.5
    weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 0.1, 1.0)
    success_value: float = 10.0
    terminal_bonus: float = 10.0
    live_penalty: float = -0.1
    collision_rate: float = -0.1   # r_c = clip(rate * n_col, floor, 0)
    collision_floor: float = -3.0
    k_frames: int = 5
    randomize_height: bool = False
    height_range: tuple[float, float] = (1.0, 1.8)
    height_noise: tuple[float, float] = (-0.1, 0.1)
    max_step_xy: float = 0.25
    max_step_yaw: float = math.radians(30.0)
    max_step_cam: float = math.radians(30.0)
    cam_pitch_limit: float = math.radians(60.0)
    cam_yaw_limit: float = math.radians(90.0)
    render_w: int = 100
    render_h: int = 100
    crop_w: int = 84
    crop_h: int = 84
    contact_epsilon: float = 1e-3

    def action_bounds(self) -> np.ndarray:
        return np.array(
            [self.max_step_xy, self.max_step_xy, self.max_step_yaw,
             self.max_step_cam, self.max_step_cam]
        )


@dataclass
class Action:
    """Relative command: forward, lateral, body yaw, camera pitch, camera yaw."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0
    dq_pitch: float = 0.0
    dq_yaw: float = 0.0

    DIM = 5

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta, self.dq_pitch, self.dq_yaw])

    @staticmethod
    def from_array(a: np.ndarray) -> "Action":
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        padded = np.zeros(5)
        padded[: a.shape[0]] = a
        return Action(*[float(v) for v in padded])

    def clamped(self, cfg: EpisodeConfig) -> "Action":
        b = cfg.action_bounds()
        v = np.clip(self.as_array(), -b, b)
        return Action(*[float(x) for x in v])


@dataclass
class AbstractState:
    x: float
    y: float
    body_yaw: float
    q_pitch: float = 0.0
    q_yaw: float = 0.0
    base_height: float = 1.65
    height_noise: float = 0.0
    n_col: int = 0
    t: int = 0
    found: bool = False

    @property
    def camera_height(self) -> float:
        return self.base_height + self.height_noise

    def camera_pose(self) -> CameraPose:
        return CameraPose(
            position=(self.x, self.y, self.camera_height),
            yaw=self.body_yaw + self.q_yaw,
            pitch=self.q_pitch,
        )


@dataclass
class Observation:
    """Policy input: cropped depth stack (oldest first), mask feature, joints."""

    depth_stack: np.ndarray  # (K, crop_h, crop_w) float32
    mask_feat: MaskFeature
    q_pitch: float
    q_yaw: float

    def proprio(self) -> np.ndarray:
        return np.array([self.q_pitch, self.q_yaw], dtype=np.float32)


def planar_target_distance(scene: Scene, s: AbstractState) -> float:
    tx, ty = scene.target.position[0], scene.target.position[1]
    return math.hypot(s.x - tx, s.y - ty)


def success_check(scene: Scene, s: AbstractState, cfg: EpisodeConfig) -> bool:
    """Near the target and currently seeing it (at least one mask pixel)."""
    if planar_target_distance(scene, s) > cfg.success_radius:
        return False
    return sensor.target_visible(scene, s.camera_pose(), cfg.render_w, cfg.render_h)


def reset(
    scene: Scene,
    rng: np.random.Generator,
    cfg: EpisodeConfig,
    fixed_height: float | None = None,
) -> tuple[AbstractState, Observation, np.ndarray]:
    """Fresh episode state plus its observation and pre-crop frame stack.

    The agent spawns at a collision-free pose with camera joints zeroed.
    ``fixed_height`` pins the body height; otherwise it is drawn uniformly
    from the configured range. All K stack slots hold the initial frame.
    """
    x, y, yaw = sample_free_pose(scene, rng, clearance=scene.agent_radius)
    base = fixed_height if fixed_height is not None else float(rng.uniform(*cfg.height_range))
    noise = float(rng.uniform(*cfg.height_noise)) if cfg.randomize_height else 0.0
    s = AbstractState(x=x, y=y, body_yaw=yaw, base_height=base, height_noise=noise)
    s.found = success_check(scene, s, cfg)
    obs, stack = observe(scene, s, None, cfg, crop="center")
    return s, obs, stack


def _free_fn(scene: Scene, radius: float, height: float) -> Callable[[float, float], bool]:
    solids = scene.solids_array()
    return lambda x, y: solids.cylinder_contacts(x, y, radius, height) == 0


def _slide_normal(scene: Scene, x: float, y: float, radius: float, height: float) -> np.ndarray | None:
    best = None
    best_d = math.inf
    for b in scene.solid_boxes():
        if cylinder_box_overlap(b, x, y, radius * 1.5, height):
            d = circle_box_distance(b, x, y)
            if d < best_d:
                best_d = d
                best = b
    if best is None:
        return None
    return contact_normal(best, x, y)


def _attempt_translation(
    scene: Scene, s: AbstractState, d_world: np.ndarray, cfg: EpisodeConfig
) -> tuple[float, float, bool]:
    """Move as far as possible along d_world, sliding once along the contact
    tangent. Returns the final position and whether any contact occurred."""
    radius = scene.agent_radius
    height = s.base_height
    free = _free_fn(scene, radius, height)
    p0 = np.array([s.x, s.y])

    def sweep(start: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, bool]:
        length = float(np.linalg.norm(d))
        if length < 1e-12:
            return start, False
        n_samples = max(2, int(math.ceil(length / (radius / 2.0))) + 1)
        ts = np.linspace(0.0, 1.0, n_samples)[1:]
        lo = 0.0
        hit = None
        for t in ts:
            p = start + t * d
            if free(p[0], p[1]):
                lo = float(t)
            else:
                hit = float(t)
                break
        if hit is None:
            return start + d, False
        hi = hit
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if free(*(start + mid * d)):
                lo = mid
            else:
                hi = mid
        t_stop = max(0.0, lo - cfg.contact_epsilon / length)
        return start + t_stop * d, True

    p1, contact1 = sweep(p0, d_world)
    if not contact1:
        return float(p1[0]), float(p1[1]), False
    # slide the unspent motion along the contact tangent
    spent = float(np.linalg.norm(p1 - p0))
    total = float(np.linalg.norm(d_world))
    remaining = d_world * max(0.0, 1.0 - spent / total)
    normal = _slide_normal(scene, p1[0], p1[1], radius, height)
    if normal is not None and np.linalg.norm(remaining) > 1e-12:
        tangential = remaining - (remaining @ normal) * normal
        if np.linalg.norm(tangential) > 1e-9:
            p2, _ = sweep(p1, tangential)
            return float(p2[0]), float(p2[1]), True
    return float(p1[0]), float(p1[1]), True


def _apply_motion(
    scene: Scene, s: AbstractState, a: Action, rng: np.random.Generator, cfg: EpisodeConfig
) -> AbstractState:
    """Transition without the success check: motion, joints, noise, time."""
    a = a.clamped(cfg)
    c, sn = math.cos(s.body_yaw), math.sin(s.body_yaw)
    d_world = np.array([c * a.dx - sn * a.dy, sn * a.dx + c * a.dy])
    if np.linalg.norm(d_world) > 1e-12:
        x, y, contact = _attempt_translation(scene, s, d_world, cfg)
    else:
        x, y, contact = s.x, s.y, False
    yaw = math.atan2(math.sin(s.body_yaw + a.dtheta), math.cos(s.body_yaw + a.dtheta))
    q_pitch = min(max(s.q_pitch + a.dq_pitch, -cfg.cam_pitch_limit), cfg.cam_pitch_limit)
    q_yaw = min(max(s.q_yaw + a.dq_yaw, -cfg.cam_yaw_limit), cfg.cam_yaw_limit)
    noise = float(rng.uniform(*cfg.height_noise)) if cfg.randomize_height else 0.0
    return AbstractState(
        x=x, y=y, body_yaw=yaw, q_pitch=q_pitch, q_yaw=q_yaw,
        base_height=s.base_height, height_noise=noise,
        n_col=s.n_col + (1 if contact else 0), t=s.t + 1, found=s.found,
    )


def step(
    scene: Scene, s: AbstractState, a: Action, rng: np.random.Generator, cfg: EpisodeConfig
) -> AbstractState:
    """One transition; ``found`` reflects the success check at the new pose."""
    s_next = _apply_motion(scene, s, a, rng, cfg)
    s_next.found = success_check(scene, s_next, cfg)
    return s_next


def observe(
    scene: Scene,
    s: AbstractState,
    prev_stack: np.ndarray | None,
    cfg: EpisodeConfig,
    crop: str = "center",
    rng: np.random.Generator | None = None,
) -> tuple[Observation, np.ndarray]:
    """Render at the state's camera, push the frame, crop the whole stack.

    ``prev_stack`` is the pre-crop (K, render_h, render_w) history; None
    fills all slots with the new frame. One crop offset is applied to the
    full stack ("random" needs ``rng``). Mask features come from the current
    full-resolution mask only. Returns (observation, new pre-crop stack).
    """
    depth, mask = sensor.render_depth_and_mask(scene, s.camera_pose(), cfg.render_w, cfg.render_h)
    frame = depth.astype(np.float32)
    if prev_stack is None:
        stack = np.repeat(frame[None, :, :], cfg.k_frames, axis=0)
    else:
        stack = np.concatenate([prev_stack[1:], frame[None, :, :]], axis=0)
    if crop == "center":
        cropped = sensor.center_crop(stack, cfg.crop_w, cfg.crop_h)
    elif crop == "random":
        if rng is None:
            raise ValueError("random crop requires an rng")
        cropped = sensor.random_crop(stack, rng, cfg.crop_w, cfg.crop_h)
    else:
        raise ValueError(f"unknown crop mode: {crop!r}")
    feat = sensor.mask_features(mask)
    obs = Observation(
        depth_stack=np.ascontiguousarray(cropped), mask_feat=feat,
        q_pitch=s.q_pitch, q_yaw=s.q_yaw,
    )
    return obs, stack


def reward(
    scene: Scene,
    s_next: AbstractState,
    terminal_success: bool,
    cfg: EpisodeConfig,
    visible: bool | None = None,
) -> tuple[float, np.ndarray]:
    """Weighted five-term reward evaluated at the post-step state.

    Terms: proximity success, negative distance while the target is visible,
    constant live penalty, clipped cumulative collision penalty, terminal
    bonus. ``visible`` skips the mask render when the caller already has it.
    """
    dist = planar_target_distance(scene, s_next)
    if visible is None:
        visible = sensor.target_visible(scene, s_next.camera_pose(), cfg.render_w, cfg.render_h)
    r_s = cfg.success_value if dist <= cfg.success_radius else 0.0
    r_d = -dist if visible else 0.0
    r_live = cfg.live_penalty
    r_c = min(max(cfg.collision_rate * s_next.n_col, cfg.collision_floor), 0.0)
    r_t = cfg.terminal_bonus if terminal_success else 0.0
    terms = np.array([r_s, r_d, r_live, r_c, r_t])
    total = float(np.dot(np.asarray(cfg.weights), terms))
    return total, terms


def is_terminal(scene: Scene, s: AbstractState, cfg: EpisodeConfig) -> Termination | None:
    """Success (near + seeing the target) wins over timeout at the cap."""
    if success_check(scene, s, cfg):
        return Termination.SUCCESS
    if s.t >= cfg.t_max:
        return Termination.TIMEOUT
    return None


def advance(
    scene: Scene,
    s: AbstractState,
    a: Action,
    rng: np.random.Generator,
    cfg: EpisodeConfig,
    stack: np.ndarray,
    crop: str = "center",
    crop_rng: np.random.Generator | None = None,
) -> tuple[AbstractState, Observation, np.ndarray, dict]:
    """Fused step + observe: one render feeds the success check, the reward,
    and the observation. Equivalent to step() followed by observe()."""
    s_next = _apply_motion(scene, s, a, rng, cfg)
    obs, new_stack = observe(scene, s_next, stack, cfg, crop, crop_rng or rng)
    visible = obs.mask_feat.visible
    dist = planar_target_distance(scene, s_next)
    s_next.found = visible and dist <= cfg.success_radius
    termination = None
    if s_next.found:
        termination = Termination.SUCCESS
    elif s_next.t >= cfg.t_max:
        termination = Termination.TIMEOUT
    total, terms = reward(scene, s_next, termination is Termination.SUCCESS, cfg, visible=visible)
    info = {
        "terms": terms,
        "termination": termination,
        "success": termination is Termination.SUCCESS,
        "state": s_next,
        "distance": dist,
        "visible": visible,
        "reward": total,
    }
    return s_next, obs, new_stack, info


class RolloutEnv:
    """Stateful episode driver composing the pure transition pieces.

    One instance is single-threaded; the scene provider is called at every
    reset (rotating rooms, resampling targets). Rendering happens once per
    step and feeds the success check, the reward shaping term, and the
    observation.
    """

    def __init__(
        self,
        scene_provider: Callable[[np.random.Generator], Scene],
        cfg: EpisodeConfig,
        rng: np.random.Generator,
        fixed_height: float | None = None,
        crop: str = "center",
        head_enabled: bool = True,
    ):
        self.scene_provider = scene_provider
        self.cfg = cfg
        self.rng = rng
        self.fixed_height = fixed_height
        self.crop = crop
        self.head_enabled = head_enabled
        self.scene: Scene | None = None
        self.state: AbstractState | None = None
        self._stack: np.ndarray | None = None

    def reset(self) -> Observation:
        self.scene = self.scene_provider(self.rng)
        self.state, obs, self._stack = reset(self.scene, self.rng, self.cfg, self.fixed_height)
        if self.crop == "random":
            obs, _ = observe(self.scene, self.state, None, self.cfg, "random", self.rng)
        return obs

    @property
    def pre_crop_stack(self) -> np.ndarray:
        return self._stack

    def step(self, action: Action | np.ndarray) -> tuple[Observation, float, bool, dict]:
        if isinstance(action, np.ndarray) or isinstance(action, (list, tuple)):
            action = Action.from_array(np.asarray(action))
        if not self.head_enabled:
            action = replace(action, dq_pitch=0.0, dq_yaw=0.0)
        s_next, obs, self._stack, info = advance(
            self.scene, self.state, action, self.rng, self.cfg, self._stack, self.crop
        )
        self.state = s_next
        return obs, info["reward"], info["termination"] is not None, info


TRACE_COLUMNS = [
    "t", "x", "y", "body_yaw", "q_pitch", "q_yaw", "base_height", "height_noise",
    "n_col", "dx", "dy", "dtheta", "dq_pitch", "dq_yaw",
    "r_s", "r_d", "r_live", "r_c", "r_t", "reward", "termination",
]


def write_episode_trace(path: str | Path, records: list[dict]) -> None:
    """Per-step episode record as tab-separated text (exact float round-trip)."""
    lines = ["\t".join(TRACE_COLUMNS)]
    for rec in records:
        lines.append("\t".join(
            repr(rec[c]) if isinstance(rec[c], float) else str(rec[c]) for c in TRACE_COLUMNS
        ))
    Path(path).write_text("\n".join(lines) + "\n")


def read_episode_trace(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split("\t")
    out = []
    for line in lines[1:]:
        vals = line.split("\t")
        rec: dict = {}
        for k, v in zip(header, vals):
            if k in ("t", "n_col"):
                rec[k] = int(v)
            elif k == "termination":
                rec[k] = None if v == "None" else v
            else:
                rec[k] = float(v)
        out.append(rec)
    return out
