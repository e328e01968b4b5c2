"""Online motion replanning onto a character surrogate.

Each cycle rolls the abstract policy T steps ahead, hands the planned states
to a motion generator that tracks them for M poses, then reconciles: the
abstract root is overwritten by where the character actually went, the frame
history is re-rendered from those corrected states (repairing the memory
gap), and the camera joints are re-commanded by the policy from the
corrected observations. The final corrected state and observation seed the
next plan. With a perfect-tracking generator the whole construction
collapses to a plain policy rollout, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import (
    AbstractState,
    Action,
    EpisodeConfig,
    Observation,
    advance,
    observe,
    planar_target_distance,
    reset,
)
from .scene import Scene


@dataclass
class CharacterPose:
    x: float
    y: float
    yaw: float
    height: float
    head_pitch: float = 0.0
    head_yaw: float = 0.0

    def __post_init__(self) -> None:
        if not self.height > 0:
            raise ValueError("character height must be > 0")

    def root(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


@dataclass
class PlanBuffer:
    """Planned abstract trajectory s_0..s_T with the actions that produced it."""

    states: list[AbstractState]
    actions: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class MockCharacter:
    """Kinematic stand-in for a full-body motion generator.

    Tracks each planned root with a first-order lag, caps the per-step
    displacement, and bobs vertically; with lag=1, no bob and unlimited
    speed it reproduces the plan exactly (bit-exact by direct assignment).
    The bob phase persists across segments within an episode.
    """

    lag: float = 1.0
    bob_amplitude: float = 0.0
    bob_frequency: float = 0.25  # cycles per step
    max_speed: float = math.inf  # meters per step
    base_height: float = 1.65
    _phase: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.lag <= 1.0):
            raise ValueError("lag must be in (0, 1]")

    def generate(self, plan: PlanBuffer, current: CharacterPose, m: int) -> list[CharacterPose]:
        """M poses tracking plan states 1..M from the current pose."""
        if m > len(plan.states) - 1:
            raise ValueError(f"cannot execute {m} steps of a {len(plan.states) - 1}-step plan")
        poses: list[CharacterPose] = []
        x, y, yaw = current.x, current.y, current.yaw
        for j in range(1, m + 1):
            target = plan.states[j]
            if self.lag == 1.0 and not math.isfinite(self.max_speed):
                x, y, yaw = target.x, target.y, target.body_yaw
            else:
                dx = self.lag * (target.x - x)
                dy = self.lag * (target.y - y)
                step_len = math.hypot(dx, dy)
                if step_len > self.max_speed:
                    dx *= self.max_speed / step_len
                    dy *= self.max_speed / step_len
                x += dx
                y += dy
                yaw = yaw + self.lag * _wrap(target.body_yaw - yaw)
            self._phase += 1
            height = self.base_height + self.bob_amplitude * math.sin(
                2.0 * math.pi * self.bob_frequency * self._phase
            )
            poses.append(CharacterPose(
                x=x, y=y, yaw=yaw, height=height,
                head_pitch=target.q_pitch, head_yaw=target.q_yaw,
            ))
        return poses


def mg_follow(mg, plan: PlanBuffer, current: CharacterPose, m: int) -> list[CharacterPose]:
    return mg.generate(plan, current, m)


def character_pose_of(s: AbstractState) -> CharacterPose:
    return CharacterPose(x=s.x, y=s.y, yaw=s.body_yaw, height=s.camera_height,
                         head_pitch=s.q_pitch, head_yaw=s.q_yaw)


# ---------------------------------------------------------------------------
# planning and reconciliation


def plan(
    policy,
    scene: Scene,
    s0: AbstractState,
    o0: Observation,
    stack0: np.ndarray,
    horizon: int,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> tuple[PlanBuffer, Observation]:
    """Roll the policy ``horizon`` steps from (s0, o0); stops early on
    termination. The real frame history is untouched (the rollout keeps its
    own hypothetical copy)."""
    states = [s0]
    actions: list[np.ndarray] = []
    obs = o0
    stack = stack0.copy()
    s = s0
    for _ in range(horizon):
        if s.found or s.t >= cfg.t_max:
            break
        a = np.asarray(policy.act(obs), dtype=np.float64)
        s, obs, stack, _ = advance(scene, s, Action.from_array(a), rng, cfg, stack, "center")
        states.append(s)
        actions.append(a)
    return PlanBuffer(states=states, actions=actions), obs


@dataclass
class ReconcileStep:
    state: AbstractState
    pose: CharacterPose
    action: np.ndarray
    visible: bool


@dataclass
class ReconcileResult:
    state: AbstractState
    obs: Observation
    stack: np.ndarray
    poses: list[CharacterPose]
    steps: list[ReconcileStep]


def reconcile(
    policy,
    scene: Scene,
    poses: list[CharacterPose],
    s0: AbstractState,
    o0: Observation,
    stack0: np.ndarray,
    cfg: EpisodeConfig,
    stop_on_success: bool = True,
) -> ReconcileResult:
    """Adopt the executed roots, re-render history, re-command the head.

    For each executed pose, the policy is queried on the observation at the
    previous corrected state (the very first query re-uses o0, already in
    history), the camera joints advance by that command, and the pose's head
    is overwritten. Exactly one render, one query, and one head overwrite per
    pose.
    """
    u = s0
    obs = o0
    stack = stack0
    steps: list[ReconcileStep] = []
    corrected: list[CharacterPose] = []
    for pose in poses:
        a = np.asarray(policy.act(obs), dtype=np.float64)
        act = Action.from_array(a).clamped(cfg)
        q_pitch = min(max(u.q_pitch + act.dq_pitch, -cfg.cam_pitch_limit), cfg.cam_pitch_limit)
        q_yaw = min(max(u.q_yaw + act.dq_yaw, -cfg.cam_yaw_limit), cfg.cam_yaw_limit)
        u = AbstractState(
            x=pose.x, y=pose.y, body_yaw=pose.yaw,
            q_pitch=q_pitch, q_yaw=q_yaw,
            base_height=pose.height, height_noise=0.0,
            n_col=u.n_col, t=u.t + 1, found=False,
        )
        fixed = replace(pose, head_pitch=q_pitch, head_yaw=q_yaw)
        corrected.append(fixed)
        obs, stack = observe(scene, u, stack, cfg, crop="center")
        u.found = obs.mask_feat.visible and (
            planar_target_distance(scene, u) <= cfg.success_radius
        )
        steps.append(ReconcileStep(state=u, pose=fixed, action=a, visible=obs.mask_feat.visible))
        if stop_on_success and u.found:
            break
    return ReconcileResult(state=u, obs=obs, stack=stack, poses=corrected, steps=steps)


# ---------------------------------------------------------------------------
# full episodes


@dataclass
class ExecutedStep:
    attempt: int
    state: AbstractState
    pose: CharacterPose
    action: np.ndarray
    penetrations: int


@dataclass
class FullBodyEpisode:
    steps: list[ExecutedStep]
    success: bool
    attempts: int
    path_length: float
    penetration_steps: int
    start: AbstractState
    plan_entry_stacks: list[np.ndarray]
    plans: list[PlanBuffer]

    @property
    def executed_steps(self) -> int:
        return len(self.steps)


def _character_penetrations(scene: Scene, pose: CharacterPose) -> int:
    return scene.solids_array().cylinder_contacts(
        pose.x, pose.y, scene.agent_radius, pose.height
    )


def _polyline_length(points: list[tuple[float, float]]) -> float:
    return float(sum(
        math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(points, points[1:])
    ))


def episode_start(
    scene: Scene,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
    pose: tuple[float, float, float] | None = None,
    height: float | None = None,
) -> tuple[AbstractState, Observation, np.ndarray]:
    """Initial state either sampled or pinned to a scenario pose."""
    if pose is None:
        return reset(scene, rng, cfg, fixed_height=height)
    s = AbstractState(x=pose[0], y=pose[1], body_yaw=pose[2],
                      base_height=height if height is not None else 1.65)
    from .env import success_check

    s.found = success_check(scene, s, cfg)
    obs, stack = observe(scene, s, None, cfg, crop="center")
    return s, obs, stack


def run_episode_fullbody(
    policy,
    mg,
    scene: Scene,
    cfg: EpisodeConfig,
    horizon: int,
    m_exec: int,
    rng: np.random.Generator,
    max_steps: int = 100,
    start: tuple[AbstractState, Observation, np.ndarray] | None = None,
    record_plan_stacks: bool = False,
) -> FullBodyEpisode:
    """Alternate plan / follow / reconcile until success or the step budget."""
    s, obs, stack = start if start is not None else episode_start(scene, cfg, rng)
    current = character_pose_of(s)
    steps: list[ExecutedStep] = []
    entry_stacks: list[np.ndarray] = []
    plans: list[PlanBuffer] = []
    attempts = 0
    roots = [(s.x, s.y)]
    penetration_steps = 0
    start_state = s

    while not s.found and len(steps) < max_steps:
        if record_plan_stacks:
            entry_stacks.append(stack.copy())
        buf, _ = plan(policy, scene, s, obs, stack, horizon, cfg, rng)
        attempts += 1
        plans.append(buf)
        if len(buf.states) < 2:
            break
        m = min(m_exec, max_steps - len(steps))
        targets = buf
        if len(buf.states) - 1 < m:
            # plan ended early (predicted success); keep tracking its last state
            pad = [buf.states[-1]] * (m - (len(buf.states) - 1))
            targets = PlanBuffer(states=buf.states + pad, actions=buf.actions)
        poses = mg.generate(targets, current, m)
        result = reconcile(policy, scene, poses, s, obs, stack, cfg)
        s, obs, stack = result.state, result.obs, result.stack
        for rs in result.steps:
            pen = _character_penetrations(scene, rs.pose)
            penetration_steps += int(pen > 0)
            steps.append(ExecutedStep(
                attempt=attempts, state=rs.state, pose=rs.pose,
                action=rs.action, penetrations=pen,
            ))
            roots.append((rs.pose.x, rs.pose.y))
        if result.poses:
            current = result.poses[-1]

    return FullBodyEpisode(
        steps=steps, success=s.found, attempts=attempts,
        path_length=_polyline_length(roots), penetration_steps=penetration_steps,
        start=start_state, plan_entry_stacks=entry_stacks, plans=plans,
    )


def one_step_controller(
    policy,
    mg,
    scene: Scene,
    cfg: EpisodeConfig,
    horizon: int,
    rng: np.random.Generator,
    max_steps: int = 100,
    start: tuple[AbstractState, Observation, np.ndarray] | None = None,
) -> FullBodyEpisode:
    """Single policy query per cycle, extrapolated as a straight-line plan.

    The commanded orientation and camera hold for the whole segment; the
    only reconciliation is adopting the executed roots and refreshing the
    frame history from them.
    """
    s, obs, stack = start if start is not None else episode_start(scene, cfg, rng)
    current = character_pose_of(s)
    steps: list[ExecutedStep] = []
    attempts = 0
    roots = [(s.x, s.y)]
    penetration_steps = 0
    start_state = s

    while not s.found and len(steps) < max_steps:
        a = np.asarray(policy.act(obs), dtype=np.float64)
        act = Action.from_array(a).clamped(cfg)
        attempts += 1
        c, sn = math.cos(s.body_yaw), math.sin(s.body_yaw)
        d_world = (c * act.dx - sn * act.dy, sn * act.dx + c * act.dy)
        yaw_cmd = s.body_yaw + act.dtheta
        q_pitch = min(max(s.q_pitch + act.dq_pitch, -cfg.cam_pitch_limit), cfg.cam_pitch_limit)
        q_yaw = min(max(s.q_yaw + act.dq_yaw, -cfg.cam_yaw_limit), cfg.cam_yaw_limit)
        states = [s]
        for k in range(1, horizon + 1):
            states.append(replace(
                s, x=s.x + k * d_world[0], y=s.y + k * d_world[1], body_yaw=yaw_cmd,
                q_pitch=q_pitch, q_yaw=q_yaw, t=s.t + k,
            ))
        buf = PlanBuffer(states=states, actions=[a] * horizon)
        m = min(horizon, max_steps - len(steps))
        poses = mg.generate(buf, current, m)
        for pose in poses:
            s = AbstractState(
                x=pose.x, y=pose.y, body_yaw=pose.yaw, q_pitch=q_pitch, q_yaw=q_yaw,
                base_height=pose.height, height_noise=0.0, n_col=s.n_col, t=s.t + 1,
            )
            obs, stack = observe(scene, s, stack, cfg, crop="center")
            s.found = obs.mask_feat.visible and (
                planar_target_distance(scene, s) <= cfg.success_radius
            )
            pen = _character_penetrations(scene, pose)
            penetration_steps += int(pen > 0)
            fixed = replace(pose, head_pitch=q_pitch, head_yaw=q_yaw)
            steps.append(ExecutedStep(
                attempt=attempts, state=s, pose=fixed, action=a, penetrations=pen,
            ))
            roots.append((pose.x, pose.y))
            current = fixed
            if s.found:
                break

    return FullBodyEpisode(
        steps=steps, success=s.found, attempts=attempts,
        path_length=_polyline_length(roots), penetration_steps=penetration_steps,
        start=start_state, plan_entry_stacks=[], plans=[],
    )


# ---------------------------------------------------------------------------
# trajectory export / replay

FULLBODY_COLUMNS = [
    "step", "attempt", "pose_x", "pose_y", "pose_yaw", "pose_height",
    "head_pitch", "head_yaw", "x", "y", "body_yaw", "q_pitch", "q_yaw",
    "camera_height", "found", "penetrations", "frame_checksum",
]


def write_fullbody_trace(path: str | Path, episode: FullBodyEpisode) -> None:
    lines = ["\t".join(FULLBODY_COLUMNS)]
    for k, st in enumerate(episode.steps):
        s, p = st.state, st.pose
        row = [
            k, st.attempt, repr(p.x), repr(p.y), repr(p.yaw), repr(p.height),
            repr(p.head_pitch), repr(p.head_yaw), repr(s.x), repr(s.y),
            repr(s.body_yaw), repr(s.q_pitch), repr(s.q_yaw), repr(s.camera_height),
            int(s.found), st.penetrations, repr(0.0),
        ]
        lines.append("\t".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_fullbody_trace(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        rec = {}
        for k, v in zip(header, line.split("\t")):
            rec[k] = int(v) if k in ("step", "attempt", "found", "penetrations") else float(v)
        rows.append(rec)
    return rows


def replay_trace(scene: Scene, rows: list[dict], cfg: EpisodeConfig, out_dir: str | Path) -> list[str]:
    """Re-render every recorded state to paired depth/mask graymaps."""
    from . import sensor

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in rows:
        s = AbstractState(
            x=rec["x"], y=rec["y"], body_yaw=rec["body_yaw"],
            q_pitch=rec["q_pitch"], q_yaw=rec["q_yaw"],
            base_height=rec["camera_height"], height_noise=0.0,
        )
        depth, mask = sensor.render_depth_and_mask(
            scene, s.camera_pose(), cfg.render_w, cfg.render_h
        )
        dpath = out / f"depth_{rec['step']:04d}.pgm"
        mpath = out / f"mask_{rec['step']:04d}.pgm"
        sensor.write_pgm(depth, dpath)
        sensor.write_pgm(mask.astype(np.float64), mpath)
        written += [str(dpath), str(mpath)]
    return written


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))
