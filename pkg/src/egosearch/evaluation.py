"""Scenario-based evaluation: SPL, attempts, height sweeps, ablations,
baseline comparisons.

Scenarios are regenerable from seeds: each one names a scene seed, a start
pose, and a target position. Path efficiency compares the traversed root
polyline against the shortest grid path from the start to the success
region around the target (the target point itself may rest on furniture,
outside navigable space).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import Action, EpisodeConfig, RolloutEnv, advance, reset
from .replan import (
    MockCharacter,
    episode_start,
    one_step_controller,
    run_episode_fullbody,
)
from .scene import (
    Scene,
    SceneParams,
    TargetMode,
    TargetObject,
    UnreachableError,
    generate_scene,
    path_length_to_region,
    sample_free_pose,
    sample_target_location,
)
from .seeding import derive_int, derive_rng

SCENARIOS_FORMAT = "egosearch-scenarios/1"


# ---------------------------------------------------------------------------
# metric


def spl(results: list[tuple[bool, float, float]]) -> float:
    """Mean of S_i * ell_i / max(p_i, ell_i) over (success, shortest, traversed)."""
    if not results:
        raise ValueError("spl of an empty result list")
    total = 0.0
    for success, ell, p in results:
        if not ell > 0.0:
            raise ValueError(f"shortest path length must be > 0, got {ell}")
        if p < 0.0:
            raise ValueError(f"traversed path length must be >= 0, got {p}")
        if success:
            total += ell / max(p, ell)
    return total / len(results)


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    scene_seed: int
    agent_pose: tuple[float, float, float]
    target_position: tuple[float, float, float]
    target_mode: str


@dataclass
class ScenarioSet:
    seed: int
    scene_params: SceneParams
    scenarios: list[Scenario]
    _scene_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.scenarios)

    def scene_for(self, scenario: Scenario) -> Scene:
        if scenario.scene_seed not in self._scene_cache:
            self._scene_cache[scenario.scene_seed] = generate_scene(
                scenario.scene_seed, self.scene_params
            )
        base = self._scene_cache[scenario.scene_seed]
        return base.with_target(
            TargetObject(position=scenario.target_position, radius=base.target.radius)
        )


def make_scenarios(
    count: int,
    seed: int,
    scene_params: SceneParams,
    mode: TargetMode = TargetMode.EXCLUDE_CABINETS,
    n_scenes: int = 10,
    success_radius: float = 0.5,
    scene_seeds: list[int] | None = None,
) -> ScenarioSet:
    """Deterministic scenario suite over a pool of rooms.

    Targets whose success region is unreachable from the start (grid-wise)
    are resampled, so every scenario is solvable in principle. ``scene_seeds``
    pins the room pool (e.g. to match a training pool); otherwise seeds are
    derived from ``seed``.
    """
    if scene_seeds is None:
        scene_seeds = [derive_int(seed, "scene", k) % 2**31 for k in range(n_scenes)]
    else:
        scene_seeds = list(scene_seeds)
        n_scenes = len(scene_seeds)
    scenes = {s: generate_scene(s, scene_params) for s in scene_seeds}
    out: list[Scenario] = []
    for k in range(count):
        scene_seed = scene_seeds[k % n_scenes]
        scene = scenes[scene_seed]
        rng = derive_rng(seed, "scenario", k)
        for _ in range(50):
            pose = sample_free_pose(scene, rng, clearance=scene.agent_radius)
            target = sample_target_location(scene, rng, mode,
                                            surface_weights=scene_params.surface_weights)
            try:
                path_length_to_region(
                    scene, (pose[0], pose[1]), (target[0], target[1]), success_radius
                )
            except UnreachableError:
                continue
            out.append(Scenario(
                scene_seed=scene_seed, agent_pose=pose, target_position=target,
                target_mode=mode.value,
            ))
            break
        else:
            raise RuntimeError(f"scenario {k}: no solvable placement found")
    return ScenarioSet(seed=seed, scene_params=scene_params, scenarios=out)


def scenarios_to_dict(s: ScenarioSet) -> dict:
    params = asdict(s.scene_params)
    params["target_mode"] = s.scene_params.target_mode.value
    return {
        "format": SCENARIOS_FORMAT,
        "seed": s.seed,
        "scene_params": params,
        "scenarios": [asdict(x) for x in s.scenarios],
    }


def scenarios_from_dict(d: dict) -> ScenarioSet:
    if d.get("format") != SCENARIOS_FORMAT:
        raise ValueError(f"unsupported scenario format: {d.get('format')!r}")
    params = dict(d["scene_params"])
    params["target_mode"] = TargetMode(params["target_mode"])
    for key in ("furniture_range", "cabinet_range", "furniture_half_xy",
                "furniture_height", "cabinet_half_xy", "cabinet_height"):
        params[key] = tuple(params[key])
    return ScenarioSet(
        seed=d["seed"],
        scene_params=SceneParams(**params),
        scenarios=[
            Scenario(
                scene_seed=x["scene_seed"],
                agent_pose=tuple(x["agent_pose"]),
                target_position=tuple(x["target_position"]),
                target_mode=x["target_mode"],
            )
            for x in d["scenarios"]
        ],
    )


def save_scenarios(s: ScenarioSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenarios_to_dict(s), indent=2) + "\n")


def load_scenarios(path: str | Path) -> ScenarioSet:
    return scenarios_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    success_rate: float
    spl: float
    mean_attempts: float
    mean_collisions: float
    rows: list[dict]

    def summary(self) -> str:
        return (
            f"success {self.success_rate:.3f}  spl {self.spl:.3f}  "
            f"attempts {self.mean_attempts:.2f}  collisions {self.mean_collisions:.2f}"
        )


REPORT_COLUMNS = [
    "scenario", "scene_seed", "success", "shortest", "traversed", "steps",
    "attempts", "collisions",
]


def save_report(report: EvalReport, path: str | Path) -> None:
    lines = ["\t".join(REPORT_COLUMNS)]
    for row in report.rows:
        lines.append("\t".join(
            repr(row[c]) if isinstance(row[c], float) else str(row[c])
            for c in REPORT_COLUMNS
        ))
    lines.append("# " + report.summary())
    Path(path).write_text("\n".join(lines) + "\n")


def _report_from_rows(rows: list[dict]) -> EvalReport:
    results = [(bool(r["success"]), r["shortest"], r["traversed"]) for r in rows]
    return EvalReport(
        success_rate=sum(s for s, _, _ in results) / len(results),
        spl=spl(results),
        mean_attempts=float(np.mean([r["attempts"] for r in rows])),
        mean_collisions=float(np.mean([r["collisions"] for r in rows])),
        rows=rows,
    )


# ---------------------------------------------------------------------------
# abstract-model evaluation


class _Harness:
    """Minimal env-shaped view for privileged (bindable) policies."""

    def __init__(self, scene, state):
        self.scene = scene
        self.state = state


def _run_abstract_scenario(
    policy, scene: Scene, scenario: Scenario, height: float, cfg: EpisodeConfig
) -> dict:
    s, obs, stack = episode_start(scene, cfg, derive_rng(0, "unused"),
                                  pose=scenario.agent_pose, height=height)
    harness = _Harness(scene, s)
    if hasattr(policy, "bind"):
        policy.bind(harness)
    roots = [(s.x, s.y)]
    rng = derive_rng(0, "abstract-noise")  # untouched unless noise is enabled
    steps = 0
    while not s.found and s.t < cfg.t_max:
        a = policy.act(obs)
        s, obs, stack, info = advance(scene, s, Action.from_array(np.asarray(a)),
                                      rng, cfg, stack, "center")
        harness.state = s
        roots.append((s.x, s.y))
        steps += 1
    ell = path_length_to_region(
        scene, (scenario.agent_pose[0], scenario.agent_pose[1]),
        (scenario.target_position[0], scenario.target_position[1]), cfg.success_radius,
    )
    ell = max(ell, scene.nav_resolution)
    p = float(sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(roots, roots[1:])))
    return {
        "success": int(s.found), "shortest": ell, "traversed": p,
        "steps": steps, "attempts": 1, "collisions": s.n_col,
    }


def evaluate_policy(
    policy,
    scenario_set: ScenarioSet,
    height: float,
    cfg: EpisodeConfig,
) -> EvalReport:
    """Deterministic abstract-model episodes at a fixed camera height."""
    rows = []
    for k, scenario in enumerate(scenario_set.scenarios):
        scene = scenario_set.scene_for(scenario)
        row = _run_abstract_scenario(policy, scene, scenario, height, cfg)
        row["scenario"] = k
        row["scene_seed"] = scenario.scene_seed
        rows.append(row)
    return _report_from_rows(rows)


HEIGHTS = (0.45, 1.05, 1.65)


def height_sweep(
    policy,
    seed: int,
    scene_params: SceneParams,
    cfg: EpisodeConfig,
    count: int = 100,
    heights: tuple = HEIGHTS,
    n_scenes: int = 10,
) -> dict[tuple[float, str], EvalReport]:
    """Success table over heights x target-sampling modes."""
    out = {}
    for mode in (TargetMode.EXCLUDE_CABINETS, TargetMode.EVERYWHERE):
        scenarios = make_scenarios(count, seed, scene_params, mode, n_scenes,
                                   cfg.success_radius)
        for h in heights:
            out[(h, mode.value)] = evaluate_policy(policy, scenarios, h, cfg)
    return out


def format_height_table(table: dict[tuple[float, str], EvalReport]) -> str:
    heights = sorted({h for h, _ in table})
    lines = [f"{'Head height':<14}{'Excluding cabinets':<22}{'Everywhere':<12}"]
    for h in heights:
        ex = table[(h, TargetMode.EXCLUDE_CABINETS.value)].success_rate
        ev = table[(h, TargetMode.EVERYWHERE.value)].success_rate
        lines.append(f"{h:<14}{ex * 100:<22.0f}{ev * 100:<12.0f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# full-body evaluation and baselines


def evaluate_fullbody(
    policy,
    scenario_set: ScenarioSet,
    cfg: EpisodeConfig,
    controller: str = "ours",
    horizon: int = 20,
    m_exec: int = 5,
    mock_params: dict | None = None,
    height: float = 1.65,
    max_steps: int = 100,
) -> EvalReport:
    """Run every scenario through a full-body controller and aggregate."""
    mock_params = dict(mock_params or {})
    mock_params.setdefault("base_height", height)
    rows = []
    for k, scenario in enumerate(scenario_set.scenarios):
        scene = scenario_set.scene_for(scenario)
        start = episode_start(scene, cfg, derive_rng(0, "unused"),
                              pose=scenario.agent_pose, height=height)
        mg = MockCharacter(**mock_params)
        rng = derive_rng(scenario_set.seed, "fullbody", k)
        if controller == "ours":
            ep = run_episode_fullbody(policy, mg, scene, cfg, horizon, m_exec, rng,
                                      max_steps=max_steps, start=start)
        elif controller == "one_step":
            ep = one_step_controller(policy, mg, scene, cfg, horizon, rng,
                                     max_steps=max_steps, start=start)
        else:
            raise ValueError(f"unknown controller: {controller!r}")
        ell = path_length_to_region(
            scene, scenario.agent_pose[:2],
            (scenario.target_position[0], scenario.target_position[1]),
            cfg.success_radius,
        )
        ell = max(ell, scene.nav_resolution)
        rows.append({
            "scenario": k, "scene_seed": scenario.scene_seed,
            "success": int(ep.success), "shortest": ell,
            "traversed": max(ep.path_length, 0.0), "steps": ep.executed_steps,
            "attempts": ep.attempts, "collisions": ep.penetration_steps,
        })
    return _report_from_rows(rows)


def compare_baselines(
    policy,
    scenario_set: ScenarioSet,
    cfg: EpisodeConfig,
    m_values: tuple = (2, 5, 10),
    horizon: int = 20,
    one_step_horizons: tuple = (2, 10),
    mock_params: dict | None = None,
    height: float = 1.65,
    noisy_seed: int = 0,
) -> dict[str, EvalReport]:
    """Ours over an M sweep, two one-step horizons, and noisy search."""
    from .policies import NoisySearchPolicy

    out: dict[str, EvalReport] = {}
    for m in m_values:
        out[f"ours_M{m}"] = evaluate_fullbody(
            policy, scenario_set, cfg, "ours", horizon, m, mock_params, height
        )
    for h in one_step_horizons:
        out[f"one_step_h{h}"] = evaluate_fullbody(
            policy, scenario_set, cfg, "one_step", h, m_exec=h,
            mock_params=mock_params, height=height,
        )
    noisy = NoisySearchPolicy(policy, cfg, derive_rng(noisy_seed, "noisy-search"))
    out["noisy_search"] = evaluate_fullbody(
        noisy, scenario_set, cfg, "ours", horizon, 5, mock_params, height
    )
    return out


def format_baseline_table(reports: dict[str, EvalReport]) -> str:
    lines = [f"{'config':<16}{'success':>8}{'spl':>8}{'attempts':>10}{'collisions':>12}"]
    for name, r in reports.items():
        lines.append(
            f"{name:<16}{r.success_rate:>8.3f}{r.spl:>8.3f}"
            f"{r.mean_attempts:>10.2f}{r.mean_collisions:>12.2f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# head ablation


def success_region_reachable(scene: Scene, target_xy, radius: float) -> bool:
    """A free nav cell within ``radius`` of the target exists. Because the
    free space is one connected component, existence implies reachability."""
    grid = scene.navgrid()
    free = grid.free
    ny, nx = free.shape
    xs = grid.origin[0] + (np.arange(nx) + 0.5) * grid.resolution
    ys = grid.origin[1] + (np.arange(ny) + 0.5) * grid.resolution
    gx, gy = np.meshgrid(xs, ys)
    region = (gx - target_xy[0]) ** 2 + (gy - target_xy[1]) ** 2 <= radius**2
    return bool((region & free).any())


@dataclass
class RoomPool:
    """Scene provider cycling a fixed pool of rooms with fresh targets.

    Targets whose success region contains no navigable cell (e.g. resting at
    the center of a wide box) are resampled; such placements can never
    terminate successfully.
    """

    scene_params: SceneParams
    pool_seeds: tuple
    target_mode: str = TargetMode.EXCLUDE_CABINETS.value
    success_radius: float = 0.5
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def base_scene(self, seed: int) -> Scene:
        if seed not in self._cache:
            self._cache[seed] = generate_scene(seed, self.scene_params)
        return self._cache[seed]

    def __call__(self, rng: np.random.Generator) -> Scene:
        seed = self.pool_seeds[int(rng.integers(len(self.pool_seeds)))]
        scene = self.base_scene(seed)
        for _ in range(100):
            pos = sample_target_location(scene, rng, TargetMode(self.target_mode),
                                         surface_weights=self.scene_params.surface_weights)
            if success_region_reachable(scene, pos[:2], self.success_radius):
                return scene.with_target(TargetObject(position=pos, radius=scene.target.radius))
        raise RuntimeError(f"room {seed}: no reachable target placement found")


@dataclass
class EnvFactory:
    """Picklable builder of episode drivers over a room pool."""

    pool: RoomPool
    cfg: EpisodeConfig
    fixed_height: float | None = None

    def __call__(self, rng: np.random.Generator, crop: str) -> RolloutEnv:
        return RolloutEnv(self.pool, self.cfg, rng, fixed_height=self.fixed_height,
                          crop=crop)


class AimedSeekEnv(RolloutEnv):
    """Sanity-benchmark episode driver: an empty room whose agent spawns
    already facing the target. Isolates approach learning from search."""

    def reset(self):
        obs = super().reset()
        target = self.scene.target.position
        bearing = math.atan2(target[1] - self.state.y, target[0] - self.state.x)
        self.state.body_yaw = bearing + float(self.rng.uniform(-0.3, 0.3))
        from .env import observe, success_check

        self.state.found = success_check(self.scene, self.state, self.cfg)
        obs, self._stack = observe(self.scene, self.state, None, self.cfg,
                                   self.crop, self.rng)
        return obs


@dataclass
class SeekProbeFactory:
    """Picklable builder of the aimed-seek benchmark environment."""

    cfg: EpisodeConfig
    pool: "RoomPool"
    fixed_height: float = 1.65

    def __call__(self, rng: np.random.Generator, crop: str) -> AimedSeekEnv:
        return AimedSeekEnv(self.pool, self.cfg, rng,
                            fixed_height=self.fixed_height, crop=crop)


def seek_probe_factory(cfg: EpisodeConfig, target_radius: float = 0.3) -> SeekProbeFactory:
    params = SceneParams(
        width=10.0, depth=10.0, furniture_range=(0, 0), cabinet_range=(0, 0),
        target_radius=target_radius,
    )
    pool = RoomPool(params, (11, 12, 13), target_mode=TargetMode.EXCLUDE_CABINETS.value)
    return SeekProbeFactory(cfg=cfg, pool=pool)


def _ablation_worker(args: tuple) -> tuple:
    import torch

    from .learner import train

    (key, env_factory, train_cfg, ep_cfg, seed, head_enabled, out_dir) = args
    torch.set_num_threads(1)
    curve_path = Path(out_dir) / f"curve_{key}.tsv" if out_dir else None
    ckpt_path = Path(out_dir) / f"agent_{key}.ckpt" if out_dir else None
    result = train(env_factory, train_cfg, ep_cfg, seed=seed, head_enabled=head_enabled,
                   curve_path=curve_path, checkpoint_path=ckpt_path)
    final = result.curve[-1]["success_rate"] if result.curve else 0.0
    return key, result.curve, final, str(ckpt_path) if ckpt_path else None


def ablate_head(
    env_factory: EnvFactory,
    train_cfg,
    ep_cfg: EpisodeConfig,
    seeds: tuple = (0, 1, 2),
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> dict:
    """Train matched head-enabled and head-disabled policies per seed.

    Returns curves, final success rates, and checkpoint paths keyed by
    (head|nohead, seed).
    """
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = []
    for seed in seeds:
        jobs.append((f"head_s{seed}", env_factory, train_cfg, ep_cfg, seed, True, out_dir))
        jobs.append((f"nohead_s{seed}", env_factory, train_cfg, ep_cfg, seed, False, out_dir))
    results = {}
    if workers > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for key, curve, final, ckpt in pool.map(_ablation_worker, jobs):
                results[key] = {"curve": curve, "final_success": final, "checkpoint": ckpt}
    else:
        for job in jobs:
            key, curve, final, ckpt = _ablation_worker(job)
            results[key] = {"curve": curve, "final_success": final, "checkpoint": ckpt}
    head = [results[f"head_s{s}"]["final_success"] for s in seeds]
    nohead = [results[f"nohead_s{s}"]["final_success"] for s in seeds]
    results["head_mean"] = float(np.mean(head))
    results["nohead_mean"] = float(np.mean(nohead))
    return results
