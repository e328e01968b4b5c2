"""Command-line entry point tying scene generation, training, evaluation,
replanning, trajectory replay, and the gradient-check suite together.

Every run is reproducible from ``--seed``; ``--deterministic`` additionally
pins torch to one thread and forces a single worker so repeated invocations
produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import replan as rp
from .env import EpisodeConfig
from .learner import TrainConfig, train
from .learner.agent import SearchAgent
from .learner.gradcheck import run_gradcheck
from .policies import AgentPolicy
from .presets import Preset, get_preset
from .scene import SceneParams, TargetMode, generate_scene, load_scene, save_scene
from .seeding import derive_rng

CONFIG_FORMAT = "egosearch-config/1"


class ConfigError(Exception):
    pass


def _apply_section(obj, section: dict, name: str):
    valid = {f.name for f in dataclasses.fields(obj)}
    for key, value in section.items():
        if key not in valid:
            raise ConfigError(f"unknown key {key!r} in config section {name!r}")
        current = getattr(obj, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        if key == "target_mode":
            value = TargetMode(value)
        setattr(obj, key, value)
    return obj


def load_run_config(preset: Preset, path: str | None) -> Preset:
    if path is None:
        return preset
    raw = json.loads(Path(path).read_text())
    if raw.get("format") != CONFIG_FORMAT:
        raise ConfigError(f"unsupported config format: {raw.get('format')!r}")
    known = {"format", "preset", "scene", "episode", "train", "fixed_height", "pool_seeds"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    if "preset" in raw:
        preset = get_preset(raw["preset"])
    _apply_section(preset.scene, raw.get("scene", {}), "scene")
    _apply_section(preset.episode, raw.get("episode", {}), "episode")
    _apply_section(preset.train, raw.get("train", {}), "train")
    if "fixed_height" in raw:
        preset.fixed_height = raw["fixed_height"]
    if "pool_seeds" in raw:
        preset.pool_seeds = tuple(raw["pool_seeds"])
    return preset


def save_run_config(preset: Preset, path: str | Path) -> None:
    payload = {
        "format": CONFIG_FORMAT,
        "preset": preset.name,
        "scene": _section_dict(preset.scene),
        "episode": _section_dict(preset.episode),
        "train": _section_dict(preset.train),
        "fixed_height": preset.fixed_height,
        "pool_seeds": list(preset.pool_seeds),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _section_dict(obj) -> dict:
    out = dataclasses.asdict(obj)
    for k, v in out.items():
        if isinstance(v, TargetMode):
            out[k] = v.value
        elif isinstance(v, tuple):
            out[k] = list(v)
    return out


def _setup_determinism(args) -> None:
    if getattr(args, "deterministic", False):
        import torch

        torch.set_num_threads(1)
        args.workers = 1


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _preset_from_args(args) -> Preset:
    preset = get_preset(args.preset)
    preset = load_run_config(preset, args.config)
    return preset


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scene(args) -> int:
    preset = _preset_from_args(args)
    scene = generate_scene(args.seed, preset.scene)
    out = _out_dir(args) / f"scene_{args.seed}.json"
    save_scene(scene, out)
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    preset = _preset_from_args(args)
    if args.steps is not None:
        preset.train.total_steps = args.steps
    if args.height is not None:
        preset.fixed_height = args.height
    out = _out_dir(args)
    pool = ev.RoomPool(preset.scene, preset.pool_seeds,
                       target_mode=preset.scene.target_mode.value)
    factory = ev.EnvFactory(pool, preset.episode, fixed_height=preset.fixed_height)
    save_run_config(preset, out / "config.json")

    if args.ablate:
        results = ev.ablate_head(
            factory, preset.train, preset.episode, seeds=tuple(args.seeds),
            out_dir=out, workers=args.workers,
        )
        print(f"head mean success:   {results['head_mean']:.3f}")
        print(f"nohead mean success: {results['nohead_mean']:.3f}")
        return 0

    head_enabled = not args.no_head
    tag = "nohead" if args.no_head else "head"
    result = train(
        factory, preset.train, preset.episode, seed=args.seed,
        head_enabled=head_enabled,
        curve_path=out / f"curve_{tag}_s{args.seed}.tsv",
        checkpoint_path=out / f"agent_{tag}_s{args.seed}.ckpt",
        log=print if args.verbose else None,
    )
    final = result.curve[-1]["success_rate"] if result.curve else float("nan")
    print(f"final deterministic success: {final:.3f}")
    print(f"wrote {out / f'agent_{tag}_s{args.seed}.ckpt'}")
    return 0


def _load_policy(path: str):
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return AgentPolicy(SearchAgent.load(path))


def cmd_eval(args) -> int:
    preset = _preset_from_args(args)
    policy = _load_policy(args.checkpoint)
    out = _out_dir(args)
    table = ev.height_sweep(
        policy, seed=args.seed, scene_params=preset.scene, cfg=preset.episode,
        count=args.count, heights=tuple(args.heights), n_scenes=args.pool,
    )
    text = ev.format_height_table(table)
    (out / "height_table.txt").write_text(text + "\n")
    for (h, mode), report in table.items():
        ev.save_report(report, out / f"eval_h{h}_{mode}.tsv")
    print(text)
    return 0


def cmd_replan(args) -> int:
    preset = _preset_from_args(args)
    policy = _load_policy(args.checkpoint)
    out = _out_dir(args)
    scenarios = ev.make_scenarios(
        args.count, args.seed, preset.scene,
        TargetMode(args.target_mode), n_scenes=args.pool,
        success_radius=preset.episode.success_radius,
    )
    mock = {"lag": args.lag, "bob_amplitude": args.bob, "max_speed": args.max_speed}
    if args.baselines:
        reports = ev.compare_baselines(
            policy, scenarios, preset.episode, m_values=tuple(args.m),
            horizon=args.t, mock_params=mock, height=args.height,
        )
        text = ev.format_baseline_table(reports)
        (out / "baselines.txt").write_text(text + "\n")
        for name, report in reports.items():
            ev.save_report(report, out / f"replan_{name}.tsv")
        print(text)
        return 0
    report = ev.evaluate_fullbody(
        policy, scenarios, preset.episode, "ours", horizon=args.t,
        m_exec=args.m[0], mock_params=mock, height=args.height,
    )
    ev.save_report(report, out / "replan_ours.tsv")
    # export the first episode's trajectory for replay
    scenario = scenarios.scenarios[0]
    scene = scenarios.scene_for(scenario)
    start = rp.episode_start(scene, preset.episode, derive_rng(0, "unused"),
                             pose=scenario.agent_pose, height=args.height)
    mg = rp.MockCharacter(base_height=args.height, **mock)
    episode = rp.run_episode_fullbody(
        policy, mg, scene, preset.episode, args.t, args.m[0],
        derive_rng(args.seed, "fullbody", 0), start=start,
    )
    save_scene(scene, out / "replan_scene.json")
    rp.write_fullbody_trace(out / "replan_traj.tsv", episode)
    print(report.summary())
    return 0


def cmd_replay(args) -> int:
    preset = _preset_from_args(args)
    scene = load_scene(args.scene)
    rows = rp.read_fullbody_trace(args.trace)
    files = rp.replay_trace(scene, rows, preset.episode, _out_dir(args) / "frames")
    print(f"wrote {len(files)} graymap files")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(seed=args.seed, primitive_trials=args.trials,
                            composed_trials=max(2, args.trials // 6))
    worst = max(results.values())
    for name, err in sorted(results.items()):
        print(f"{name:<18} max rel err {err:.3e}")
    print(f"overall max rel err {worst:.3e} (threshold 1e-4)")
    return 0 if worst <= 1e-4 else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egosearch",
        description="Egocentric object-search: scenes, training, evaluation, replanning.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded, byte-reproducible runs")
    common.add_argument("--out", default="egosearch_out")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--config", default=None, help="JSON run config")
    common.add_argument("--preset", default="toy", choices=["toy", "full"])

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", parents=[common], help="emit a scene file")
    p.set_defaults(fn=cmd_gen_scene)

    p = sub.add_parser("train", parents=[common], help="train the search policy")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--no-head", action="store_true", help="freeze the camera joints")
    p.add_argument("--height", type=float, default=None)
    p.add_argument("--ablate", action="store_true",
                   help="train head and no-head arms over --seeds")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="height/mode success sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--heights", type=float, nargs="+", default=[0.45, 1.05, 1.65])
    p.add_argument("--pool", type=int, default=10)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("replan", parents=[common], help="full-body episodes and baselines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--t", type=int, default=20, help="plan horizon")
    p.add_argument("--m", type=int, nargs="+", default=[5], help="executed steps per plan")
    p.add_argument("--lag", type=float, default=0.7)
    p.add_argument("--bob", type=float, default=0.05)
    p.add_argument("--max-speed", type=float, default=float("inf"))
    p.add_argument("--height", type=float, default=1.65)
    p.add_argument("--target-mode", default="exclude_cabinets",
                   choices=[m.value for m in TargetMode])
    p.add_argument("--baselines", action="store_true")
    p.add_argument("--pool", type=int, default=10)
    p.set_defaults(fn=cmd_replan)

    p = sub.add_parser("replay", parents=[common], help="re-render a trajectory")
    p.add_argument("--scene", required=True)
    p.add_argument("--trace", required=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_determinism(args)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
