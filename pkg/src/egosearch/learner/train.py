"""Interaction loop: act with random crops, store pre-crop frames, update
every step after warmup, and periodically evaluate the deterministic policy
with center crops to build the training curve."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..env import RolloutEnv
from ..seeding import derive_rng
from .agent import SearchAgent
from .buffer import ReplayBuffer
from .config import TrainConfig

CURVE_COLUMNS = [
    "step", "success_rate", "mean_return", "critic_loss", "actor_loss",
    "alpha_loss", "curl_loss", "alpha",
]


@dataclass
class TrainResult:
    agent: SearchAgent
    curve: list[dict]


def write_curve(path: str | Path, curve: list[dict]) -> None:
    lines = ["\t".join(CURVE_COLUMNS)]
    for row in curve:
        lines.append("\t".join(
            str(row[c]) if c == "step" else repr(float(row[c])) for c in CURVE_COLUMNS
        ))
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        vals = line.split("\t")
        rows.append({
            k: (int(v) if k == "step" else float(v)) for k, v in zip(header, vals)
        })
    return rows


def evaluate_deterministic(env: RolloutEnv, agent: SearchAgent, episodes: int) -> tuple[float, float]:
    """Success rate and mean return of tanh(mean) actions under center crops."""
    successes = 0
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        total = 0.0
        while not done:
            a = agent.act(obs.depth_stack, obs.mask_feat.vector(), obs.proprio())
            obs, r, done, info = env.step(a)
            total += r
        successes += int(info["success"])
        returns.append(total)
    return successes / episodes, float(np.mean(returns))


def train(
    env_factory: Callable[[np.random.Generator, str], RolloutEnv],
    cfg: TrainConfig,
    ep_cfg,
    seed: int,
    head_enabled: bool = True,
    curve_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the full loop and return the trained agent plus its curve.

    ``env_factory(rng, crop)`` builds a fresh episode driver; the trainer
    makes one with random crops for collection and one with center crops for
    evaluation. With the head disabled the action space shrinks to the three
    body components.
    """
    env = env_factory(derive_rng(seed, "train-env"), "random")
    env.head_enabled = head_enabled
    action_dim = 5 if head_enabled else 3
    bounds = ep_cfg.action_bounds()[:action_dim]

    from ..sensor import MaskFeature

    agent = SearchAgent(
        action_dim=action_dim,
        action_scale=bounds,
        cfg=cfg,
        image_size=ep_cfg.crop_w,
        k_frames=ep_cfg.k_frames,
        feat_dim=MaskFeature.DIM,
        seed=seed,
    )
    buffer = ReplayBuffer(
        capacity=cfg.replay_capacity,
        frame_shape=(ep_cfg.render_h, ep_cfg.render_w),
        feat_dim=MaskFeature.DIM,
        proprio_dim=2,
        action_dim=action_dim,
        k_frames=ep_cfg.k_frames,
    )
    rng_warmup = derive_rng(seed, "warmup-actions")
    rng_buffer = derive_rng(seed, "buffer-sampling")

    curve: list[dict] = []
    losses = {"critic": float("nan"), "actor": float("nan"),
              "alpha": float("nan"), "curl": float("nan"), "alpha_value": float("nan")}
    obs = env.reset()
    t_start = time.time()
    for step_i in range(1, cfg.total_steps + 1):
        if step_i <= cfg.warmup_steps:
            a_unit = rng_warmup.uniform(-1.0, 1.0, size=action_dim)
            a = a_unit * bounds
        else:
            a = agent.act(obs.depth_stack, obs.mask_feat.vector(), obs.proprio(),
                          stochastic=True)
            a_unit = a / bounds
        frame = env.pre_crop_stack[-1]
        feat = obs.mask_feat.vector()
        proprio = obs.proprio()
        next_obs, r, done, info = env.step(a)
        done_bootstrap = info["success"]  # timeouts bootstrap through
        # actions are stored in the policy's [-1, 1] parameterization
        buffer.add(frame, feat, proprio, a_unit, r, done_bootstrap)
        if done:
            buffer.finish_episode(
                env.pre_crop_stack[-1], next_obs.mask_feat.vector(), next_obs.proprio()
            )
            obs = env.reset()
        else:
            obs = next_obs

        if (
            step_i > cfg.warmup_steps
            and step_i % cfg.update_every == 0
            and buffer.valid_indices().size >= cfg.batch_size
        ):
            losses = agent.update(buffer.sample(cfg.batch_size, rng_buffer))

        if step_i % cfg.eval_every == 0 or step_i == cfg.total_steps:
            eval_env = env_factory(derive_rng(seed, "eval-env", step_i), "center")
            eval_env.head_enabled = head_enabled
            success, mean_return = evaluate_deterministic(eval_env, agent, cfg.eval_episodes)
            curve.append({
                "step": step_i, "success_rate": success, "mean_return": mean_return,
                "critic_loss": losses["critic"], "actor_loss": losses["actor"],
                "alpha_loss": losses["alpha"], "curl_loss": losses["curl"],
                "alpha": losses["alpha_value"],
            })
            if log:
                log(
                    f"step {step_i}/{cfg.total_steps} success {success:.2f} "
                    f"return {mean_return:.2f} ({time.time() - t_start:.0f}s)"
                )
            if curve_path:
                write_curve(curve_path, curve)
            if checkpoint_path:
                agent.save(checkpoint_path)

    if curve_path:
        write_curve(curve_path, curve)
    if checkpoint_path:
        agent.save(checkpoint_path)
    return TrainResult(agent=agent, curve=curve)
