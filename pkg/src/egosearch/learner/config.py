"""Training hyperparameters. Defaults are the full-scale settings; small
boards (CPU smoke tests, the toy room suite) override sizes and budgets."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class TrainConfig:
    gamma: float = 0.99
    batch_size: int = 32
    total_steps: int = 750_000
    replay_capacity: int = 100_000

    actor_lr: float = 1e-3
    actor_betas: tuple[float, float] = (0.9, 0.999)
    critic_lr: float = 1e-3
    critic_betas: tuple[float, float] = (0.9, 0.999)
    encoder_lr: float = 1e-3
    alpha_lr: float = 1e-4
    alpha_betas: tuple[float, float] = (0.5, 0.999)
    init_temperature: float = 0.1
    critic_tau: float = 0.01
    encoder_tau: float = 0.05

    latent_dim: int = 128
    hidden_dim: int = 1024
    num_filters: int = 32
    num_conv_layers: int = 4
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    # target entropy defaults to -action_dim when None
    target_entropy: float | None = None

    # proprioception history length: only the current joint angles are fed
    head_history: int = 1

    warmup_steps: int = 1000
    update_every: int = 1
    # within one update call: critics every call, actor/temperature and the
    # polyak targets every Nth call (standard twin-delayed cadence)
    actor_update_freq: int = 2
    target_update_freq: int = 2
    eval_every: int = 2500
    eval_episodes: int = 10
