"""Soft actor-critic with a contrastive auxiliary objective on depth crops.

One query encoder is shared by the actor (detached) and the critics
(gradients on); a key encoder and target critics are maintained purely by
polyak averaging. The contrastive term scores query/key crop pairs of the
same frame stack with a learned bilinear form, using the rest of the batch
as negatives.
"""

from __future__ import annotations

import copy
import math
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F

from ..seeding import derive_int, derive_rng
from .checkpoint import load_tensors, save_tensors
from .config import TrainConfig
from .networks import Actor, Critic, DepthEncoder, normalize_latent, soft_update, weight_init

CHECKPOINT_VERSION = 1


class NonFiniteError(RuntimeError):
    """A forward pass or loss produced NaN or infinity."""


def batch_random_crop(batch: np.ndarray, out_h: int, out_w: int, rng: np.random.Generator) -> np.ndarray:
    """Independent crop offset per batch element; channels crop together."""
    b, k, h, w = batch.shape
    if h < out_h or w < out_w:
        raise ValueError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    top = rng.integers(0, h - out_h + 1, size=b)
    left = rng.integers(0, w - out_w + 1, size=b)
    out = np.empty((b, k, out_h, out_w), dtype=batch.dtype)
    for i in range(b):
        out[i] = batch[i, :, top[i] : top[i] + out_h, left[i] : left[i] + out_w]
    return out


def contrastive_logits(W: torch.Tensor, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Bilinear scores q_i^T W k_j with each row max-stabilized (detached shift)."""
    logits = q @ W @ k.t()
    return logits - logits.max(dim=1, keepdim=True).values.detach()


def curl_loss_from_latents(W: torch.Tensor, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy with positives on the diagonal, batchmates as negatives."""
    if q.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives)")
    logits = contrastive_logits(W, q, k)
    labels = torch.arange(logits.shape[0], device=logits.device)
    return F.cross_entropy(logits, labels)


class SearchAgent:
    """Policy, critics, and their joint update rule."""

    def __init__(
        self,
        action_dim: int,
        action_scale: np.ndarray,
        cfg: TrainConfig,
        image_size: int,
        k_frames: int,
        feat_dim: int,
        proprio_dim: int = 2,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        self.cfg = cfg
        self.action_dim = action_dim
        self.action_scale = np.asarray(action_scale, dtype=np.float64)
        self.image_size = image_size
        self.k_frames = k_frames
        self.feat_dim = feat_dim
        self.proprio_dim = proprio_dim
        self.seed = seed
        self.dtype = dtype

        torch.manual_seed(derive_int(seed, "agent-init"))
        in_dim = cfg.latent_dim + feat_dim + proprio_dim
        self.encoder = DepthEncoder(
            k_frames, image_size, cfg.latent_dim, cfg.num_filters, cfg.num_conv_layers
        )
        self.actor = Actor(in_dim, action_dim, cfg.hidden_dim, cfg.log_std_min, cfg.log_std_max)
        self.critic = Critic(in_dim, action_dim, cfg.hidden_dim)
        self.encoder.apply(weight_init)
        self.actor.apply(weight_init)
        self.critic.apply(weight_init)
        self.W = torch.nn.Parameter(torch.rand(cfg.latent_dim, cfg.latent_dim))
        self.log_alpha = torch.nn.Parameter(torch.tensor(math.log(cfg.init_temperature)))

        self.key_encoder = copy.deepcopy(self.encoder).requires_grad_(False)
        self.critic_target = copy.deepcopy(self.critic).requires_grad_(False)

        if dtype is not torch.float32:
            for m in self.modules():
                m.to(dtype)
            self.W.data = self.W.data.to(dtype)
            self.log_alpha.data = self.log_alpha.data.to(dtype)

        self.target_entropy = (
            cfg.target_entropy if cfg.target_entropy is not None else -float(action_dim)
        )
        self.actor_opt = torch.optim.Adam(
            self.actor.parameters(), lr=cfg.actor_lr, betas=cfg.actor_betas
        )
        self.critic_opt = torch.optim.Adam(
            list(self.critic.parameters()) + list(self.encoder.parameters()),
            lr=cfg.critic_lr, betas=cfg.critic_betas,
        )
        self.curl_opt = torch.optim.Adam(
            list(self.encoder.parameters()) + [self.W], lr=cfg.encoder_lr
        )
        self.alpha_opt = torch.optim.Adam(
            [self.log_alpha], lr=cfg.alpha_lr, betas=cfg.alpha_betas
        )
        self.noise_gen = torch.Generator().manual_seed(derive_int(seed, "actor-noise"))
        self.crop_rng = derive_rng(seed, "curl-crops")
        self.update_calls = 0
        self._last_actor_loss = 0.0
        self._last_alpha_loss = 0.0

    def modules(self) -> Iterable[torch.nn.Module]:
        return (self.encoder, self.key_encoder, self.actor, self.critic, self.critic_target)

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    # ------------------------------------------------------------------
    # acting

    def _fuse(self, stack: torch.Tensor, feat: torch.Tensor, proprio: torch.Tensor,
              detach_encoder: bool = False, key: bool = False) -> torch.Tensor:
        enc = self.key_encoder if key else self.encoder
        z = normalize_latent(enc(stack))
        if detach_encoder:
            z = z.detach()
        return torch.cat([z, feat, proprio], dim=-1)

    def act(self, depth_stack: np.ndarray, feat: np.ndarray, proprio: np.ndarray,
            stochastic: bool = False) -> np.ndarray:
        """Action scaled to the per-component bounds; deterministic uses tanh(mean)."""
        with torch.no_grad():
            stack = torch.as_tensor(depth_stack, dtype=self.dtype).unsqueeze(0)
            f = torch.as_tensor(feat, dtype=self.dtype).unsqueeze(0)
            p = torch.as_tensor(proprio, dtype=self.dtype).unsqueeze(0)
            features = self._fuse(stack, f, p)
            mu, log_std = self.actor(features)
            if stochastic:
                noise = torch.randn(mu.shape, generator=self.noise_gen, dtype=self.dtype)
                out = torch.tanh(mu + noise * log_std.exp())
            else:
                out = torch.tanh(mu)
            if not torch.isfinite(out).all():
                raise NonFiniteError("actor produced non-finite action")
            return out.squeeze(0).numpy().astype(np.float64) * self.action_scale

    # ------------------------------------------------------------------
    # losses (shared by the update rule and the gradient checker)

    def critic_loss(self, obs_feats, action, target_q) -> torch.Tensor:
        q1, q2 = self.critic(obs_feats, action)
        return F.mse_loss(q1, target_q) + F.mse_loss(q2, target_q)

    def compute_target_q(self, next_stack, next_feat, next_proprio, reward, not_done):
        with torch.no_grad():
            online_feats = self._fuse(next_stack, next_feat, next_proprio)
            noise = torch.randn(
                (next_stack.shape[0], self.action_dim), generator=self.noise_gen,
                dtype=self.dtype,
            )
            a_next, log_p = self.actor.sample(online_feats, noise)
            key_feats = self._fuse(next_stack, next_feat, next_proprio, key=True)
            tq1, tq2 = self.critic_target(key_feats, a_next)
            v = torch.min(tq1, tq2) - self.alpha.detach() * log_p
            return reward.unsqueeze(-1) + not_done.unsqueeze(-1) * self.cfg.gamma * v

    def actor_and_alpha_loss(self, obs_feats_detached, noise):
        a, log_p = self.actor.sample(obs_feats_detached, noise)
        q1, q2 = self.critic(obs_feats_detached, a)
        actor_loss = (self.alpha.detach() * log_p - torch.min(q1, q2)).mean()
        alpha_loss = (self.alpha * (-log_p - self.target_entropy).detach()).mean()
        return actor_loss, alpha_loss, log_p

    def curl_loss(self, anchor_stack: torch.Tensor, pos_stack: torch.Tensor) -> torch.Tensor:
        q = normalize_latent(self.encoder(anchor_stack))
        with torch.no_grad():
            k = normalize_latent(self.key_encoder(pos_stack))
        return curl_loss_from_latents(self.W, q, k.detach())

    # ------------------------------------------------------------------

    def update(self, batch: dict) -> dict:
        """One joint step: critics (+encoder), actor, temperature, contrastive
        term, then polyak updates of the key encoder and target critics."""
        cfg = self.cfg
        crop = lambda arr: batch_random_crop(arr, self.image_size, self.image_size, self.crop_rng)
        obs_np = crop(batch["obs"])
        next_np = crop(batch["next_obs"])
        pos_np = crop(batch["obs"])

        t = lambda arr: torch.as_tensor(arr, dtype=self.dtype)
        obs, nxt, pos = t(obs_np), t(next_np), t(pos_np)
        feat, proprio = t(batch["feat"]), t(batch["proprio"])
        next_feat, next_proprio = t(batch["next_feat"]), t(batch["next_proprio"])
        action = t(batch["action"])
        reward = t(batch["reward"])
        not_done = t(batch["not_done"])

        self.update_calls += 1
        target_q = self.compute_target_q(nxt, next_feat, next_proprio, reward, not_done)
        obs_feats = self._fuse(obs, feat, proprio)
        critic_loss = self.critic_loss(obs_feats, action, target_q)
        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        if self.update_calls % cfg.actor_update_freq == 0:
            noise = torch.randn((obs.shape[0], self.action_dim), generator=self.noise_gen,
                                dtype=self.dtype)
            obs_feats_d = self._fuse(obs, feat, proprio, detach_encoder=True)
            actor_loss, alpha_loss, _ = self.actor_and_alpha_loss(obs_feats_d, noise)
            self.actor_opt.zero_grad()
            self.critic_opt.zero_grad()  # discard actor-loss gradients routed through Q
            actor_loss.backward()
            self.actor_opt.step()
            self.alpha_opt.zero_grad()
            alpha_loss.backward()
            self.alpha_opt.step()
            self._last_actor_loss = float(actor_loss.detach())
            self._last_alpha_loss = float(alpha_loss.detach())

        curl_loss = self.curl_loss(obs, pos)
        self.curl_opt.zero_grad()
        curl_loss.backward()
        self.curl_opt.step()

        if self.update_calls % cfg.target_update_freq == 0:
            soft_update(self.critic, self.critic_target, cfg.critic_tau)
            soft_update(self.encoder, self.key_encoder, cfg.encoder_tau)

        losses = {
            "critic": float(critic_loss.detach()),
            "actor": self._last_actor_loss,
            "alpha": self._last_alpha_loss,
            "curl": float(curl_loss.detach()),
            "alpha_value": float(self.alpha.detach()),
        }
        if not all(math.isfinite(v) for v in losses.values()):
            raise NonFiniteError(f"non-finite loss: {losses}")
        return losses

    # ------------------------------------------------------------------
    # checkpointing

    def _named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, module in (
            ("encoder", self.encoder), ("key_encoder", self.key_encoder),
            ("actor", self.actor), ("critic", self.critic),
            ("critic_target", self.critic_target),
        ):
            for name, p in module.state_dict().items():
                out[f"{prefix}.{name}"] = p.detach().numpy()
        out["W"] = self.W.detach().numpy()
        out["log_alpha"] = self.log_alpha.detach().numpy().reshape(1)
        return out

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "action_dim": self.action_dim,
            "action_scale": [float(v) for v in self.action_scale],
            "image_size": self.image_size,
            "k_frames": self.k_frames,
            "feat_dim": self.feat_dim,
            "proprio_dim": self.proprio_dim,
            "config": {
                "latent_dim": self.cfg.latent_dim,
                "hidden_dim": self.cfg.hidden_dim,
                "num_filters": self.cfg.num_filters,
                "num_conv_layers": self.cfg.num_conv_layers,
                "log_std_min": self.cfg.log_std_min,
                "log_std_max": self.cfg.log_std_max,
            },
        }
        save_tensors(path, self._named_tensors(), meta)

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None, seed: int = 0) -> "SearchAgent":
        tensors, meta = load_tensors(path)
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')}")
        cfg = cfg or TrainConfig()
        for k, v in meta["config"].items():
            setattr(cfg, k, v)
        agent = cls(
            action_dim=meta["action_dim"],
            action_scale=np.asarray(meta["action_scale"]),
            cfg=cfg,
            image_size=meta["image_size"],
            k_frames=meta["k_frames"],
            feat_dim=meta["feat_dim"],
            proprio_dim=meta["proprio_dim"],
            seed=seed,
        )
        for prefix, module in (
            ("encoder", agent.encoder), ("key_encoder", agent.key_encoder),
            ("actor", agent.actor), ("critic", agent.critic),
            ("critic_target", agent.critic_target),
        ):
            state = {
                name[len(prefix) + 1 :]: torch.as_tensor(arr)
                for name, arr in tensors.items()
                if name.startswith(prefix + ".")
            }
            module.load_state_dict(state)
        agent.W.data = torch.as_tensor(tensors["W"])
        agent.log_alpha.data = torch.as_tensor(tensors["log_alpha"][0])
        return agent
