"""Central finite-difference verification of every differentiable piece.

Everything runs in float64 on tiny randomized shapes. Losses are closed over
their stop-gradient inputs (targets, keys, noise) so the numeric derivative
checks exactly what backward computes. Cases whose random draw lands within
the step size of a ReLU kink or a twin-Q tie are redrawn; redraws are
deterministic in the seed.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from ..seeding import derive_int
from .agent import SearchAgent, curl_loss_from_latents
from .config import TrainConfig
from .networks import DepthEncoder, gaussian_logprob, tanh_correction, weight_init

EPS = 1e-6
MARGIN = 1e-4  # required distance of preactivations from ReLU kinks


def finite_diff_grads(loss_fn: Callable[[], torch.Tensor], params: list[torch.Tensor]) -> list[np.ndarray]:
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            g = np.zeros(flat.numel())
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + EPS
                f_plus = float(loss_fn())
                flat[i] = orig - EPS
                f_minus = float(loss_fn())
                flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * EPS)
            grads.append(g.reshape(p.shape))
    return grads


def analytic_grads(loss_fn: Callable[[], torch.Tensor], params: list[torch.Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return [
        (p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
        for p in params
    ]


def max_rel_error(loss_fn: Callable[[], torch.Tensor], params: list[torch.Tensor]) -> float:
    """max |analytic - numeric| normalized by the largest gradient magnitude."""
    ana = analytic_grads(loss_fn, params)
    num = finite_diff_grads(loss_fn, params)
    worst = 0.0
    for a, n in zip(ana, num):
        scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)), 1e-8)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst


def _param(shape, gen) -> torch.nn.Parameter:
    return torch.nn.Parameter(torch.randn(shape, generator=gen, dtype=torch.float64))


# ---------------------------------------------------------------------------
# margin probes (keep finite differencing away from kinks)


def _encoder_margin(enc: DepthEncoder, x: torch.Tensor) -> float:
    m = math.inf
    h = x
    with torch.no_grad():
        for conv in enc.convs:
            pre = conv(h)
            m = min(m, float(pre.abs().min()))
            h = F.relu(pre)
    return m


def _trunk_margin(seq: torch.nn.Sequential, inp: torch.Tensor) -> float:
    m = math.inf
    h = inp
    last_pre = None
    with torch.no_grad():
        for mod in seq:
            h = mod(h)
            if isinstance(mod, torch.nn.Linear):
                last_pre = h
            elif isinstance(mod, torch.nn.ReLU) and last_pre is not None:
                m = min(m, float(last_pre.abs().min()))
    return m


# ---------------------------------------------------------------------------
# primitive checks


def check_linear(gen) -> float:
    x = torch.randn(3, 5, generator=gen, dtype=torch.float64)
    v = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    W = _param((5, 4), gen)
    b = _param((4,), gen)
    return max_rel_error(lambda: (torch.tanh(x @ W + b) * v).sum(), [W, b])


def check_conv2d(gen) -> float:
    x = torch.randn(2, 3, 8, 8, generator=gen, dtype=torch.float64)
    w = _param((4, 3, 3, 3), gen)
    b = _param((4,), gen)
    v = torch.randn(2, 4, 3, 3, generator=gen, dtype=torch.float64)
    return max_rel_error(lambda: (F.conv2d(x, w, b, stride=2) * v).sum(), [w, b])


def check_relu(gen) -> float:
    x = torch.randn(30, generator=gen, dtype=torch.float64)
    x = x + torch.sign(x) * 0.05  # keep clear of the kink
    p = torch.nn.Parameter(x)
    v = torch.randn(30, generator=gen, dtype=torch.float64)
    return max_rel_error(lambda: (F.relu(p) * v).sum(), [p])


def check_tanh(gen) -> float:
    p = _param((20,), gen)
    v = torch.randn(20, generator=gen, dtype=torch.float64)
    return max_rel_error(lambda: (torch.tanh(p) * v).sum(), [p])


def check_encoder(gen) -> float:
    for _ in range(50):
        enc = DepthEncoder(2, 16, latent_dim=6, num_filters=4, num_layers=4).double()
        with torch.no_grad():
            for p in enc.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.3)
        x = torch.randn(2, 2, 16, 16, generator=gen, dtype=torch.float64)
        if _encoder_margin(enc, x) > MARGIN:
            break
    v = torch.randn(2, 6, generator=gen, dtype=torch.float64)
    return max_rel_error(lambda: (enc(x) * v).sum(), list(enc.parameters()))


def check_gaussian_squash(gen) -> float:
    mu = _param((3, 4), gen)
    log_std = _param((3, 4), gen)
    noise = torch.randn(3, 4, generator=gen, dtype=torch.float64)

    def loss():
        pre = mu + noise * log_std.exp()
        return (gaussian_logprob(noise, log_std) - tanh_correction(pre)).sum()

    return max_rel_error(loss, [mu, log_std])


def check_bilinear_ce(gen) -> float:
    W = _param((6, 6), gen)
    q = _param((4, 6), gen)
    k = torch.randn(4, 6, generator=gen, dtype=torch.float64)
    return max_rel_error(lambda: curl_loss_from_latents(W, q, k), [W, q])


# ---------------------------------------------------------------------------
# composed losses on a tiny double-precision agent


def _tiny_agent(seed: int) -> SearchAgent:
    cfg = TrainConfig(latent_dim=8, hidden_dim=8, num_filters=4, num_conv_layers=4)
    return SearchAgent(
        action_dim=2, action_scale=np.ones(2), cfg=cfg, image_size=16,
        k_frames=2, feat_dim=4, proprio_dim=2, seed=seed, dtype=torch.float64,
    )


def _tiny_batch(gen, batch=3):
    t = lambda *shape: torch.randn(*shape, generator=gen, dtype=torch.float64)
    return {
        "obs": t(batch, 2, 16, 16).abs().clamp(0, 1),
        "feat": t(batch, 4),
        "proprio": t(batch, 2),
        "action": t(batch, 2).tanh(),
        "reward": t(batch),
        "next_obs": t(batch, 2, 16, 16).abs().clamp(0, 1),
        "next_feat": t(batch, 4),
        "next_proprio": t(batch, 2),
        "not_done": torch.ones(batch, dtype=torch.float64),
    }


def _agent_margins(agent: SearchAgent, obs_feats, action, noise) -> float:
    m = min(
        _trunk_margin(agent.critic.q1.trunk, torch.cat([obs_feats, action], -1)),
        _trunk_margin(agent.critic.q2.trunk, torch.cat([obs_feats, action], -1)),
        _trunk_margin(agent.actor.trunk, obs_feats),
    )
    with torch.no_grad():
        a, _ = agent.actor.sample(obs_feats, noise)
        q1, q2 = agent.critic(obs_feats, a)
        m = min(m, float((q1 - q2).abs().min()))
        m = min(m, _trunk_margin(agent.critic.q1.trunk, torch.cat([obs_feats, a], -1)))
        m = min(m, _trunk_margin(agent.critic.q2.trunk, torch.cat([obs_feats, a], -1)))
    return m


def _composed_case(seed: int):
    """Agent plus batch with all kink margins satisfied (deterministic redraws)."""
    for attempt in range(100):
        gen = torch.Generator().manual_seed(derive_int(seed, "composed", attempt))
        agent = _tiny_agent(derive_int(seed, "agent", attempt) % 2**31)
        batch = _tiny_batch(gen)
        noise = torch.randn(3, 2, generator=gen, dtype=torch.float64)
        obs_feats = agent._fuse(batch["obs"], batch["feat"], batch["proprio"]).detach()
        enc_margin = _encoder_margin(agent.encoder, batch["obs"])
        if enc_margin > MARGIN and _agent_margins(agent, obs_feats, batch["action"], noise) > MARGIN:
            return agent, batch, noise, obs_feats
    raise RuntimeError("could not find a kink-free composed case")


def check_critic_loss(seed: int) -> float:
    agent, batch, _, _ = _composed_case(seed)
    target = agent.compute_target_q(
        batch["next_obs"], batch["next_feat"], batch["next_proprio"],
        batch["reward"], batch["not_done"],
    ).detach()

    def loss():
        feats = agent._fuse(batch["obs"], batch["feat"], batch["proprio"])
        return agent.critic_loss(feats, batch["action"], target)

    params = list(agent.encoder.parameters()) + list(agent.critic.parameters())
    return max_rel_error(loss, params)


def check_actor_loss(seed: int) -> float:
    agent, batch, noise, obs_feats = _composed_case(seed)

    def loss():
        return agent.actor_and_alpha_loss(obs_feats, noise)[0]

    params = list(agent.actor.parameters()) + list(agent.critic.parameters())
    return max_rel_error(loss, params)


def check_curl_loss(seed: int) -> float:
    agent, batch, _, _ = _composed_case(seed)
    pos = batch["next_obs"]  # any second view works as the key source

    def loss():
        return agent.curl_loss(batch["obs"], pos)

    params = list(agent.encoder.parameters()) + [agent.W]
    return max_rel_error(loss, params)


def check_alpha_loss(seed: int) -> float:
    gen = torch.Generator().manual_seed(derive_int(seed, "alpha"))
    log_alpha = _param((), gen)
    log_p = torch.randn(3, 1, generator=gen, dtype=torch.float64)

    def loss():
        return (log_alpha.exp() * (-log_p - (-2.0)).detach()).mean()

    return max_rel_error(loss, [log_alpha])


PRIMITIVES = {
    "linear": check_linear,
    "conv2d": check_conv2d,
    "relu": check_relu,
    "tanh": check_tanh,
    "encoder": check_encoder,
    "gaussian_squash": check_gaussian_squash,
    "bilinear_ce": check_bilinear_ce,
}

COMPOSED = {
    "critic_loss": check_critic_loss,
    "actor_loss": check_actor_loss,
    "curl_loss": check_curl_loss,
    "alpha_loss": check_alpha_loss,
}


def run_gradcheck(
    seed: int = 0, primitive_trials: int = 50, composed_trials: int = 8
) -> dict[str, float]:
    """Worst relative error per check over randomized trials."""
    results: dict[str, float] = {}
    for name, fn in PRIMITIVES.items():
        worst = 0.0
        for k in range(primitive_trials):
            gen = torch.Generator().manual_seed(derive_int(seed, name, k))
            worst = max(worst, fn(gen))
        results[name] = worst
    for name, fn in COMPOSED.items():
        worst = 0.0
        for k in range(composed_trials):
            worst = max(worst, fn(derive_int(seed, name, k) % 2**31))
        results[name] = worst
    return results
