"""Network modules: depth-stack encoder, squashed-Gaussian actor, twin critics."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def weight_init(m: nn.Module) -> None:
    """Orthogonal init for linear layers, delta-orthogonal for convolutions."""
    if isinstance(m, nn.Linear):
        nn.init.orthogonal_(m.weight.data)
        m.bias.data.fill_(0.0)
    elif isinstance(m, nn.Conv2d):
        assert m.weight.size(2) == m.weight.size(3)
        m.weight.data.fill_(0.0)
        m.bias.data.fill_(0.0)
        mid = m.weight.size(2) // 2
        gain = nn.init.calculate_gain("relu")
        nn.init.orthogonal_(m.weight.data[:, :, mid, mid], gain)


class DepthEncoder(nn.Module):
    """Conv stack over the depth history, ending in a linear map to the latent.

    First convolution strides by 2, the rest by 1 (3x3 kernels throughout).
    """

    def __init__(
        self,
        in_frames: int,
        image_size: int,
        latent_dim: int = 128,
        num_filters: int = 32,
        num_layers: int = 4,
    ):
        super().__init__()
        convs = [nn.Conv2d(in_frames, num_filters, 3, stride=2)]
        for _ in range(num_layers - 1):
            convs.append(nn.Conv2d(num_filters, num_filters, 3, stride=1))
        self.convs = nn.ModuleList(convs)
        side = (image_size - 3) // 2 + 1
        for _ in range(num_layers - 1):
            side -= 2
        if side < 1:
            raise ValueError(f"image size {image_size} too small for {num_layers} conv layers")
        self.fc = nn.Linear(num_filters * side * side, latent_dim)
        self.latent_dim = latent_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for conv in self.convs:
            h = F.relu(conv(h))
        return self.fc(h.flatten(1))


def normalize_latent(z: torch.Tensor) -> torch.Tensor:
    """Parameter-free conditioning of encoder outputs before any head:
    per-sample standardization followed by tanh. Keeps downstream value and
    contrastive scales bounded regardless of conv feature magnitudes."""
    return torch.tanh(F.layer_norm(z, z.shape[-1:]))


class Actor(nn.Module):
    """Three hidden layers on the fused features; outputs mean and log-std."""

    def __init__(self, in_dim: int, action_dim: int, hidden_dim: int = 1024,
                 log_std_min: float = -10.0, log_std_max: float = 2.0):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Linear(in_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, 2 * action_dim),
        )
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max
        self.action_dim = action_dim

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu, log_std = self.trunk(features).chunk(2, dim=-1)
        log_std = torch.tanh(log_std)
        log_std = self.log_std_min + 0.5 * (self.log_std_max - self.log_std_min) * (log_std + 1)
        return mu, log_std

    def sample(
        self, features: torch.Tensor, noise: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Squashed-Gaussian sample for the given standard-normal noise and
        its log-probability (tanh correction included)."""
        mu, log_std = self(features)
        std = log_std.exp()
        pre = mu + noise * std
        log_prob = gaussian_logprob(noise, log_std) - tanh_correction(pre)
        return torch.tanh(pre), log_prob


def gaussian_logprob(noise: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Diagonal Gaussian log-density of mu + noise*std, summed over dims."""
    residual = (-0.5 * noise.pow(2) - log_std).sum(-1, keepdim=True)
    return residual - 0.5 * math.log(2 * math.pi) * noise.size(-1)


def tanh_correction(pre: torch.Tensor) -> torch.Tensor:
    """sum log(1 - tanh(u)^2) in the numerically stable softplus form."""
    return (2.0 * (math.log(2.0) - pre - F.softplus(-2.0 * pre))).sum(-1, keepdim=True)


class QFunction(nn.Module):
    def __init__(self, in_dim: int, action_dim: int, hidden_dim: int = 1024):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Linear(in_dim + action_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def forward(self, features: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.trunk(torch.cat([features, action], dim=-1))


class Critic(nn.Module):
    """Two independent Q heads over the same fused features."""

    def __init__(self, in_dim: int, action_dim: int, hidden_dim: int = 1024):
        super().__init__()
        self.q1 = QFunction(in_dim, action_dim, hidden_dim)
        self.q2 = QFunction(in_dim, action_dim, hidden_dim)

    def forward(
        self, features: torch.Tensor, action: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        return self.q1(features, action), self.q2(features, action)


def soft_update(online: nn.Module, target: nn.Module, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    with torch.no_grad():
        for p, tp in zip(online.parameters(), target.parameters()):
            tp.data.mul_(1.0 - tau).add_(tau * p.data)
