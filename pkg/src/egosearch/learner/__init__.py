from .agent import SearchAgent, contrastive_logits, curl_loss_from_latents
from .buffer import ReplayBuffer
from .config import TrainConfig
from .train import TrainResult, train

__all__ = [
    "ReplayBuffer",
    "SearchAgent",
    "TrainConfig",
    "TrainResult",
    "contrastive_logits",
    "curl_loss_from_latents",
    "train",
]
