"""Ring replay buffer over single pre-crop frames.

Transitions are stored factorized: one record per environment step holding
the newest frame, and one action-less marker record per episode end holding
the final observation. Depth stacks are rebuilt at sample time by walking
back within the episode (padding with the oldest reachable frame), which
keeps memory at one frame per step instead of K.
"""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    def __init__(
        self,
        capacity: int,
        frame_shape: tuple[int, int],
        feat_dim: int,
        proprio_dim: int,
        action_dim: int,
        k_frames: int,
    ):
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.capacity = capacity
        self.k_frames = k_frames
        h, w = frame_shape
        self.frames = np.zeros((capacity, h, w), dtype=np.float32)
        self.feats = np.zeros((capacity, feat_dim), dtype=np.float32)
        self.proprios = np.zeros((capacity, proprio_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.done_bootstrap = np.zeros(capacity, dtype=bool)
        self.ep_start = np.zeros(capacity, dtype=bool)
        self.has_action = np.zeros(capacity, dtype=bool)
        self.idx = 0
        self.full = False
        self._next_is_start = True

    def __len__(self) -> int:
        return self.capacity if self.full else self.idx

    def _write(self, frame, feat, proprio, action, reward, done_boot, ep_start, has_action):
        i = self.idx
        self.frames[i] = frame
        self.feats[i] = feat
        self.proprios[i] = proprio
        if action is not None:
            self.actions[i] = action
        self.rewards[i] = reward
        self.done_bootstrap[i] = done_boot
        self.ep_start[i] = ep_start
        self.has_action[i] = has_action
        self.idx = (i + 1) % self.capacity
        if self.idx == 0:
            self.full = True

    def add(self, frame, feat, proprio, action, reward, done_bootstrap) -> None:
        """One step: the observation the action was taken from, plus outcome."""
        self._write(frame, feat, proprio, action, reward, done_bootstrap,
                    self._next_is_start, has_action=True)
        self._next_is_start = False

    def finish_episode(self, frame, feat, proprio) -> None:
        """Terminal marker holding the final observation of the episode."""
        self._write(frame, feat, proprio, None, 0.0, False, False, has_action=False)
        self._next_is_start = True

    def _oldest(self) -> int:
        return self.idx if self.full else 0

    def _stack_indices(self, i: int) -> list[int]:
        oldest = self._oldest()
        chain = [i]
        cur = i
        for _ in range(self.k_frames - 1):
            if self.ep_start[cur] or cur == oldest:
                chain.append(cur)  # pad by repeating the oldest reachable frame
            else:
                cur = (cur - 1) % self.capacity
                chain.append(cur)
        chain.reverse()
        return chain

    def stack_at(self, i: int) -> np.ndarray:
        return self.frames[self._stack_indices(i)]

    def valid_indices(self) -> np.ndarray:
        n = len(self)
        stored = np.arange(self.capacity) if self.full else np.arange(self.idx)
        newest = (self.idx - 1) % self.capacity
        mask = self.has_action[stored] & (stored != newest)
        return stored[mask] if n else np.array([], dtype=int)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        """Uniform batch without replacement; stacks are pre-crop."""
        valid = self.valid_indices()
        if valid.size < batch_size:
            raise ValueError(f"buffer holds {valid.size} transitions, need {batch_size}")
        idx = rng.choice(valid, size=batch_size, replace=False)
        nxt = (idx + 1) % self.capacity
        obs = np.stack([self.stack_at(i) for i in idx])
        next_obs = np.stack([self.stack_at(i) for i in nxt])
        return {
            "obs": obs,
            "feat": self.feats[idx],
            "proprio": self.proprios[idx],
            "action": self.actions[idx],
            "reward": self.rewards[idx],
            "next_obs": next_obs,
            "next_feat": self.feats[nxt],
            "next_proprio": self.proprios[nxt],
            "not_done": 1.0 - self.done_bootstrap[idx].astype(np.float32),
        }
