import math

import numpy as np
import pytest
import torch

from egosearch.learner import (
    ReplayBuffer,
    SearchAgent,
    TrainConfig,
    curl_loss_from_latents,
)
from egosearch.learner.agent import NonFiniteError, batch_random_crop
from egosearch.learner.checkpoint import load_tensors, save_tensors
from egosearch.learner.networks import soft_update

TINY = TrainConfig(latent_dim=8, hidden_dim=16, num_filters=4, num_conv_layers=4,
                   batch_size=4, warmup_steps=0)


def tiny_agent(seed=0, action_dim=5, **kw) -> SearchAgent:
    return SearchAgent(
        action_dim=action_dim,
        action_scale=np.array([0.25, 0.25, 0.52, 0.52, 0.52])[:action_dim],
        cfg=TINY, image_size=16, k_frames=2, feat_dim=6, seed=seed, **kw,
    )


def tiny_batch(rng, batch=4):
    return {
        "obs": rng.random((batch, 2, 20, 20), dtype=np.float32),
        "feat": rng.normal(size=(batch, 6)).astype(np.float32),
        "proprio": rng.normal(size=(batch, 2)).astype(np.float32),
        "action": np.tanh(rng.normal(size=(batch, 5))).astype(np.float32),
        "reward": rng.normal(size=batch).astype(np.float32),
        "next_obs": rng.random((batch, 2, 20, 20), dtype=np.float32),
        "next_feat": rng.normal(size=(batch, 6)).astype(np.float32),
        "next_proprio": rng.normal(size=(batch, 2)).astype(np.float32),
        "not_done": np.ones(batch, dtype=np.float32),
    }


class TestCurlLoss:
    def test_orthonormal_closed_form(self):
        W = torch.eye(2, dtype=torch.float64)
        q = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        loss = curl_loss_from_latents(W, q, q.clone())
        expected = -math.log(math.e / (math.e + 1.0))
        assert float(loss) == pytest.approx(expected, abs=1e-9)

    def test_zero_weight_uniform(self):
        for batch in (2, 5, 32):
            W = torch.zeros(7, 7, dtype=torch.float64)
            q = torch.randn(batch, 7, dtype=torch.float64)
            k = torch.randn(batch, 7, dtype=torch.float64)
            loss = curl_loss_from_latents(W, q, k)
            assert float(loss) == pytest.approx(math.log(batch), abs=1e-12)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            curl_loss_from_latents(torch.eye(3), torch.randn(1, 3), torch.randn(1, 3))

    def test_permutation_equivariance(self):
        g = torch.Generator().manual_seed(0)
        W = torch.randn(5, 5, generator=g, dtype=torch.float64)
        q = torch.randn(6, 5, generator=g, dtype=torch.float64)
        k = torch.randn(6, 5, generator=g, dtype=torch.float64)
        perm = torch.randperm(6, generator=g)
        a = curl_loss_from_latents(W, q, k)
        b = curl_loss_from_latents(W, q[perm], k[perm])
        assert float(a) == pytest.approx(float(b), abs=1e-12)


class TestForwardPolicy:
    def test_deterministic_repeatable(self):
        agent = tiny_agent()
        rng = np.random.default_rng(0)
        stack = rng.random((2, 16, 16)).astype(np.float32)
        feat = rng.normal(size=6).astype(np.float32)
        prop = rng.normal(size=2).astype(np.float32)
        a1 = agent.act(stack, feat, prop, stochastic=False)
        a2 = agent.act(stack, feat, prop, stochastic=False)
        assert np.array_equal(a1, a2)

    def test_actions_within_bounds_random_nets(self):
        rng = np.random.default_rng(1)
        bounds = np.array([0.25, 0.25, 0.52, 0.52, 0.52])
        for seed in range(20):
            agent = tiny_agent(seed=seed)
            for _ in range(5):
                a = agent.act(
                    rng.random((2, 16, 16)).astype(np.float32),
                    rng.normal(size=6).astype(np.float32),
                    rng.normal(size=2).astype(np.float32),
                    stochastic=True,
                )
                assert np.all(np.abs(a) <= bounds + 1e-9)

    def test_zero_weights_zero_action(self):
        agent = tiny_agent()
        with torch.no_grad():
            for p in agent.actor.parameters():
                p.zero_()
        a = agent.act(
            np.zeros((2, 16, 16), dtype=np.float32),
            np.zeros(6, dtype=np.float32),
            np.zeros(2, dtype=np.float32),
        )
        assert np.array_equal(a, np.zeros(5))

    def test_nonfinite_raises(self):
        agent = tiny_agent()
        with torch.no_grad():
            agent.actor.trunk[0].weight.fill_(float("nan"))
        with pytest.raises(NonFiniteError):
            agent.act(
                np.zeros((2, 16, 16), dtype=np.float32),
                np.zeros(6, dtype=np.float32),
                np.zeros(2, dtype=np.float32),
            )


class TestSacUpdate:
    def test_polyak_tau_one_copies(self):
        agent = tiny_agent()
        rng = np.random.default_rng(0)
        agent.update(tiny_batch(rng))  # desync online from target
        soft_update(agent.critic, agent.critic_target, tau=1.0)
        for p, tp in zip(agent.critic.parameters(), agent.critic_target.parameters()):
            assert torch.equal(p.data, tp.data)

    def test_polyak_convex_combination(self):
        agent = tiny_agent()
        before = [tp.data.clone() for tp in agent.key_encoder.parameters()]
        online = [p.data.clone() for p in agent.encoder.parameters()]
        tau = 0.05
        soft_update(agent.encoder, agent.key_encoder, tau)
        for b, o, tp in zip(before, online, agent.key_encoder.parameters()):
            assert torch.allclose(tp.data, tau * o + (1 - tau) * b, atol=1e-7)

    def test_gamma_zero_identical_transitions_regress_to_reward(self):
        cfg = TrainConfig(latent_dim=8, hidden_dim=16, num_filters=4,
                          num_conv_layers=4, gamma=0.0)
        agent = SearchAgent(action_dim=5, action_scale=np.ones(5), cfg=cfg,
                            image_size=16, k_frames=2, feat_dim=6, seed=0)
        rng = np.random.default_rng(2)
        batch = tiny_batch(rng)
        batch["obs"] = batch["obs"][..., :16, :16]  # already-cropped views
        batch["next_obs"] = batch["next_obs"][..., :16, :16]
        for key in ("obs", "feat", "proprio", "action", "next_obs", "next_feat",
                    "next_proprio"):
            batch[key] = np.repeat(batch[key][:1], 4, axis=0)
        batch["reward"] = np.full(4, 1.5, dtype=np.float32)
        target = agent.compute_target_q(
            torch.as_tensor(batch["next_obs"]), torch.as_tensor(batch["next_feat"]),
            torch.as_tensor(batch["next_proprio"]), torch.as_tensor(batch["reward"]),
            torch.as_tensor(batch["not_done"]),
        )
        assert torch.allclose(target, torch.full_like(target, 1.5))
        feats = agent._fuse(
            torch.as_tensor(batch["obs"]), torch.as_tensor(batch["feat"]),
            torch.as_tensor(batch["proprio"]),
        )
        loss = agent.critic_loss(feats, torch.as_tensor(batch["action"]), target)
        q1, q2 = agent.critic(feats, torch.as_tensor(batch["action"]))
        expected = ((q1 - 1.5) ** 2).mean() + ((q2 - 1.5) ** 2).mean()
        assert float(loss) == pytest.approx(float(expected), rel=1e-6)

    def test_update_returns_finite_losses_and_temperature_positive(self):
        agent = tiny_agent()
        rng = np.random.default_rng(3)
        for _ in range(5):
            losses = agent.update(tiny_batch(rng))
            assert all(math.isfinite(v) for v in losses.values())
            assert losses["alpha_value"] > 0.0


class TestReplayBuffer:
    def make(self, capacity=10):
        return ReplayBuffer(capacity, frame_shape=(4, 4), feat_dim=3, proprio_dim=2,
                            action_dim=2, k_frames=3)

    def add_steps(self, buf, n, done_at=()):
        for i in range(n):
            frame = np.full((4, 4), float(i), dtype=np.float32)
            buf.add(frame, np.zeros(3), np.zeros(2), np.zeros(2), float(i), False)
            if i in done_at:
                buf.finish_episode(np.full((4, 4), float(i) + 0.5), np.zeros(3), np.zeros(2))

    def test_capacity_never_exceeded(self):
        buf = self.make(capacity=8)
        self.add_steps(buf, 30)
        assert len(buf) == 8

    def test_oldest_evicted(self):
        buf = self.make(capacity=8)
        self.add_steps(buf, 12)
        remaining = {float(f[0, 0]) for f in buf.frames}
        assert remaining == {float(v) for v in range(4, 12)}

    def test_stack_reset_padding(self):
        buf = self.make(capacity=20)
        self.add_steps(buf, 2, done_at=(1,))  # episode of 2 steps + marker
        self.add_steps(buf, 1)
        stack = buf.stack_at(3)  # first record of second episode
        assert np.all(stack[0] == stack[2])  # padded with its own frame

    def test_next_obs_uses_terminal_marker(self):
        buf = self.make(capacity=20)
        self.add_steps(buf, 3, done_at=(2,))
        valid = buf.valid_indices()
        assert 3 not in valid  # marker has no action
        idx = 2
        nxt_stack = buf.stack_at(3)
        assert nxt_stack[-1][0, 0] == pytest.approx(2.5)
        assert idx in valid

    def test_sample_without_replacement(self):
        buf = self.make(capacity=50)
        self.add_steps(buf, 20)
        rng = np.random.default_rng(0)
        batch = buf.sample(10, rng)
        assert batch["obs"].shape == (10, 3, 4, 4)
        rewards = sorted(batch["reward"].tolist())
        assert len(set(rewards)) == 10  # all distinct rewards -> no repeats

    def test_insufficient_raises(self):
        buf = self.make()
        self.add_steps(buf, 2)
        with pytest.raises(ValueError):
            buf.sample(5, np.random.default_rng(0))


class TestBatchRandomCrop:
    def test_shapes_and_content(self):
        rng = np.random.default_rng(0)
        batch = np.arange(2 * 3 * 10 * 10, dtype=np.float32).reshape(2, 3, 10, 10)
        out = batch_random_crop(batch, 8, 8, rng)
        assert out.shape == (2, 3, 8, 8)
        # each output is a contiguous window of its source
        for b in range(2):
            found = False
            for i in range(3):
                for j in range(3):
                    if np.array_equal(out[b], batch[b, :, i : i + 8, j : j + 8]):
                        found = True
            assert found


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        tensors = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array([1.5], dtype=np.float64),
        }
        p = tmp_path / "dump.bin"
        save_tensors(p, tensors, {"version": 1, "note": "x"})
        loaded, meta = load_tensors(p)
        assert meta == {"version": 1, "note": "x"}
        for k in tensors:
            assert np.array_equal(loaded[k], tensors[k])
            assert loaded[k].dtype == tensors[k].dtype

    def test_deterministic_bytes(self, tmp_path):
        tensors = {"w": np.linspace(0, 1, 20).reshape(4, 5)}
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_tensors(p1, tensors, {"v": 1})
        save_tensors(p2, tensors, {"v": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_agent_round_trip(self, tmp_path):
        agent = tiny_agent(seed=7)
        rng = np.random.default_rng(1)
        agent.update(tiny_batch(rng))
        p = tmp_path / "agent.ckpt"
        agent.save(p)
        loaded = SearchAgent.load(p)
        obs = rng.random((2, 16, 16)).astype(np.float32)
        feat = rng.normal(size=6).astype(np.float32)
        prop = rng.normal(size=2).astype(np.float32)
        assert np.array_equal(
            agent.act(obs, feat, prop), loaded.act(obs, feat, prop)
        )

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_tensors(p)
