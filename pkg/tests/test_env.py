import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import boxless_scene, empty_room
from egosearch.env import (
    AbstractState,
    Action,
    EpisodeConfig,
    RolloutEnv,
    Termination,
    is_terminal,
    observe,
    read_episode_trace,
    reset,
    reward,
    step,
    write_episode_trace,
)
from egosearch.geometry import Box
from egosearch.scene import Scene, TargetObject
from egosearch.sensor import target_visible

CFG = EpisodeConfig(render_w=41, render_h=41, crop_w=33, crop_h=33)


def state_at(x=0.0, y=0.0, yaw=0.0, **kw) -> AbstractState:
    return AbstractState(x=x, y=y, body_yaw=yaw, **kw)


def looking_at_target_scene(dist=0.3, z=1.65):
    return boxless_scene(target=(dist, 0.0, z))


class TestReward:
    def test_near_visible_case(self):
        scene = looking_at_target_scene(dist=0.3)
        s = state_at(t=1)
        assert target_visible(scene, s.camera_pose(), CFG.render_w, CFG.render_h)
        total, terms = reward(scene, s, terminal_success=False, cfg=CFG)
        assert total == pytest.approx(9.6, abs=1e-12)
        assert terms == pytest.approx([10.0, -0.3, -0.1, 0.0, 0.0], abs=1e-12)

    def test_far_invisible_many_collisions(self):
        scene = boxless_scene(target=(-30.0, 0.0, 1.0))  # behind, out of range
        s = state_at(n_col=50, t=10)
        total, terms = reward(scene, s, terminal_success=False, cfg=CFG)
        assert total == pytest.approx(-0.4, abs=1e-12)
        assert terms[3] == pytest.approx(-3.0, abs=1e-12)

    def test_terminal_success_case(self):
        scene = looking_at_target_scene(dist=0.2)
        s = state_at(t=5)
        total, _ = reward(scene, s, terminal_success=True, cfg=CFG)
        assert total == pytest.approx(19.7, abs=1e-12)

    @pytest.mark.parametrize(
        "n_col,expected", [(0, 0.0), (29, -2.9), (30, -3.0), (31, -3.0), (1000, -3.0)]
    )
    def test_collision_clip(self, n_col, expected):
        scene = boxless_scene(target=(-30.0, 0.0, 1.0))
        s = state_at(n_col=n_col)
        _, terms = reward(scene, s, terminal_success=False, cfg=CFG)
        assert terms[3] == pytest.approx(expected, abs=1e-12)

    def test_decomposition_and_ranges(self):
        rng = np.random.default_rng(0)
        scene = empty_room(target=(2.0, 1.0, 0.2))
        for _ in range(50):
            s = state_at(
                x=rng.uniform(-4, 4), y=rng.uniform(-4, 4), yaw=rng.uniform(0, 6.28),
                n_col=int(rng.integers(0, 60)), t=int(rng.integers(0, 100)),
            )
            terminal = bool(rng.integers(0, 2))
            total, terms = reward(scene, s, terminal, CFG)
            assert total == pytest.approx(float(np.dot(CFG.weights, terms)), abs=1e-12)
            assert terms[0] in (0.0, CFG.success_value)
            assert terms[1] <= 0.0
            assert terms[2] == CFG.live_penalty
            assert -3.0 <= terms[3] <= 0.0
            assert terms[4] in (0.0, CFG.terminal_bonus)

    def test_invisible_means_zero_distance_term(self):
        scene = boxless_scene(target=(-2.0, 0.0, 1.65))  # behind the camera
        s = state_at()
        _, terms = reward(scene, s, False, CFG)
        assert terms[1] == 0.0


class TestStep:
    def test_zero_action_only_time_advances(self):
        scene = empty_room(target=(4.0, 4.0, 0.2))
        s = state_at(x=1.0, y=-1.0, yaw=0.5)
        rng = np.random.default_rng(0)
        s2 = step(scene, s, Action(), rng, CFG)
        assert (s2.x, s2.y, s2.body_yaw) == (s.x, s.y, s.body_yaw)
        assert (s2.q_pitch, s2.q_yaw) == (0.0, 0.0)
        assert s2.n_col == 0 and s2.t == 1

    def test_four_quarter_turns_return(self):
        cfg = replace(CFG, max_step_yaw=math.pi / 2)
        scene = empty_room(target=(4.0, 4.0, 0.2))
        s = state_at(yaw=0.3)
        rng = np.random.default_rng(0)
        for _ in range(4):
            s = step(scene, s, Action(dtheta=math.pi / 2), rng, cfg)
        assert math.cos(s.body_yaw) == pytest.approx(math.cos(0.3), abs=1e-12)
        assert math.sin(s.body_yaw) == pytest.approx(math.sin(0.3), abs=1e-12)

    def test_forward_into_wall_stops_at_contact(self):
        wall = Box(center=(2.0 + 0.5, 0.0, 1.0), half_extents=(0.5, 10.0, 1.0))
        scene = Scene(
            bounds=(-10.0, -10.0, 10.0, 10.0), walls=[wall], furniture=[], cabinets=[],
            target=TargetObject(position=(-5.0, -5.0, 0.2), radius=0.2),
        )
        # wall face at x=2; agent radius 0.3 -> contact when x = 1.7; gap 0.05
        s = state_at(x=1.65, y=0.0, yaw=0.0)
        rng = np.random.default_rng(0)
        s2 = step(scene, s, Action(dx=0.25), rng, CFG)
        assert s2.n_col == 1
        expected = 1.7 - CFG.contact_epsilon
        assert s2.x == pytest.approx(expected, abs=2e-3)
        assert s2.x < 1.7

    def test_slide_along_wall(self):
        wall = Box(center=(2.5, 0.0, 1.0), half_extents=(0.5, 10.0, 1.0))
        scene = Scene(
            bounds=(-10.0, -10.0, 10.0, 10.0), walls=[wall], furniture=[], cabinets=[],
            target=TargetObject(position=(-5.0, -5.0, 0.2), radius=0.2),
        )
        s = state_at(x=1.69, y=0.0, yaw=0.0)
        rng = np.random.default_rng(0)
        # diagonal push into the wall: forward blocked, lateral survives
        s2 = step(scene, s, Action(dx=0.2, dy=0.15), rng, CFG)
        assert s2.n_col == 1
        assert s2.y > 0.05  # slid sideways
        assert s2.x < 1.7

    def test_camera_joint_limits(self):
        scene = empty_room(target=(4.0, 4.0, 0.2))
        s = state_at()
        rng = np.random.default_rng(0)
        for _ in range(10):
            s = step(scene, s, Action(dq_pitch=0.5, dq_yaw=0.5), rng, CFG)
        assert s.q_pitch == pytest.approx(CFG.cam_pitch_limit)
        assert s.q_yaw == pytest.approx(CFG.cam_yaw_limit)

    def test_determinism_with_noise(self):
        cfg = replace(CFG, randomize_height=True)
        scene = empty_room(target=(4.0, 4.0, 0.2))
        actions = [Action(dx=0.1, dtheta=0.2), Action(dy=-0.1), Action(dq_pitch=0.3)]
        results = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            s = state_at()
            for a in actions:
                s = step(scene, s, a, rng, cfg)
            results.append(s)
        assert results[0] == results[1]

    def test_height_noise_bounds(self):
        cfg = replace(CFG, randomize_height=True)
        scene = empty_room(target=(4.0, 4.0, 0.2))
        rng = np.random.default_rng(3)
        s = state_at(base_height=1.4)
        for _ in range(30):
            s = step(scene, s, Action(), rng, cfg)
            assert 1.3 <= s.camera_height <= 1.5
            assert s.base_height == 1.4

    def test_constant_height_without_randomization(self):
        scene = empty_room(target=(4.0, 4.0, 0.2))
        rng = np.random.default_rng(3)
        s = state_at(base_height=1.2)
        heights = set()
        for _ in range(10):
            s = step(scene, s, Action(dx=0.05), rng, CFG)
            heights.add(s.camera_height)
        assert heights == {1.2}


class TestObserve:
    def test_stack_queue_semantics(self):
        scene = empty_room(target=(3.0, 0.0, 1.0))
        rng = np.random.default_rng(0)
        s = state_at(x=-2.0)
        frames = []
        stack = None
        for k in range(CFG.k_frames):
            s = step(scene, s, Action(dx=0.1), rng, CFG)
            obs, stack = observe(scene, s, stack if k else None, CFG, "center")
            frames.append(stack[-1])
        for k in range(CFG.k_frames):
            assert np.array_equal(stack[k], frames[k])

    def test_reset_padding(self):
        scene = empty_room(target=(3.0, 0.0, 1.0))
        s = state_at()
        obs, stack = observe(scene, s, None, CFG, "center")
        assert obs.depth_stack.shape == (CFG.k_frames, CFG.crop_h, CFG.crop_w)
        for k in range(1, CFG.k_frames):
            assert np.array_equal(stack[k], stack[0])

    def test_head_yaw_sees_off_axis_target(self):
        # target at bearing +45 deg while the body faces +x
        scene = boxless_scene(target=(1.0, 1.0, 1.65))
        s = state_at(q_yaw=math.pi / 4)
        obs, _ = observe(scene, s, None, CFG, "center")
        assert obs.mask_feat.visible
        # without the head turn the target sits exactly on the frustum edge;
        # turned away it is gone
        s_away = state_at(q_yaw=-math.pi / 4)
        obs2, _ = observe(scene, s_away, None, CFG, "center")
        assert not obs2.mask_feat.visible

    def test_identical_state_identical_observation(self):
        scene = empty_room(target=(2.0, 1.0, 0.5))
        s = state_at(x=0.5, yaw=0.3, q_pitch=-0.2)
        a, _ = observe(scene, s, None, CFG, "center")
        b, _ = observe(scene, s, None, CFG, "center")
        assert np.array_equal(a.depth_stack, b.depth_stack)
        assert a.mask_feat.vector() == pytest.approx(b.mask_feat.vector())


class TestTermination:
    def test_success_when_near_and_seeing(self):
        scene = looking_at_target_scene(dist=0.4)
        s = state_at(t=10)
        assert is_terminal(scene, s, CFG) is Termination.SUCCESS

    def test_near_but_occluded_continues(self):
        wall = Box(center=(0.25, 0.0, 1.0), half_extents=(0.05, 2.0, 1.0))
        scene = Scene(
            bounds=(-10.0, -10.0, 10.0, 10.0), walls=[wall], furniture=[], cabinets=[],
            target=TargetObject(position=(0.4, 0.0, 1.65), radius=0.1),
        )
        s = state_at(t=10)
        assert is_terminal(scene, s, CFG) is None

    def test_timeout(self):
        scene = empty_room(target=(4.0, 4.0, 0.2))
        s = state_at(t=100)
        assert is_terminal(scene, s, CFG) is Termination.TIMEOUT

    def test_success_precedence_at_cap(self):
        scene = looking_at_target_scene(dist=0.4)
        s = state_at(t=100)
        assert is_terminal(scene, s, CFG) is Termination.SUCCESS


class TestReset:
    def test_fixed_height(self):
        scene = empty_room(target=(3.0, 3.0, 0.2))
        cfg = replace(CFG, randomize_height=True)
        rng = np.random.default_rng(0)
        s, _, _ = reset(scene, rng, cfg, fixed_height=1.65)
        assert s.base_height == 1.65
        assert 1.55 <= s.camera_height <= 1.75

    def test_determinism(self):
        scene = empty_room(target=(3.0, 3.0, 0.2))
        a, _, _ = reset(scene, np.random.default_rng(9), CFG)
        b, _, _ = reset(scene, np.random.default_rng(9), CFG)
        assert a == b

    def test_initial_visibility_matches_raycast(self):
        scene = empty_room(target=(2.0, 2.0, 1.0))
        for seed in range(10):
            rng = np.random.default_rng(seed)
            s, obs, _ = reset(scene, rng, CFG)
            assert obs.mask_feat.visible == target_visible(
                scene, s.camera_pose(), CFG.render_w, CFG.render_h
            )
            assert s.q_pitch == 0.0 and s.q_yaw == 0.0 and s.t == 0 and s.n_col == 0


class TestRolloutEnv:
    def make_env(self, seed=0, **cfg_kw):
        cfg = replace(CFG, **cfg_kw)
        scene = empty_room(target=(2.0, 2.0, 0.3), target_radius=0.3)
        return RolloutEnv(lambda rng: scene, cfg, np.random.default_rng(seed))

    def test_episode_caps_at_t_max(self):
        env = self.make_env()
        env.reset()
        rng = np.random.default_rng(1)
        done, steps = False, 0
        prev_ncol = 0
        while not done:
            a = rng.uniform(-1, 1, size=5) * CFG.action_bounds()
            _, _, done, info = env.step(a)
            steps += 1
            assert info["state"].n_col >= prev_ncol
            prev_ncol = info["state"].n_col
            assert steps <= CFG.t_max
        assert steps <= CFG.t_max

    def test_reward_matches_pure_functions(self):
        env = self.make_env()
        env.reset()
        rng = np.random.default_rng(2)
        for _ in range(5):
            a = rng.uniform(-1, 1, size=5) * CFG.action_bounds()
            obs, total, done, info = env.step(a)
            expected_total, expected_terms = reward(
                env.scene, info["state"], info["success"], env.cfg
            )
            assert total == pytest.approx(expected_total, abs=1e-12)
            assert info["terms"] == pytest.approx(expected_terms, abs=1e-12)
            if done:
                env.reset()

    def test_no_head_zeroes_camera(self):
        env = self.make_env()
        env.head_enabled = False
        env.reset()
        for _ in range(5):
            _, _, done, info = env.step(np.array([0.1, 0.0, 0.1, 0.3, 0.3]))
            s = info["state"]
            assert s.q_pitch == 0.0 and s.q_yaw == 0.0
            if done:
                env.reset()


class TestTrace:
    def test_round_trip(self, tmp_path):
        env_scene = empty_room(target=(2.0, 2.0, 0.3))
        env = RolloutEnv(lambda rng: env_scene, CFG, np.random.default_rng(0))
        env.reset()
        records = []
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = Action.from_array(rng.uniform(-0.2, 0.2, size=5))
            _, total, done, info = env.step(a)
            s = info["state"]
            records.append({
                "t": s.t, "x": s.x, "y": s.y, "body_yaw": s.body_yaw,
                "q_pitch": s.q_pitch, "q_yaw": s.q_yaw,
                "base_height": s.base_height, "height_noise": s.height_noise,
                "n_col": s.n_col,
                "dx": a.dx, "dy": a.dy, "dtheta": a.dtheta,
                "dq_pitch": a.dq_pitch, "dq_yaw": a.dq_yaw,
                "r_s": float(info["terms"][0]), "r_d": float(info["terms"][1]),
                "r_live": float(info["terms"][2]), "r_c": float(info["terms"][3]),
                "r_t": float(info["terms"][4]), "reward": total,
                "termination": info["termination"].value if info["termination"] else None,
            })
        path = tmp_path / "trace.tsv"
        write_episode_trace(path, records)
        loaded = read_episode_trace(path)
        assert len(loaded) == len(records)
        for got, want in zip(loaded, records):
            for k, v in want.items():
                if isinstance(v, float):
                    assert got[k] == v  # exact: repr round-trip
                elif k == "termination":
                    assert got[k] == v
                else:
                    assert got[k] == v
