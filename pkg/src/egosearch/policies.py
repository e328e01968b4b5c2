"""Policy adapters: learned-agent wrapper, scripted controllers, and the
random-until-seen baseline. A policy maps an Observation to an action array
(up to 5 components; shorter arrays leave the camera joints untouched)."""

from __future__ import annotations

import math

import numpy as np

from .env import EpisodeConfig, Observation


class AgentPolicy:
    """Wraps a trained agent behind the plain act(obs) interface."""

    def __init__(self, agent):
        self.agent = agent

    def act(self, obs: Observation, stochastic: bool = False) -> np.ndarray:
        return self.agent.act(
            obs.depth_stack, obs.mask_feat.vector(), obs.proprio(), stochastic=stochastic
        )


class GreedyScanPolicy:
    """Stateless scripted searcher: spin and drift while blind, steer toward
    the mask centroid once the target is seen. Pure function of the
    observation, so recorded trajectories replay exactly."""

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg

    def act(self, obs: Observation, stochastic: bool = False) -> np.ndarray:
        b = self.cfg.action_bounds()
        f = obs.mask_feat
        if f.visible:
            dtheta = float(np.clip(-1.2 * f.x_c * b[2], -b[2], b[2]))
            dq_pitch = float(np.clip(0.8 * f.y_c * b[3] - 0.1 * obs.q_pitch, -b[3], b[3]))
            dq_yaw = float(np.clip(-0.4 * f.x_c * b[4] - 0.3 * obs.q_yaw, -b[4], b[4]))
            forward = b[0] * (1.0 - 0.5 * abs(f.x_c))
            return np.array([forward, 0.0, dtheta, dq_pitch, dq_yaw])
        recenter_pitch = float(np.clip(-0.5 * obs.q_pitch - 0.15, -b[3], b[3]))
        recenter_yaw = float(np.clip(-0.5 * obs.q_yaw, -b[4], b[4]))
        return np.array([0.3 * b[0], 0.0, 0.8 * b[2], recenter_pitch, recenter_yaw])


class SpinPolicy:
    """Rotate in place; never translates. Useful for degenerate baselines."""

    def __init__(self, cfg: EpisodeConfig, rate: float = 1.0):
        self.cfg = cfg
        self.rate = rate

    def act(self, obs: Observation, stochastic: bool = False) -> np.ndarray:
        return np.array([0.0, 0.0, self.rate * self.cfg.max_step_yaw, 0.0, 0.0])


class StandStillPolicy:
    def __init__(self, cfg: EpisodeConfig | None = None):
        pass

    def act(self, obs: Observation, stochastic: bool = False) -> np.ndarray:
        return np.zeros(5)


class OraclePolicy:
    """Privileged shortest-path controller for eval sanity checks.

    Reads the true agent state and target from the bound episode driver and
    descends the grid distance field toward the success region, aiming the
    camera at the target. Only usable with RolloutEnv-style evaluation.
    """

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        self.env = None
        self._field = None
        self._scene_id = None

    def bind(self, env) -> None:
        self.env = env
        self._field = None
        self._scene_id = None

    def _distance_field(self):
        from .scene import distance_field

        scene = self.env.scene
        if self._field is None or self._scene_id is not (id(scene)):
            target = scene.target.position
            grid = scene.navgrid()
            ny, nx = grid.free.shape
            xs = grid.origin[0] + (np.arange(nx) + 0.5) * grid.resolution
            ys = grid.origin[1] + (np.arange(ny) + 0.5) * grid.resolution
            gx, gy = np.meshgrid(xs, ys)
            region = ((gx - target[0]) ** 2 + (gy - target[1]) ** 2
                      <= self.cfg.success_radius**2) & grid.free
            # multi-source relaxation outward from the success region
            dist = np.where(region, 0.0, np.inf)
            shifts = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
                      (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)),
                      (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2))]
            while True:
                prev = dist
                dist = dist.copy()
                for di, dj, c in shifts:
                    moved = np.full_like(dist, np.inf)
                    src = dist[max(0, -di): ny - max(0, di), max(0, -dj): nx - max(0, dj)]
                    moved[max(0, di): ny - max(0, -di), max(0, dj): nx - max(0, -dj)] = src + c
                    moved[~grid.free] = np.inf
                    dist = np.minimum(dist, moved)
                if np.array_equal(np.nan_to_num(dist, posinf=-1.0),
                                  np.nan_to_num(prev, posinf=-1.0)):
                    break
            self._field = dist
            self._scene_id = id(scene)
        return self._field

    def act(self, obs: Observation, stochastic: bool = False) -> np.ndarray:
        s = self.env.state
        scene = self.env.scene
        target = scene.target.position
        b = self.cfg.action_bounds()
        grid = scene.navgrid()
        field = self._distance_field()
        i, j = grid.cell_of(s.x, s.y)
        # steepest-descent neighbor of the containing cell
        best, best_d = None, field[i, j] if grid.in_bounds(i, j) else np.inf
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii, jj = i + di, j + dj
                if grid.in_bounds(ii, jj) and field[ii, jj] < best_d:
                    best, best_d = (ii, jj), field[ii, jj]
        dist = math.hypot(target[0] - s.x, target[1] - s.y)
        if best is not None and dist > 0.35:
            wx, wy = grid.center_of(*best)
            dx_w, dy_w = wx - s.x, wy - s.y
            c, sn = math.cos(s.body_yaw), math.sin(s.body_yaw)
            fx = c * dx_w + sn * dy_w
            fy = -sn * dx_w + c * dy_w
            scale = min(1.0, b[0] / max(abs(fx), abs(fy), 1e-9))
            move = np.array([fx, fy]) * scale
        else:
            move = np.zeros(2)
        bearing = math.atan2(target[1] - s.y, target[0] - s.x)
        dtheta = float(np.clip(_wrap(bearing - s.body_yaw), -b[2], b[2]))
        depression = math.atan2(target[2] - s.camera_height, max(dist, 1e-6))
        dq_pitch = float(np.clip(depression - s.q_pitch, -b[3], b[3]))
        cam_bearing = _wrap(bearing - s.body_yaw - s.q_yaw)
        dq_yaw = float(np.clip(cam_bearing, -b[4], b[4]))
        return np.array([move[0], move[1], dtheta, dq_pitch, dq_yaw])


class NoisySearchPolicy:
    """Trained policy once the target is visible, uniform random otherwise."""

    def __init__(self, base, cfg: EpisodeConfig, rng: np.random.Generator,
                 head_enabled: bool = True):
        self.base = base
        self.cfg = cfg
        self.rng = rng
        self.head_enabled = head_enabled

    def act(self, obs: Observation, stochastic: bool = False) -> np.ndarray:
        if obs.mask_feat.visible:
            return self.base.act(obs, stochastic=stochastic)
        b = self.cfg.action_bounds()
        a = self.rng.uniform(-1.0, 1.0, size=5) * b
        if not self.head_enabled:
            a[3:] = 0.0
        return a


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))
