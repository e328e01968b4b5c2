import json

import numpy as np
import pytest

from egosearch.cli import ConfigError, load_run_config, main, save_run_config
from egosearch.learner import TrainConfig
from egosearch.learner.agent import SearchAgent
from egosearch.presets import get_preset


def write_config(path, **sections):
    payload = {"format": "egosearch-config/1"}
    payload.update(sections)
    path.write_text(json.dumps(payload))
    return str(path)


class TestConfig:
    def test_round_trip(self, tmp_path):
        preset = get_preset("toy")
        preset.train.total_steps = 123
        p = tmp_path / "config.json"
        save_run_config(preset, p)
        loaded = load_run_config(get_preset("toy"), str(p))
        assert loaded.train.total_steps == 123
        assert loaded.scene == preset.scene
        assert loaded.episode == preset.episode

    def test_unknown_key_rejected(self, tmp_path):
        p = write_config(tmp_path / "bad.json", train={"not_a_knob": 1})
        with pytest.raises(ConfigError):
            load_run_config(get_preset("toy"), p)

    def test_unknown_section_rejected(self, tmp_path):
        p = write_config(tmp_path / "bad.json", extra={})
        with pytest.raises(ConfigError):
            load_run_config(get_preset("toy"), p)

    def test_bad_format_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "other/9"}')
        with pytest.raises(ConfigError):
            load_run_config(get_preset("toy"), str(p))


class TestGenScene:
    def test_identical_files_for_same_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-scene", "--seed", "1", "--out", str(a)]) == 0
        assert main(["gen-scene", "--seed", "1", "--out", str(b)]) == 0
        assert (a / "scene_1.json").read_bytes() == (b / "scene_1.json").read_bytes()

    def test_scene_is_loadable(self, tmp_path):
        from egosearch.scene import load_scene

        assert main(["gen-scene", "--seed", "3", "--out", str(tmp_path)]) == 0
        scene = load_scene(tmp_path / "scene_3.json")
        assert len(scene.walls) == 4


class TestEvalErrors:
    def test_missing_checkpoint_file(self, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--out", str(tmp_path)])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_missing_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval"])
        assert exc.value.code == 2


class TestTrainSmoke:
    def test_tiny_train_writes_artifacts(self, tmp_path):
        cfg = write_config(
            tmp_path / "cfg.json",
            train={
                "total_steps": 60, "warmup_steps": 40, "eval_every": 60,
                "eval_episodes": 2, "batch_size": 8, "hidden_dim": 32,
                "latent_dim": 16, "num_filters": 8, "replay_capacity": 500,
            },
            episode={"t_max": 20, "render_w": 24, "render_h": 24,
                     "crop_w": 20, "crop_h": 20},
        )
        rc = main([
            "train", "--seed", "0", "--out", str(tmp_path / "run"),
            "--config", cfg, "--deterministic",
        ])
        assert rc == 0
        assert (tmp_path / "run" / "agent_head_s0.ckpt").exists()
        assert (tmp_path / "run" / "curve_head_s0.tsv").exists()
        curve = (tmp_path / "run" / "curve_head_s0.tsv").read_text().strip().split("\n")
        assert curve[0].startswith("step\t")
        assert len(curve) >= 2
        steps = [int(line.split("\t")[0]) for line in curve[1:]]
        assert steps == sorted(steps)
        for line in curve[1:]:
            assert 0.0 <= float(line.split("\t")[1]) <= 1.0

    def test_train_determinism_small(self, tmp_path):
        cfg = write_config(
            tmp_path / "cfg.json",
            train={
                "total_steps": 50, "warmup_steps": 30, "eval_every": 50,
                "eval_episodes": 1, "batch_size": 8, "hidden_dim": 32,
                "latent_dim": 16, "num_filters": 8, "replay_capacity": 500,
            },
            episode={"t_max": 20, "render_w": 24, "render_h": 24,
                     "crop_w": 20, "crop_h": 20},
        )
        outs = []
        for tag in ("r1", "r2"):
            out = tmp_path / tag
            rc = main(["train", "--seed", "7", "--out", str(out),
                       "--config", cfg, "--deterministic"])
            assert rc == 0
            outs.append(out)
        a = (outs[0] / "agent_head_s7.ckpt").read_bytes()
        b = (outs[1] / "agent_head_s7.ckpt").read_bytes()
        assert a == b
        assert (outs[0] / "curve_head_s7.tsv").read_bytes() == (
            outs[1] / "curve_head_s7.tsv"
        ).read_bytes()


def make_tiny_checkpoint(tmp_path):
    """Untrained toy-shaped agent, enough to exercise eval/replan plumbing."""
    cfg = TrainConfig(hidden_dim=32, latent_dim=16, num_filters=8)
    agent = SearchAgent(
        action_dim=5, action_scale=np.array([0.25, 0.25, 0.52, 0.52, 0.52]),
        cfg=cfg, image_size=32, k_frames=5, feat_dim=30, seed=0,
    )
    path = tmp_path / "tiny.ckpt"
    agent.save(path)
    return str(path)


class TestEvalReplanReplay:
    def test_pipeline(self, tmp_path):
        ckpt = make_tiny_checkpoint(tmp_path)
        out = tmp_path / "ev"
        rc = main([
            "eval", "--checkpoint", ckpt, "--out", str(out), "--seed", "1",
            "--count", "2", "--heights", "1.65", "--pool", "1",
        ])
        assert rc == 0
        assert (out / "height_table.txt").exists()

        out2 = tmp_path / "rp"
        rc = main([
            "replan", "--checkpoint", ckpt, "--out", str(out2), "--seed", "1",
            "--count", "2", "--t", "6", "--m", "3", "--pool", "1",
        ])
        assert rc == 0
        trace = out2 / "replan_traj.tsv"
        assert trace.exists()

        out3 = tmp_path / "frames"
        rc = main([
            "replay", "--scene", str(out2 / "replan_scene.json"),
            "--trace", str(trace), "--out", str(out3),
        ])
        assert rc == 0
        assert any((out3 / "frames").glob("depth_*.pgm"))

    def test_replan_determinism(self, tmp_path):
        ckpt = make_tiny_checkpoint(tmp_path)
        files = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            rc = main([
                "replan", "--checkpoint", ckpt, "--out", str(out), "--seed", "3",
                "--count", "2", "--t", "5", "--m", "2", "--pool", "1",
                "--deterministic",
            ])
            assert rc == 0
            files.append((out / "replan_ours.tsv").read_bytes())
        assert files[0] == files[1]
