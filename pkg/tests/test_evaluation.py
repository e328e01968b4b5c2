import numpy as np
import pytest

from egosearch.env import EpisodeConfig, success_check
from egosearch.evaluation import (
    EvalReport,
    compare_baselines,
    evaluate_policy,
    format_height_table,
    height_sweep,
    load_scenarios,
    make_scenarios,
    save_report,
    save_scenarios,
    scenarios_to_dict,
    spl,
)
from egosearch.policies import GreedyScanPolicy, OraclePolicy, StandStillPolicy
from egosearch.replan import episode_start
from egosearch.scene import SceneParams, TargetMode

CFG = EpisodeConfig(render_w=41, render_h=41, crop_w=33, crop_h=33)
EMPTYISH = SceneParams(width=8.0, depth=8.0, furniture_range=(0, 0), cabinet_range=(0, 0),
                       target_radius=0.25)
FURNISHED = SceneParams(width=8.0, depth=8.0, furniture_range=(3, 5), cabinet_range=(1, 1),
                        target_radius=0.25)


class TestSpl:
    def test_single_perfect_success(self):
        assert spl([(True, 4.0, 4.0)]) == 1.0

    def test_single_failure(self):
        assert spl([(False, 4.0, 9.0)]) == 0.0

    def test_mixed_hand_case(self):
        # success with p = 2*ell plus one failure -> (0.5 + 0) / 2
        assert spl([(True, 3.0, 6.0), (False, 2.0, 1.0)]) == pytest.approx(0.25)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            spl([])

    def test_invalid_lengths_raise(self):
        with pytest.raises(ValueError):
            spl([(True, 0.0, 1.0)])
        with pytest.raises(ValueError):
            spl([(True, 1.0, -0.5)])

    def test_matches_brute_force_on_random_lists(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(1, 30))
            results = [
                (bool(rng.integers(0, 2)), float(rng.uniform(0.1, 20)),
                 float(rng.uniform(0.0, 30)))
                for _ in range(n)
            ]
            # independent reimplementation
            acc = 0.0
            for s, ell, p in results:
                if s:
                    acc += ell / (p if p > ell else ell)
            assert spl(results) == pytest.approx(acc / n, abs=1e-12)

    def test_shorter_than_shortest_is_capped(self):
        assert spl([(True, 5.0, 1.0)]) == 1.0  # max(p, ell) guards the ratio


class TestScenarios:
    def test_regenerable(self):
        a = make_scenarios(10, seed=4, scene_params=FURNISHED, n_scenes=3)
        b = make_scenarios(10, seed=4, scene_params=FURNISHED, n_scenes=3)
        assert scenarios_to_dict(a) == scenarios_to_dict(b)

    def test_round_trip(self, tmp_path):
        s = make_scenarios(6, seed=5, scene_params=FURNISHED, n_scenes=2)
        p = tmp_path / "scenarios.json"
        save_scenarios(s, p)
        loaded = load_scenarios(p)
        assert scenarios_to_dict(loaded) == scenarios_to_dict(s)

    def test_modes_respected(self):
        s = make_scenarios(20, seed=6, scene_params=FURNISHED,
                           mode=TargetMode.EXCLUDE_CABINETS, n_scenes=2)
        from egosearch.scene import target_in_cabinet

        for sc in s.scenarios:
            scene = s.scene_for(sc)
            assert not target_in_cabinet(scene)


class TestEvaluatePolicy:
    def test_oracle_in_empty_rooms(self):
        scenarios = make_scenarios(15, seed=7, scene_params=EMPTYISH, n_scenes=2)
        report = evaluate_policy(OraclePolicy(CFG), scenarios, height=1.65, cfg=CFG)
        assert report.success_rate == 1.0
        assert report.spl > 0.8  # near-straight paths, grid quantization aside

    def test_stand_still_success_is_initial_visibility(self):
        scenarios = make_scenarios(25, seed=8, scene_params=FURNISHED, n_scenes=3)
        report = evaluate_policy(StandStillPolicy(), scenarios, height=1.65, cfg=CFG)
        expected = 0
        for sc in scenarios.scenarios:
            scene = scenarios.scene_for(sc)
            s, _, _ = episode_start(scene, CFG, np.random.default_rng(0),
                                    pose=sc.agent_pose, height=1.65)
            expected += int(success_check(scene, s, CFG))
        assert report.success_rate == pytest.approx(expected / len(scenarios))

    def test_spl_bounded_by_success(self):
        scenarios = make_scenarios(10, seed=9, scene_params=FURNISHED, n_scenes=2)
        report = evaluate_policy(GreedyScanPolicy(CFG), scenarios, height=1.65, cfg=CFG)
        assert 0.0 <= report.spl <= report.success_rate <= 1.0

    def test_deterministic_reruns(self):
        scenarios = make_scenarios(6, seed=10, scene_params=FURNISHED, n_scenes=2)
        a = evaluate_policy(GreedyScanPolicy(CFG), scenarios, height=1.05, cfg=CFG)
        b = evaluate_policy(GreedyScanPolicy(CFG), scenarios, height=1.05, cfg=CFG)
        assert a.rows == b.rows

    def test_shortest_at_least_euclidean(self):
        import math

        scenarios = make_scenarios(10, seed=11, scene_params=FURNISHED, n_scenes=2)
        report = evaluate_policy(StandStillPolicy(), scenarios, height=1.65, cfg=CFG)
        for row, sc in zip(report.rows, scenarios.scenarios):
            euclid = math.hypot(
                sc.agent_pose[0] - sc.target_position[0],
                sc.agent_pose[1] - sc.target_position[1],
            )
            # shortest reaches the 0.5 m region boundary, quantized to the grid
            assert row["shortest"] >= euclid - CFG.success_radius - 3 * 0.1


class TestHeightSweep:
    def test_table_shape_and_format(self):
        table = height_sweep(
            StandStillPolicy(), seed=12, scene_params=FURNISHED, cfg=CFG,
            count=4, n_scenes=2,
        )
        assert len(table) == 6
        text = format_height_table(table)
        assert "Excluding cabinets" in text and "Everywhere" in text
        assert len(text.strip().split("\n")) == 4

    def test_report_save(self, tmp_path):
        scenarios = make_scenarios(4, seed=13, scene_params=EMPTYISH, n_scenes=1)
        report = evaluate_policy(StandStillPolicy(), scenarios, height=1.65, cfg=CFG)
        p = tmp_path / "report.tsv"
        save_report(report, p)
        text = p.read_text()
        assert text.startswith("scenario\t")
        assert str(len(scenarios.scenarios)) not in ("",)  # file exists with rows
        assert len(text.strip().split("\n")) == len(scenarios.scenarios) + 2


class TestCompareBaselines:
    def test_structural_attempt_ordering_and_rows(self):
        scenarios = make_scenarios(4, seed=14, scene_params=FURNISHED, n_scenes=2)
        reports = compare_baselines(
            GreedyScanPolicy(CFG), scenarios, CFG, m_values=(2, 10),
            horizon=12, one_step_horizons=(3,),
            mock_params={"lag": 0.8, "bob_amplitude": 0.03},
        )
        assert set(reports) == {"ours_M2", "ours_M10", "one_step_h3", "noisy_search"}
        # smaller M replans more often on matched scenarios
        assert reports["ours_M2"].mean_attempts >= reports["ours_M10"].mean_attempts
        for r in reports.values():
            assert len(r.rows) == len(scenarios.scenarios)
            assert 0.0 <= r.spl <= r.success_rate <= 1.0
