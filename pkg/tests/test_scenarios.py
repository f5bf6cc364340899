import json
import math
import os
import unittest
from dataclasses import replace
from tempfile import TemporaryDirectory

import numpy as np
import pandas as pd

from usaav.analysis.metrics import gauge_frame
from usaav.core.dynamics import ParticleSystem, SimConfig
from usaav.core.kernels import KernelFamily, KernelSpec
from usaav.errors import ConfigError
from usaav.experiment.persistence import AGGREGATE_FILE, TRAJECTORY_FILE
from usaav.experiment.scenarios import (
    MAXIMIZER_KINDS,
    Cell,
    cell_dir,
    classify,
    exp1_initial_system,
    exp2_initial_system,
    extend_to_grid,
    nested_system,
    replicate,
    run_dobrushin,
    run_exp1,
    run_exp2,
    run_maximizer,
    run_metastab,
    snapshot_grid,
    stream_key,
    uniform_cloud,
    w1_path,
)
from usaav.experiment.settings import default_config


def _ring(n, height=0.0):
    phi = 2 * np.pi * np.arange(n) / n
    rho = math.sqrt(1.0 - height**2)
    X = np.column_stack(
        [rho * np.cos(phi), rho * np.sin(phi), np.full(n, height)]
    )
    return ParticleSystem.from_array(X)


class TestStreams(unittest.TestCase):
    def test_stream_key(self):
        self.assertEqual(stream_key(3, 4), (3, 4))
        self.assertEqual(stream_key("exp1", 8), stream_key("exp1", 8))
        self.assertNotEqual(stream_key("exp1"), stream_key("exp2"))

    def test_clouds_are_nested(self):
        small = uniform_cloud(7, 3, 4, "cloud")
        large = uniform_cloud(7, 6, 4, "cloud")
        np.testing.assert_array_equal(small, large[:3])
        np.testing.assert_allclose(np.linalg.norm(large, axis=1), 1.0)


class TestInitialSystems(unittest.TestCase):
    """
    Test suite for the initial data of each experiment.
    """

    def setUp(self):
        self.cfg = replace(default_config(), n=(8,), seeds=1)

    def test_exp1_models_share_gauge_cloud(self):
        base = exp1_initial_system(self.cfg, "baseline", 8, 0)
        for model in ("rope", "prompt"):
            sys = exp1_initial_system(self.cfg, model, 8, 0)
            k = self.cfg.kernel.spec(model, 1.0)
            np.testing.assert_allclose(
                gauge_frame(sys, k), base.states, atol=1e-12
            )

    def test_exp1_labels(self):
        rope = exp1_initial_system(self.cfg, "rope", 8, 0)
        self.assertEqual([lab.s for lab in rope.labels[:5]], [0.0] * 4 + [0.5])
        prompt = exp1_initial_system(self.cfg, "prompt", 8, 0)
        self.assertEqual(
            [lab.index for lab in prompt.labels], [1] * 4 + [2] * 4
        )
        with self.assertRaises(ConfigError):
            exp1_initial_system(self.cfg, "toeplitz", 8, 0)
        with self.assertRaises(ConfigError):
            exp1_initial_system(self.cfg, "rope", 6, 0)

    def test_exp2_states_shared_across_scenarios(self):
        cfg = replace(default_config("exp2"), n=(12,))
        rope = exp2_initial_system(cfg, "rope", 12)
        prompt = exp2_initial_system(cfg, "prompt", 12)
        np.testing.assert_array_equal(rope.states, prompt.states)
        self.assertEqual(
            [lab.index for lab in prompt.labels], [1] * 4 + [2] * 4 + [3] * 4
        )

    def test_nested_samples(self):
        cfg = default_config("dobrushin")
        small = nested_system(cfg, 4, 1)
        large = nested_system(cfg, 8, 1)
        np.testing.assert_array_equal(small.states, large.states[:4])
        self.assertEqual(small.labels, large.labels[:4])
        self.assertTrue(all(0.0 < lab.s <= 1.0 for lab in large.labels))


class TestGrid(unittest.TestCase):
    def test_snapshot_grid_ends_at_final_time(self):
        cfg = replace(
            default_config(),
            sim=SimConfig(dt=0.1, t_final=1.0, snapshot_every=0.3),
        )
        np.testing.assert_allclose(
            snapshot_grid(cfg), [0.0, 0.3, 0.6, 0.9, 1.0]
        )

    def test_extend_to_grid_carries_last_row(self):
        df = pd.DataFrame({"time": [0.0, 0.5], "g_x": [1.0, 0.2]})
        out = extend_to_grid(df, np.array([0.0, 0.5, 1.0, 1.5]))
        np.testing.assert_array_equal(out["g_x"], [1.0, 0.2, 0.2, 0.2])


class TestClassify(unittest.TestCase):
    def setUp(self):
        self.cfg = default_config("exp2")
        self.k = KernelSpec(KernelFamily.BASELINE)

    def test_dirac(self):
        sys = ParticleSystem.from_array(np.tile([0.0, 0.0, 1.0], (10, 1)))
        report = classify(sys, self.k, self.cfg, "baseline")
        self.assertEqual(report.shape, "dirac")
        self.assertEqual(report.clusters, 1)
        self.assertAlmostEqual(report.energy, report.ceiling)

    def test_two_clusters(self):
        X = np.vstack(
            [np.tile([1.0, 0.0, 0.0], (5, 1)), np.tile([-1.0, 0, 0], (5, 1))]
        )
        report = classify(ParticleSystem.from_array(X), self.k, self.cfg)
        self.assertEqual(report.shape, "multi-cluster")
        self.assertEqual(report.clusters, 2)

    def test_great_circle(self):
        report = classify(_ring(256), self.k, self.cfg)
        self.assertEqual(report.shape, "circle-like")
        self.assertEqual(report.notes, ["great circle"])
        self.assertAlmostEqual(report.circle_radius, 1.0)

    def test_latitude_circle(self):
        report = classify(_ring(256, height=0.8), self.k, self.cfg)
        self.assertEqual(report.shape, "circle-like")
        self.assertEqual(report.notes, ["latitude circle"])
        self.assertAlmostEqual(report.circle_radius, 0.6)


class TestDobrushinHelpers(unittest.TestCase):
    def test_replicate(self):
        sys = nested_system(default_config("dobrushin"), 3, 0)
        rep = replicate(sys, 2)
        self.assertEqual(rep.n, 6)
        np.testing.assert_array_equal(rep.states[1], sys.states[0])

    def test_w1_path_of_identical_runs(self):
        sys = nested_system(default_config("dobrushin"), 4, 0)
        half = sys.subset([0, 1])
        doubled = replicate(half, 2)
        w1 = w1_path(
            [half.states], [doubled.states], half, doubled, periodic=False
        )
        np.testing.assert_allclose(w1, [0.0], atol=1e-12)


class TestRunners(unittest.TestCase):
    """
    Test suite for the experiment drivers on tiny configurations.
    """

    def setUp(self):
        self.tmpdir = TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)
        self.sim = SimConfig(dt=0.05, t_final=0.5, snapshot_every=0.25)

    def test_exp1_resumes(self):
        cfg = replace(
            default_config(), models=("baseline", "rope"), n=(8,), seeds=2,
            sim=self.sim, output_dir=self.tmpdir.name,
        )
        summary = run_exp1(cfg)
        self.assertEqual((summary["cells"], summary["ran"]), (4, 4))
        table = pd.read_csv(summary["aggregate"])
        self.assertEqual(set(table["model"]), {"baseline", "rope"})
        self.assertTrue((table["seeds"] == 2).all())
        self.assertEqual(len(summary["final"]), 2)

        self.assertEqual(run_exp1(cfg)["ran"], 0)

        cell = Cell("exp1", "rope", 8, 1)
        path = os.path.join(cell_dir(summary["root"], cell), TRAJECTORY_FILE)
        with open(path, "w") as f:
            f.write("time,energy\n0.0,1.0\n")
        self.assertEqual(run_exp1(cfg)["ran"], 1)
        self.assertTrue(
            os.path.exists(os.path.join(summary["root"], AGGREGATE_FILE))
        )
        self.assertTrue(
            os.path.exists(os.path.join(summary["root"], "manifest.json"))
        )

    def test_exp1_reruns_cells_after_parameter_change(self):
        cfg = replace(
            default_config(), models=("rope",), n=(8,), seeds=1,
            sim=self.sim, output_dir=self.tmpdir.name,
        )
        cell = Cell("exp1", "rope", 8, 0)
        summary = run_exp1(cfg)
        path = os.path.join(cell_dir(summary["root"], cell), TRAJECTORY_FILE)
        before = pd.read_csv(path)

        hotter = replace(cfg, beta=4.0)
        self.assertEqual(run_exp1(hotter)["ran"], 1)
        after = pd.read_csv(path)
        self.assertNotEqual(before["energy"][0], after["energy"][0])
        with open(os.path.join(summary["root"], "manifest.json")) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["config_hash"], hotter.config_hash)

        more_seeds = replace(hotter, seeds=2)
        self.assertEqual(run_exp1(more_seeds)["ran"], 1)
        self.assertEqual(run_exp1(replace(more_seeds, workers=2))["ran"], 0)

    def test_manifest_lists_only_current_cells(self):
        cfg = replace(
            default_config(), models=("baseline",), n=(8,), seeds=2,
            sim=self.sim, output_dir=self.tmpdir.name,
        )
        run_exp1(cfg)
        summary = run_exp1(replace(cfg, seeds=1))
        with open(os.path.join(summary["root"], "manifest.json")) as f:
            files = json.load(f)["files"]
        self.assertIn(AGGREGATE_FILE, files)
        kept = Cell("exp1", "baseline", 8, 0).name
        self.assertIn(f"runs/{kept}/cell.json", files)
        self.assertFalse(any("seed001" in name for name in files))

    def test_exp1_runs_are_reproducible(self):
        cfg = replace(
            default_config(), models=("rope",), n=(8,), seeds=1,
            sim=self.sim, output_dir=self.tmpdir.name,
        )
        other = replace(cfg, output_dir=os.path.join(self.tmpdir.name, "b"))
        run_exp1(cfg)
        run_exp1(other)
        cell = Cell("exp1", "rope", 8, 0)
        frames = []
        for c in (cfg, other):
            root = os.path.join(c.output_dir, "exp1")
            path = os.path.join(cell_dir(root, cell), TRAJECTORY_FILE)
            frames.append(pd.read_csv(path))
        pd.testing.assert_frame_equal(frames[0], frames[1])

    def test_exp2_writes_classification(self):
        cfg = replace(
            default_config("exp2"), n=(12,), sim=self.sim,
            output_dir=self.tmpdir.name,
        )
        summary = run_exp2(cfg)
        with open(os.path.join(summary["root"], "classification.json")) as f:
            classification = json.load(f)
        self.assertEqual(set(classification), set(cfg.exp2_scenarios))
        self.assertIsNotNone(classification["prompt"]["target_distance"])
        self.assertIn("m_star=1", classification["toeplitz"]["notes"])
        for scenario in cfg.exp2_scenarios:
            self.assertTrue(
                os.path.exists(
                    os.path.join(
                        summary["root"], "runs", scenario, TRAJECTORY_FILE
                    )
                )
            )

    def test_exp2_unknown_scenario(self):
        cfg = replace(
            default_config("exp2"), n=(12,), sim=self.sim,
            exp2_scenarios=("vision",), output_dir=self.tmpdir.name,
        )
        with self.assertRaises(ConfigError):
            run_exp2(cfg)

    def test_dobrushin_reference_has_zero_distance(self):
        cfg = replace(
            default_config("dobrushin"), n=(2, 4), n_max=4, seeds=2,
            sim=SimConfig(
                dt=0.05, t_final=0.2, snapshot_every=0.1, early_stop=False
            ),
            output_dir=self.tmpdir.name,
        )
        summary = run_dobrushin(cfg)
        table = pd.DataFrame(summary["table"])
        self.assertEqual(list(table["n"]), [2, 4])
        self.assertEqual(list(table["seeds"]), [2, 2])
        ref = table[table["n"] == 4].iloc[0]
        self.assertEqual(ref["sup_w1_mean"], 0.0)
        self.assertGreater(table[table["n"] == 2].iloc[0]["w1_t0_mean"], 0)
        by_seed = pd.read_csv(
            os.path.join(summary["root"], "w1_by_seed.csv")
        )
        self.assertEqual(len(by_seed), 4)

    def test_metastab_report(self):
        cfg = replace(
            default_config("metastab"), clusters=2, cluster_size=3,
            betas=(2.0,),
            sim=SimConfig(
                dt=0.05, t_final=1.0, snapshot_every=0.5, early_stop=False
            ),
            output_dir=self.tmpdir.name,
        )
        summary = run_metastab(cfg)
        with open(os.path.join(summary["root"], "report.json")) as f:
            report = json.load(f)
        self.assertEqual(len(report["betas"]), 1)
        self.assertEqual(report["betas"][0]["T_f"], 0.0)
        self.assertIsNone(summary["scaling"]["slope"])

    def test_maximizers_reach_ceiling(self):
        cfg = replace(
            default_config("single"), n=(16,), output_dir=self.tmpdir.name
        )
        for kind in MAXIMIZER_KINDS:
            with self.subTest(kind=kind):
                report = run_maximizer(cfg, kind, trials=5)
                self.assertLess(abs(report["ceiling_gap"]), 1e-9)
                self.assertLessEqual(report["max_perturbation_delta"], 1e-9)
                self.assertTrue(
                    os.path.exists(
                        os.path.join(
                            self.tmpdir.name, "maximizer", kind, "states.csv"
                        )
                    )
                )

    def test_unknown_maximizer(self):
        cfg = replace(default_config("single"), output_dir=self.tmpdir.name)
        with self.assertRaises(ConfigError):
            run_maximizer(cfg, "hopfield")


class TestLimitingBehaviour(unittest.TestCase):
    """
    Test suite for the qualitative outcomes of each experiment at reduced
    scale.
    """

    def setUp(self):
        self.tmpdir = TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)

    def test_exp1_separates_collapse_from_gauge_collapse(self):
        cfg = replace(
            default_config(), n=(64,), seeds=3, output_dir=self.tmpdir.name
        )
        final = {row["model"]: row for row in run_exp1(cfg)["final"]}
        self.assertLess(final["baseline"]["g_x_mean"], 1e-3)
        for model in ("rope", "prompt"):
            with self.subTest(model=model):
                self.assertLess(final[model]["g_q_mean"], 1e-3)
                self.assertGreater(final[model]["g_x_mean"], 0.1)

    def test_exp2_limiting_shapes(self):
        # 16 positions per orbit, so linkage needs a wider radius than at
        # full size to read each orbit as one curve
        cfg = replace(
            default_config("exp2"), n=(64,), cluster_radius=0.12,
            sim=SimConfig(dt=0.02, t_final=100.0, snapshot_every=1.0),
            output_dir=self.tmpdir.name,
        )
        summary = run_exp2(cfg)
        self.assertEqual(
            summary["shapes"],
            {
                "baseline": "dirac",
                "distance_bias": "dirac",
                "toeplitz": "circle-like",
                "rope": "circle-like",
                "generalized_rope": "circle-like",
                "prompt": "multi-cluster",
            },
        )
        with open(os.path.join(summary["root"], "classification.json")) as f:
            reports = json.load(f)
        toeplitz = reports["toeplitz"]
        self.assertIn("great circle", toeplitz["notes"])
        self.assertAlmostEqual(toeplitz["energy"], 0.25, delta=1e-6)
        self.assertAlmostEqual(toeplitz["ceiling"], 0.25)
        for scenario in ("rope", "generalized_rope"):
            self.assertLess(reports[scenario]["d_cond"], 1e-3)
        self.assertEqual(reports["prompt"]["clusters"], 3)
        self.assertLess(reports["prompt"]["target_distance"], 0.05)

    def test_dobrushin_distance_falls_with_n(self):
        cfg = replace(
            default_config("dobrushin"), n=(4, 32), n_max=64, seeds=4,
            sim=SimConfig(
                dt=0.05, t_final=1.0, snapshot_every=0.25, early_stop=False
            ),
            output_dir=self.tmpdir.name,
        )
        table = pd.DataFrame(run_dobrushin(cfg)["table"]).set_index("n")
        self.assertGreater(
            table.loc[4, "sup_w1_mean"], table.loc[32, "sup_w1_mean"]
        )
        self.assertGreater(
            table.loc[4, "w1_t0_mean"], table.loc[32, "w1_t0_mean"]
        )
        self.assertTrue((table["sup_w1_mean"] >= table["w1_t0_mean"]).all())


if __name__ == "__main__":
    unittest.main()
