import hashlib
import json
import os
import unittest
from tempfile import TemporaryDirectory

import numpy as np
import pandas as pd

from usaav import __version__
from usaav.core.dynamics import ParticleSystem, SimConfig, simulate
from usaav.core.kernels import KernelFamily, KernelSpec, Position
from usaav.experiment.persistence import (
    CELL_FILE,
    MANIFEST_FILE,
    TRAJECTORY_COLUMNS,
    aggregate,
    list_outputs,
    read_cell_hash,
    read_states,
    read_trajectory,
    states_frame,
    write_cell_marker,
    write_csv,
    write_final_states,
    write_json,
    write_manifest,
    write_trajectory,
)


def _system():
    X = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    labels = tuple(Position(s) for s in (0.0, 1 / 3, 2 / 3))
    return ParticleSystem(X, labels)


def _frame(times, g_x):
    df = pd.DataFrame({"time": times, "g_x": g_x})
    for col in ("g_q", "d_cond", "delta_e"):
        df[col] = np.nan
    return df


class TestTrajectoryFiles(unittest.TestCase):
    """
    Test suite for trajectory and final-state CSV files.
    """

    def setUp(self):
        self.tmpdir = TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)

    def test_written_trajectory_reads_back(self):
        cfg = SimConfig(dt=0.1, t_final=0.5, snapshot_every=0.1)
        record = simulate(_system(), KernelSpec(KernelFamily.ROPE), cfg)
        path = os.path.join(self.tmpdir.name, "cell", "trajectory.csv")
        write_trajectory(record, path)
        df = read_trajectory(path)
        self.assertEqual(tuple(df.columns), TRAJECTORY_COLUMNS)
        np.testing.assert_array_equal(df["energy"], record.energy)
        self.assertTrue(df["w1"].isna().all())

    def test_missing_or_corrupt_trajectory(self):
        path = os.path.join(self.tmpdir.name, "trajectory.csv")
        self.assertIsNone(read_trajectory(path))
        write_csv(pd.DataFrame({"time": [0.0], "energy": [1.0]}), path)
        self.assertIsNone(read_trajectory(path))
        with open(path, "w") as f:
            f.write("")
        self.assertIsNone(read_trajectory(path))

    def test_final_states(self):
        sys = _system()
        df = states_frame(sys)
        self.assertEqual(
            list(df.columns),
            ["particle", "label_kind", "label_value", "x_0", "x_1", "x_2"],
        )
        self.assertEqual(set(df["label_kind"]), {"position"})
        path = write_final_states(
            sys, os.path.join(self.tmpdir.name, "final_states.csv")
        )
        np.testing.assert_array_equal(read_states(path), sys.states)


class TestAggregate(unittest.TestCase):
    def test_mean_and_standard_error(self):
        frames = {
            ("rope", 8, 0): _frame([0.0, 1.0], [1.0, 0.5]),
            ("rope", 8, 1): _frame([0.0, 1.0], [0.8, 0.1]),
            ("rope", 16, 0): _frame([0.0, 1.0], [0.9, 0.3]),
        }
        out = aggregate(frames, ["model", "n"])
        self.assertEqual(
            list(out.columns)[:5],
            ["model", "n", "time", "g_x_mean", "g_x_sem"],
        )
        self.assertEqual(list(out.columns)[-1], "seeds")
        row = out[(out["n"] == 8) & (out["time"] == 1.0)].iloc[0]
        self.assertAlmostEqual(row["g_x_mean"], 0.3)
        self.assertAlmostEqual(row["g_x_sem"], 0.2)
        self.assertEqual(row["seeds"], 2)
        single = out[(out["n"] == 16) & (out["time"] == 0.0)].iloc[0]
        self.assertTrue(np.isnan(single["g_x_sem"]))


class TestManifest(unittest.TestCase):
    def test_manifest_hashes_outputs(self):
        with TemporaryDirectory() as tmpdir:
            write_json(
                {"beta": np.float64(2.0)}, os.path.join(tmpdir, "a.json")
            )
            write_csv(
                pd.DataFrame({"x": [1, 2]}),
                os.path.join(tmpdir, "runs", "b.csv"),
            )
            path = write_manifest(tmpdir, "abc")
            with open(path) as f:
                manifest = json.load(f)
            self.assertEqual(manifest["config_hash"], "abc")
            self.assertEqual(manifest["code_version"], __version__)
            self.assertEqual(
                sorted(manifest["files"]), ["a.json", "runs/b.csv"]
            )
            with open(os.path.join(tmpdir, "a.json"), "rb") as f:
                expected = hashlib.sha256(f.read()).hexdigest()
            self.assertEqual(manifest["files"]["a.json"], expected)
            self.assertEqual(
                list_outputs(tmpdir), ["a.json", "runs/b.csv"]
            )
            self.assertTrue(
                os.path.exists(os.path.join(tmpdir, MANIFEST_FILE))
            )

    def test_unserializable_value(self):
        with TemporaryDirectory() as tmpdir:
            with self.assertRaises(TypeError):
                write_json({"x": object()}, os.path.join(tmpdir, "x.json"))

    def test_cell_marker(self):
        with TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "runs", "cell")
            self.assertIsNone(read_cell_hash(path))
            write_cell_marker(path, "abc", model="rope", n=8)
            self.assertEqual(read_cell_hash(path), "abc")
            with open(os.path.join(path, CELL_FILE)) as f:
                self.assertEqual(json.load(f)["model"], "rope")
            with open(os.path.join(path, CELL_FILE), "w") as f:
                f.write("[1, 2")
            self.assertIsNone(read_cell_hash(path))


if __name__ == "__main__":
    unittest.main()
