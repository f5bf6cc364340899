import io
import json
import os
import unittest
from contextlib import redirect_stderr, redirect_stdout
from unittest.mock import MagicMock, patch

import main as menu
from usaav.errors import ConfigError, NumericalAbort
from usaav.experiment.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUN, cli

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def _quiet(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cli(argv)
    return code, out.getvalue(), err.getvalue()


class TestCli(unittest.TestCase):
    """
    Test suite for the usaav command line.
    """

    def test_usage_errors(self):
        self.assertEqual(_quiet(["exp1", "--beta", "hot"])[0], EXIT_CONFIG)
        self.assertEqual(_quiet(["transform"])[0], EXIT_CONFIG)
        self.assertEqual(_quiet(["maximizer"])[0], EXIT_CONFIG)

    def test_version(self):
        self.assertEqual(_quiet(["--version"])[0], EXIT_OK)

    def test_validate_config(self):
        path = os.path.join(CONFIG_DIR, "exp2.json")
        code, out, _ = _quiet(["validate-config", "--config", path])
        self.assertEqual(code, EXIT_OK)
        summary = json.loads(out)
        self.assertEqual(summary["scenario"], "exp2")
        self.assertEqual(len(summary["config_hash"]), 64)

    def test_bad_config_files(self):
        code, _, err = _quiet(
            ["validate-config", "--config", "missing.json"]
        )
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("does not exist", err)
        path = os.path.join(CONFIG_DIR, "exp1.json")
        self.assertEqual(
            _quiet(["exp2", "--config", path])[0], EXIT_CONFIG
        )

    def test_flags_reach_runner(self):
        runner = MagicMock(return_value={"root": "out"})
        with patch.dict("usaav.experiment.cli.RUNNERS", {"exp1": runner}):
            code, out, _ = _quiet(
                ["exp1", "--n", "8", "16", "--seeds", "2", "--beta", "2.5",
                 "--model", "rope", "--out", "elsewhere"]
            )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(out), {"root": "out"})
        cfg = runner.call_args.args[0]
        self.assertEqual(cfg.n, (8, 16))
        self.assertEqual(cfg.seeds, 2)
        self.assertEqual(cfg.beta, 2.5)
        self.assertEqual(cfg.models, ("rope",))
        self.assertEqual(cfg.output_dir, "elsewhere")

    def test_invalid_override_is_config_error(self):
        runner = MagicMock()
        with patch.dict("usaav.experiment.cli.RUNNERS", {"exp1": runner}):
            code = _quiet(["exp1", "--n", "6"])[0]
        self.assertEqual(code, EXIT_CONFIG)
        runner.assert_not_called()

    def test_run_failures(self):
        abort = MagicMock(side_effect=NumericalAbort("Error: nan", step=3))
        with patch.dict("usaav.experiment.cli.RUNNERS", {"dobrushin": abort}):
            code, _, err = _quiet(["dobrushin"])
        self.assertEqual(code, EXIT_RUN)
        self.assertIn("nan", err)
        bad = MagicMock(side_effect=ConfigError("Error: bad scenario"))
        with patch.dict("usaav.experiment.cli.RUNNERS", {"exp2": bad}):
            self.assertEqual(_quiet(["exp2"])[0], EXIT_CONFIG)

    def test_maximizer_command(self):
        with patch(
            "usaav.experiment.cli.run_maximizer",
            return_value={"kind": "rope"},
        ) as mock_run:
            code = _quiet(["maximizer", "--kind", "rope", "--trials", "7"])[0]
        self.assertEqual(code, EXIT_OK)
        cfg, kind = mock_run.call_args.args
        self.assertEqual(kind, "rope")
        self.assertEqual(mock_run.call_args.kwargs["trials"], 7)
        self.assertEqual(cfg.scenario, "single")


class TestMenu(unittest.TestCase):
    @patch("main.cli", return_value=0)
    @patch("builtins.input", return_value="2")
    def test_menu_choice(self, mock_input, mock_cli):
        with patch("sys.argv", ["main.py"]), redirect_stdout(io.StringIO()):
            self.assertEqual(menu.main(), 0)
        mock_cli.assert_called_once_with(
            ["exp2", "--config", "configs/exp2.json"]
        )

    @patch("builtins.input", return_value="9")
    def test_menu_invalid_choice(self, mock_input):
        with patch("sys.argv", ["main.py"]), redirect_stdout(io.StringIO()):
            self.assertEqual(menu.main(), 2)

    @patch("main.cli", return_value=0)
    def test_arguments_bypass_menu(self, mock_cli):
        with patch("sys.argv", ["main.py", "exp1", "--n", "8"]):
            menu.main()
        mock_cli.assert_called_once_with(["exp1", "--n", "8"])


if __name__ == "__main__":
    unittest.main()
