import contextlib
import csv
import io
import json
import pathlib
import tempfile
import unittest

import numpy as np

import sagfree.banded as bd
import sagfree.cli as cli
import sagfree.formats as fm

SMALL = ["--scene", "horizontal", "--n", "12", "--length", "0.05"]


def read_summary(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = pathlib.Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def run_cli(self, *argv):
        out = io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(
            io.StringIO()
        ):
            code = cli.main([*argv, "--out-dir", str(self.dir), "-q"])
        return code, out.getvalue()


class TestParseArgs(CliTestCase):
    def test_defaults(self):
        args = cli.parse_args(["optimize", "--scene", "vertical"])
        self.assertEqual(args.mu, 1.0)
        self.assertEqual(args.n, 30)
        self.assertEqual(args.preconditioner, "asc")
        self.assertIs(args.func, cli.cmd_optimize)
        args = cli.parse_args(["bench-bcqp"])
        self.assertEqual(args.mu, 0.4)
        self.assertEqual(args.scene, "horizontal")

    def test_config_file(self):
        path = self.dir / "run.json"
        path.write_text(json.dumps({"n": 12, "lbar-min": 1e-3, "mu": 0.3}))
        args = cli.parse_args(
            ["optimize", "--scene", "wavy", "--config", str(path), "--n", "8"]
        )
        self.assertEqual(args.n, 8)
        self.assertEqual(args.lbar_min, 1e-3)
        self.assertEqual(args.mu, 0.3)

    def test_alm_options(self):
        args = cli.parse_args(
            ["optimize", "--scene", "vertical", "--mu", "0.2", "--blocked"]
        )
        options = cli.alm_options(args)
        self.assertEqual(options.mu, 0.2)
        self.assertEqual(options.eta, 0.05)
        self.assertFalse(options.interleaved)
        self.assertEqual(options.bcqp.max_iter, 100)

    def test_unknown_config_key(self):
        path = self.dir / "run.json"
        path.write_text(json.dumps({"frames": 3}))
        code, _ = self.run_cli(
            "optimize", "--scene", "vertical", "--config", str(path)
        )
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_invalid_config_file(self):
        path = self.dir / "run.json"
        path.write_text("[1, 2]")
        code, _ = self.run_cli("check-grad", "--config", str(path))
        self.assertEqual(code, cli.EXIT_CONFIG)


class TestOptimizeCommand(CliTestCase):
    def test_writes_results(self):
        code, out = self.run_cli("optimize", *SMALL)
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("converged", out)
        [(rest, report)] = fm.read_params_json(self.dir / "params.json")
        self.assertEqual(rest.N, 12)
        self.assertEqual(report["termination"], "converged")
        rows = fm.read_convergence_csv(self.dir / "convergence.csv")
        self.assertEqual(len(rows), report["iterations"])
        [summary] = read_summary(self.dir / "summary.tsv")
        self.assertEqual(summary["termination"], "converged")
        self.assertLessEqual(float(summary["reduction"]), 1e-6)

    def test_not_converged(self):
        argv = [
            "optimize",
            "--scene",
            "vertical",
            "--n",
            "12",
            "--c-st",
            "1e3",
            "--lbar-min",
            "1e-2",
            "--rest-shape-only",
            "--k-max",
            "10",
        ]
        code, _ = self.run_cli(*argv)
        self.assertEqual(code, cli.EXIT_NOT_CONVERGED)
        code, _ = self.run_cli(*argv, "--allow-partial")
        self.assertEqual(code, cli.EXIT_OK)
        [(_, report)] = fm.read_params_json(self.dir / "params.json")
        self.assertNotEqual(report["termination"], "converged")

    def test_several_strands(self):
        code, _ = self.run_cli(
            "optimize",
            *SMALL,
            "--count",
            "3",
            "--workers",
            "2",
            "--k-max",
            "2",
            "--allow-partial",
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(len(fm.read_params_json(self.dir / "params.json")), 3)
        self.assertTrue((self.dir / "convergence_0002.csv").exists())
        rows = read_summary(self.dir / "summary.tsv")
        self.assertEqual([r["strand"] for r in rows], ["0", "1", "2"])

    def test_missing_input(self):
        code, _ = self.run_cli(
            "optimize", "--input", str(self.dir / "missing.json")
        )
        self.assertEqual(code, cli.EXIT_IO)

    def test_no_strand_source(self):
        code, _ = self.run_cli("optimize")
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_unknown_scene(self):
        code, _ = self.run_cli("optimize", "--scene", "spiral")
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_invalid_option(self):
        code, _ = self.run_cli("optimize", *SMALL, "--mu", "-1")
        self.assertEqual(code, cli.EXIT_CONFIG)


class TestSimulateCommand(CliTestCase):
    def test_optimized_strand(self):
        code, _ = self.run_cli("optimize", *SMALL)
        self.assertEqual(code, cli.EXIT_OK)
        params = str(self.dir / "params.json")
        code, _ = self.run_cli(
            "simulate", *SMALL, "--params", params, "--frames", "20"
        )
        self.assertEqual(code, cli.EXIT_OK)
        [summary] = read_summary(self.dir / "summary.tsv")
        self.assertEqual(summary["frames"], "20")
        self.assertLessEqual(float(summary["drift"]), 1e-3)
        frames = sorted((self.dir / "trajectory").glob("frame_*.csv"))
        self.assertEqual(len(frames), 21)
        kinetic = fm.read_kinetic_csv(self.dir / "kinetic.csv")
        self.assertEqual(len(kinetic), 21)

    def test_naive_strand_sags(self):
        code, _ = self.run_cli(
            "simulate", *SMALL, "--frames", "20", "--format", "obj"
        )
        self.assertEqual(code, cli.EXIT_OK)
        [summary] = read_summary(self.dir / "summary.tsv")
        self.assertGreater(float(summary["drift"]), 1e-2)
        frames = fm.read_trajectory_obj(self.dir / "trajectory.obj")
        self.assertEqual(frames.shape, (21, 12, 3))

    def test_oscillation(self):
        code, _ = self.run_cli(
            "simulate",
            "--scene",
            "vertical",
            "--n",
            "8",
            "--length",
            "0.1",
            "--frames",
            "10",
            "--oscillate",
            "0.01",
            "--period",
            "0.1",
        )
        self.assertEqual(code, cli.EXIT_OK)
        kinetic = fm.read_kinetic_csv(self.dir / "kinetic.csv")
        self.assertGreater(max(row[2] for row in kinetic), 0.0)

    def test_bad_params(self):
        path = self.dir / "bad.json"
        path.write_text(json.dumps({"rest_len": [1.0, 1.0, 1.0]}))
        code, _ = self.run_cli("simulate", *SMALL, "--params", str(path))
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_params_for_other_strand(self):
        code, _ = self.run_cli("optimize", *SMALL, "--k-max", "1")
        self.assertEqual(code, cli.EXIT_NOT_CONVERGED)
        params = str(self.dir / "params.json")
        code, _ = self.run_cli(
            "simulate",
            "--scene",
            "horizontal",
            "--n",
            "10",
            "--params",
            params,
        )
        self.assertEqual(code, cli.EXIT_CONFIG)


class TestCheckGradCommand(CliTestCase):
    def test_passes(self):
        code, out = self.run_cli(
            "check-grad", "--samples", "2", "--output", "grad.json"
        )
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("alm_gradient_lbar", out)
        report = json.loads((self.dir / "grad.json").read_text())
        self.assertTrue(report["passed"])
        self.assertEqual(report["samples"], 2)

    def test_flip_fails(self):
        code, out = self.run_cli(
            "check-grad", "--samples", "2", "--flip", "twist"
        )
        self.assertEqual(code, cli.EXIT_NOT_CONVERGED)
        self.assertIn("FAILED", out)

    def test_deterministic(self):
        for name in ("a.json", "b.json"):
            code, _ = self.run_cli(
                "check-grad", "--samples", "2", "--seed", "5", "--output", name
            )
            self.assertEqual(code, cli.EXIT_OK)
        first, second = (self.dir / name for name in ("a.json", "b.json"))
        self.assertEqual(first.read_text(), second.read_text())


class TestBenchCommand(CliTestCase):
    def test_scene(self):
        code, _ = self.run_cli(
            "bench-bcqp",
            *SMALL,
            "--preconditioners",
            "diagonal,asc,none",
            "--pgs-sweeps",
            "50",
            "--dump",
            "system.mtx",
        )
        self.assertEqual(code, cli.EXIT_OK)
        rows = read_summary(self.dir / "summary.tsv")
        self.assertEqual(
            [r["solver"] for r in rows],
            ["mprgp-diagonal", "mprgp-asc", "mprgp-none", "pgs"],
        )
        for name in ("diagonal", "asc", "none"):
            history = fm.read_residual_csv(self.dir / f"residual_{name}.csv")
            self.assertEqual(history[0][0], 0)
        A = fm.read_matrix_market(self.dir / "system.mtx")
        self.assertEqual(A.n, 7 * 10)

    def test_matrix_file(self):
        rng = np.random.default_rng(1)
        B = rng.standard_normal((9, 9))
        dense = B @ B.T + 9 * np.eye(9)
        bd.write_matrix_market(
            self.dir / "A.mtx", bd.BandedSym.from_dense(dense)
        )
        np.savetxt(self.dir / "b.txt", rng.standard_normal(9))
        code, _ = self.run_cli(
            "bench-bcqp",
            "--matrix",
            str(self.dir / "A.mtx"),
            "--rhs",
            str(self.dir / "b.txt"),
            "--preconditioners",
            "asc",
        )
        self.assertEqual(code, cli.EXIT_OK)
        [row] = read_summary(self.dir / "summary.tsv")
        self.assertEqual(row["iterations"], "1")
        self.assertEqual(row["termination"], "converged")

    def test_unknown_preconditioner(self):
        code, _ = self.run_cli(
            "bench-bcqp", *SMALL, "--preconditioners", "ilu"
        )
        self.assertEqual(code, cli.EXIT_CONFIG)


if __name__ == "__main__":
    unittest.main()
