import contextlib
import io
import json
import os
import tempfile
import unittest
from unittest import mock

from agm_struct import cli
from agm_struct.exceptions import ConvergenceError, SolverError

CONFIG = {
    "metrics": [{"kind": "zero_one", "k": 3}, {"kind": "absolute", "k": 3, "position_weighted": True}],
    "models": [{"name": "AGM", "kind": "agm"}, {"name": "CRF", "kind": "crf"}, {"name": "SSVM", "kind": "ssvm"}],
    "train": {"epochs": 2, "solver": {"method": "lp"}},
    "crf": {"max_iters": 100},
    "ssvm": {"epochs": 5},
    "split": {"train_fraction": 0.6, "n_splits": 2},
}


def run(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = cli.main(["-q"] + list(argv))
    return code, out.getvalue()


class TestCli(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        self.data = self.path("data.txt")
        self.config = self.path("config.json")
        with open(self.config, "w") as f:
            json.dump(CONFIG, f)
        code, _ = run("synth", "--k", "3", "--n-instances", "10", "--min-length", "2", "--max-length", "3",
                      "--seed", "1", "--out", self.data)
        self.assertEqual(code, 0)

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp, name)

    def test_synth_writes_generator(self):
        """
        Test that synth stores the generator next to the dataset and is deterministic.
        """
        self.assertTrue(os.path.exists(self.data + ".generator.json"))
        again = self.path("again.txt")
        run("synth", "--k", "3", "--n-instances", "10", "--min-length", "2", "--max-length", "3",
            "--seed", "1", "--out", again)
        with open(self.data) as a, open(again) as b:
            self.assertEqual(a.read(), b.read())

    def test_train_predict_eval(self):
        """
        Test the train, predict and eval round trip for every model kind.
        """
        for kind in ("agm", "crf", "ssvm"):
            model = self.path(f"{kind}.model")
            code, _ = run("train", "--data", self.data, "--kind", kind, "--config", self.config, "--out", model)
            self.assertEqual(code, 0)
            code, out = run("predict", "--model", model, "--data", self.data)
            self.assertEqual(code, 0)
            self.assertEqual(len(out.splitlines()), 10)
            code, out = run("eval", "--model", model, "--data", self.data)
            self.assertEqual(code, 0)
            metric, value = out.strip().split("\t")
            self.assertEqual(metric, "zero-one, unweighted")
            self.assertTrue(0.0 <= float(value) <= 1.0)

    def test_probabilistic_predict(self):
        """
        Test that the probabilistic decoder prints one distribution per node.
        """
        model = self.path("agm.model")
        run("train", "--data", self.data, "--config", self.config, "--metric", "absolute", "--out", model)
        out_file = self.path("pred.txt")
        code, _ = run("predict", "--model", model, "--data", self.data, "--decoder", "probabilistic",
                      "--out", out_file)
        self.assertEqual(code, 0)
        with open(out_file) as f:
            first = f.readline().strip()
        for node in first.split(" | "):
            self.assertAlmostEqual(sum(float(v) for v in node.split()), 1.0, places=5)

    def test_xval_and_report(self):
        """
        Test that xval writes its report and report rebuilds the same table from the log.
        """
        out_dir = self.path("report")
        code, table = run("xval", "--data", self.data, "--config", self.config, "--seed", "3", "--out", out_dir)
        self.assertEqual(code, 0)
        self.assertIn("AGM", table.splitlines()[0])
        code, rebuilt = run("report", "--log", os.path.join(out_dir, "log.tsv"))
        self.assertEqual(code, 0)
        self.assertEqual(rebuilt, table)

    def test_xval_bayes_column(self):
        """
        Test that passing the generator adds the Bayes risk column.
        """
        config = dict(CONFIG, models=[{"name": "gold", "kind": "oracle"}])
        with open(self.config, "w") as f:
            json.dump(config, f)
        code, table = run("xval", "--data", self.data, "--config", self.config,
                          "--generator", self.data + ".generator.json", "--out", self.path("bayes"))
        self.assertEqual(code, 0)
        self.assertIn("Bayes", table.splitlines()[0])

    def test_config_error(self):
        """
        Test that an invalid config exits with code 2.
        """
        with open(self.config, "w") as f:
            f.write('{"metrics": []}')
        code, _ = run("xval", "--data", self.data, "--config", self.config, "--out", self.path("r"))
        self.assertEqual(code, 2)

    def test_data_errors(self):
        """
        Test that missing or malformed data exits with code 3.
        """
        code, _ = run("train", "--data", self.path("missing.txt"), "--out", self.path("m"))
        self.assertEqual(code, 3)
        bad = self.path("bad.txt")
        with open(bad, "w") as f:
            f.write("AGM 1 k=2 d=0 de=0\ninstance n=1 root=1 edges=-\n3\n")
        code, _ = run("train", "--data", bad, "--out", self.path("m"))
        self.assertEqual(code, 3)
        code, _ = run("eval", "--model", self.path("missing.model"), "--data", self.data)
        self.assertEqual(code, 3)

    def test_convergence_error(self):
        """
        Test that aborted training exits with code 4.
        """
        with mock.patch("agm_struct.cli.fit_model", side_effect=ConvergenceError("too many failures", {"epoch": 1})):
            code, _ = run("train", "--data", self.data, "--out", self.path("m"))
        self.assertEqual(code, 4)

    def test_solver_error(self):
        """
        Test that a failed LP solve exits with code 4 instead of a traceback.
        """
        with mock.patch("agm_struct.cli.fit_model", side_effect=SolverError("inner LP failed: infeasible")):
            code, _ = run("train", "--data", self.data, "--out", self.path("m"))
        self.assertEqual(code, 4)


if __name__ == '__main__':
    unittest.main()
