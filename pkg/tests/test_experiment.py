import os
import tempfile
import unittest

import numpy as np

import agm_struct
from agm_struct.config import (
    CrfConfig,
    ExperimentConfig,
    GeneratorConfig,
    LossSpec,
    ModelSpec,
    SolverConfig,
    SplitSpec,
    TrainConfig,
)
from agm_struct.data import generate_synthetic
from agm_struct.experiment import (
    LogRow,
    build_report,
    cross_validate,
    fit_model,
    make_splits,
    parse_log,
    prediction_loss,
    run_experiment,
    wilcoxon_pvalue,
    write_report,
)
from agm_struct.features import make_instance
from agm_struct.graph import chain
from agm_struct.predictors import Prediction

FAST_TRAIN = TrainConfig(epochs=2, solver=SolverConfig(method="lp"))
FAST_CRF = CrfConfig(max_iters=200)


def small_data(n_instances=12, seed=0):
    return generate_synthetic(GeneratorConfig(k=3, n_instances=n_instances, min_length=2, max_length=3, seed=seed))


class TestSplits(unittest.TestCase):

    def test_disjoint_and_reproducible(self):
        """
        Test that every split partitions the instances and repeats for the same seed.
        """
        split = SplitSpec(train_fraction=0.7, n_splits=4)
        first = make_splits(20, split, seed=5)
        again = make_splits(20, split, seed=5)
        self.assertEqual(len(first), 4)
        for (train, test), (train2, test2) in zip(first, again):
            self.assertEqual(len(np.intersect1d(train, test)), 0)
            self.assertEqual(sorted(np.concatenate([train, test]).tolist()), list(range(20)))
            self.assertEqual(len(train), 14)
            np.testing.assert_array_equal(train, train2)
            np.testing.assert_array_equal(test, test2)

    def test_too_small(self):
        """
        Test that a single instance cannot be split.
        """
        with self.assertRaises(agm_struct.ConfigError):
            make_splits(1, SplitSpec(), seed=0)


class TestScoring(unittest.TestCase):

    def test_label_and_distribution_loss(self):
        """
        Test the loss of labels and the expected loss of distributions.
        """
        inst = make_instance(np.zeros((2, 0)), chain(2), y=(1, 2))
        spec = LossSpec(k=2)
        labels = Prediction(labels=np.array([1, 1]), distributions=None, score=0.0)
        self.assertEqual(prediction_loss(labels, inst, spec), 0.5)
        dist = Prediction(labels=None, distributions=np.array([[0.5, 0.5], [0.0, 1.0]]), score=0.0)
        self.assertAlmostEqual(prediction_loss(dist, inst, spec), 0.25)

    def test_wilcoxon_identical(self):
        """
        Test that identical paired losses are never significant.
        """
        self.assertEqual(wilcoxon_pvalue([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]), 1.0)


class TestExperiment(unittest.TestCase):

    def test_identical_models(self):
        """
        Test that the same model listed twice gives identical columns, both marked.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3)], split=SplitSpec(n_splits=3), crf=FAST_CRF,
                               models=[ModelSpec(name="A", kind="crf"), ModelSpec(name="B", kind="crf")])
        report = run_experiment(cfg, small_data())
        header, row = report.table.splitlines()[:2]
        cells = row.split()
        self.assertEqual(cells[-2], cells[-1])
        self.assertTrue(cells[-1].endswith("*"))

    def test_oracle_column(self):
        """
        Test that the gold-label oracle scores zero on every metric.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3), LossSpec(kind="absolute", k=3, position_weighted=True)],
                               split=SplitSpec(n_splits=2), models=[ModelSpec(name="gold", kind="oracle")])
        report = run_experiment(cfg, small_data())
        self.assertTrue(all(row.loss == 0.0 for row in report.rows))
        self.assertIn("0.0000*", report.table)

    def test_report_from_log(self):
        """
        Test that the table rebuilt from the per-instance log matches the one built in memory.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3)], split=SplitSpec(n_splits=2), train=FAST_TRAIN,
                               models=[ModelSpec(name="AGM", kind="agm"), ModelSpec(name="SSVM", kind="ssvm")])
        report = run_experiment(cfg, small_data())
        rebuilt = build_report(parse_log(report.log_tsv), cfg.alpha)
        self.assertEqual(rebuilt.table, report.table)
        self.assertEqual(rebuilt.summary_tsv, report.summary_tsv)
        with tempfile.TemporaryDirectory() as tmp:
            write_report(report, tmp)
            for name in ("table.txt", "summary.tsv", "log.tsv", "lambdas.tsv"):
                self.assertTrue(os.path.exists(os.path.join(tmp, name)))

    def test_split_means(self):
        """
        Test that the summary equals a weighted recomputation from the rows.
        """
        rows = [LogRow(0, "m", "zero-one, unweighted", 0, 1.0, 0.5), LogRow(0, "m", "zero-one, unweighted", 1, 3.0, 0.1),
                LogRow(1, "m", "zero-one, unweighted", 2, 1.0, 0.0)]
        summary = build_report(rows, 0.05).summary_tsv.splitlines()
        self.assertAlmostEqual(float(summary[1].split("\t")[-1]), (0.5 + 0.3) / 4, places=12)
        self.assertEqual(float(summary[2].split("\t")[-1]), 0.0)

    def test_metric_mismatch(self):
        """
        Test that a metric with the wrong label count is rejected.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=4)])
        with self.assertRaises(agm_struct.ConfigError):
            run_experiment(cfg, small_data())

    def test_deterministic(self):
        """
        Test that the same seed reproduces the report byte for byte.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3)], split=SplitSpec(n_splits=2), train=FAST_TRAIN,
                               models=[ModelSpec(name="AGM", kind="agm")], seed=4)
        data = small_data()
        self.assertEqual(run_experiment(cfg, data).log_tsv, run_experiment(cfg, data).log_tsv)


class TestCrossValidation(unittest.TestCase):

    def test_picks_from_grid(self):
        """
        Test that cross-validation scores every candidate and returns one of them.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3)], cv_folds=2, crf=FAST_CRF)
        result = cross_validate(small_data(8), ModelSpec(name="CRF", kind="crf"), LossSpec(k=3),
                                [0.01, 1.0], cfg, seed=1)
        self.assertEqual(sorted(result.scores), [0.01, 1.0])
        self.assertIn(result.best_lam, (0.01, 1.0))
        self.assertEqual(result.scores[result.best_lam], min(result.scores.values()))

    def test_single_candidate(self):
        """
        Test that an empty grid falls back to the configured lam without fitting.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3)])
        result = cross_validate(small_data(8), ModelSpec(name="SSVM", kind="ssvm"), LossSpec(k=3), [], cfg)
        self.assertEqual(result.best_lam, cfg.ssvm.lam)
        self.assertEqual(result.scores, {})

    def test_fit_unknown_kind(self):
        """
        Test that an unknown model kind is a configuration error.
        """
        cfg = ExperimentConfig(metrics=[LossSpec(k=3)])
        with self.assertRaises(agm_struct.ConfigError):
            fit_model("svm", small_data(4), LossSpec(k=3), cfg, 0.1)


if __name__ == '__main__':
    unittest.main()
