import logging
import unittest

import numpy as np

from agm_struct.baselines import train_ssvm, ssvm_decode
from agm_struct.config import LossSpec, PredictConfig, SolverConfig, SsvmConfig, TrainConfig
from agm_struct.data import population_dataset
from agm_struct.game_solver import enumerate_labelings
from agm_struct.graph import chain
from agm_struct.learner import train_agm
from agm_struct.losses import loss_matrices
from agm_struct.predictors import predict_probabilistic

logger = logging.getLogger(__name__)

# node 1 has mode 1 but median 2, so mode decoding is wrong for absolute loss
INITIAL = np.array([0.4, 0.25, 0.35])
TRANSITION = np.array([[0.5, 0.2, 0.3], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])


def chain_distribution():
    Y = enumerate_labelings(3, 3)
    probs = INITIAL[Y[:, 0]] * TRANSITION[Y[:, 0], Y[:, 1]] * TRANSITION[Y[:, 1], Y[:, 2]]
    return Y, probs


def node_marginals(Y, probs, k):
    return np.array([np.bincount(Y[:, i], weights=probs, minlength=k) for i in range(Y.shape[1])])


class TestFisherConsistency(unittest.TestCase):

    def setUp(self):
        Y, probs = chain_distribution()
        self.marginals = node_marginals(Y, probs, 3)
        edge_x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        self.data = population_dataset(chain(3), np.eye(3), probs, 3, edge_x=edge_x)

    def expected_loss(self, spec, distributions):
        losses = loss_matrices(spec, 3)
        return float(np.einsum("na,nab,nb->", distributions, losses, self.marginals)) / 3

    def bayes_risk(self, spec):
        losses = loss_matrices(spec, 3)
        return float(np.einsum("nab,nb->na", losses, self.marginals).min(axis=1).sum()) / 3

    def check_metric(self, spec):
        cfg = TrainConfig(lam=0.0, epochs=2000, batch_size=len(self.data), step0=1.0, decay=1.0,
                          solver=SolverConfig(method="lp"))
        params, report = train_agm(self.data.instances, self.data.template, spec, cfg)
        prediction = predict_probabilistic(params, self.data.instances[0], self.data.template, spec,
                                           PredictConfig(method="lp"))
        risk = self.bayes_risk(spec)
        achieved = self.expected_loss(spec, prediction.distributions)
        # moment matching pins the adversary, so the objective bounds the predictor's true risk
        self.assertLessEqual(achieved, report.final_objective / 3 + 1e-6)
        self.assertLessEqual(achieved, risk + 1e-2)
        return achieved, risk

    def test_zero_one(self):
        """
        Test that the trained predictor reaches the Bayes risk of zero-one loss.
        """
        self.check_metric(LossSpec(kind="zero_one", k=3))

    def test_absolute_non_majority(self):
        """
        Test that the trained predictor reaches the Bayes risk of absolute loss where the mode is not optimal.
        """
        spec = LossSpec(kind="absolute", k=3)
        achieved, risk = self.check_metric(spec)
        ssvm = train_ssvm(self.data.instances, self.data.template, spec, SsvmConfig(lam=1e-3, epochs=50))
        labels = ssvm_decode(ssvm, self.data.instances[0]).labels
        ssvm_loss = self.expected_loss(spec, np.eye(3)[labels - 1])
        logger.info("expected absolute loss: AGM %.4f, SSVM %.4f, Bayes risk %.4f", achieved, ssvm_loss, risk)
        self.assertGreaterEqual(ssvm_loss, risk - 1e-9)
        self.assertLessEqual(achieved, ssvm_loss + 1e-2)


if __name__ == '__main__':
    unittest.main()
