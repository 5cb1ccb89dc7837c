import unittest

import numpy as np
from scipy.special import logsumexp

import agm_struct
from agm_struct.baselines import (
    CrfModel,
    bayes_decode_marginals,
    crf_bayes_decode,
    crf_infer,
    crf_log_likelihood,
    loss_augmented_map,
    ssvm_decode,
    ssvm_hinge,
    train_crf,
    train_ssvm,
    tree_sum_product,
)
from agm_struct.config import CrfConfig, LossSpec, SsvmConfig
from agm_struct.features import ModelParams, Potentials, feature_template, make_instance
from agm_struct.game_solver import enumerate_labelings, labeling_scores
from agm_struct.graph import build_tree, chain
from agm_struct.losses import evaluate_loss, loss_matrices, total_loss


def random_dataset(template, n, count, seed):
    rng = np.random.default_rng(seed)
    return [make_instance(rng.normal(size=(n, template.d)), chain(n), y=rng.integers(1, template.k + 1, size=n),
                          k=template.k)
            for _ in range(count)]


class TestSumProduct(unittest.TestCase):

    def test_zero_potentials(self):
        """
        Test uniform marginals and log Z = n log k.
        """
        tree = chain(4)
        marg = tree_sum_product(Potentials(b=np.zeros((4, 3)), B=np.zeros((4, 3, 3))), tree)
        np.testing.assert_allclose(marg.r, np.full((4, 3), 1 / 3), atol=1e-12)
        self.assertAlmostEqual(marg.log_z, 4 * np.log(3), places=12)

    def test_softmax_single_node(self):
        """
        Test that one node's marginal is the softmax of its potential.
        """
        marg = tree_sum_product(Potentials(b=np.array([[np.log(3.0), 0.0]]), B=np.zeros((1, 2, 2))), chain(1))
        np.testing.assert_allclose(marg.r[0], [0.75, 0.25], atol=1e-12)

    def test_enumeration(self):
        """
        Test node marginals, pairwise marginals and log Z against enumeration.
        """
        rng = np.random.default_rng(1)
        for tree, k in ((chain(3), 3), (build_tree(5, [(1, 2), (2, 3), (2, 4), (4, 5)], root=2), 3)):
            B = rng.normal(size=(tree.n, k, k))
            B[tree.root - 1] = 0.0
            pots = Potentials(b=rng.normal(size=(tree.n, k)), B=B)
            Y = enumerate_labelings(tree.n, k)
            scores = labeling_scores(tree, pots, Y)
            log_z = logsumexp(scores)
            prob = np.exp(scores - log_z)
            marg = tree_sum_product(pots, tree)
            self.assertAlmostEqual(marg.log_z, log_z, places=10)
            for i in range(tree.n):
                expected = np.bincount(Y[:, i], weights=prob, minlength=k)
                np.testing.assert_allclose(marg.r[i], expected, atol=1e-10)
            for parent, child in tree.edges:
                expected = np.zeros((k, k))
                np.add.at(expected, (Y[:, parent - 1], Y[:, child - 1]), prob)
                np.testing.assert_allclose(marg.Q[child - 1], expected, atol=1e-10)


class TestCrf(unittest.TestCase):

    def test_likelihood_gradient(self):
        """
        Test the likelihood gradient against central differences.
        """
        template = feature_template(2, 0, 3)
        data = random_dataset(template, 3, 4, seed=2)
        rng = np.random.default_rng(3)
        params = ModelParams.from_flat(template, rng.normal(size=template.node_size + template.edge_size))
        _, grad = crf_log_likelihood(params, template, data, lam=0.1)
        theta = params.flat()
        h = 1e-5
        for j in range(theta.size):
            step = np.zeros_like(theta)
            step[j] = h
            up, _ = crf_log_likelihood(ModelParams.from_flat(template, theta + step), template, data, lam=0.1)
            down, _ = crf_log_likelihood(ModelParams.from_flat(template, theta - step), template, data, lam=0.1)
            self.assertAlmostEqual((up - down) / (2 * h), grad[j], delta=1e-6 + 1e-5 * abs(grad[j]))

    def test_training_reaches_stationarity(self):
        """
        Test that regularized training stops at a small gradient.
        """
        template = feature_template(1, 0, 2)
        data = random_dataset(template, 3, 6, seed=4)
        model = train_crf(data, template, CrfConfig(lam=1.0, grad_tol=1e-5, max_iters=5000))
        self.assertTrue(model.converged)
        _, grad = crf_log_likelihood(model.params, template, data, lam=1.0)
        self.assertLessEqual(np.linalg.norm(grad), 1e-5)

    def test_strong_regularization(self):
        """
        Test that a huge lam keeps the CRF parameters near zero.
        """
        template = feature_template(1, 0, 2)
        model = train_crf(random_dataset(template, 3, 4, seed=5), template, CrfConfig(lam=1e4))
        self.assertLessEqual(np.linalg.norm(model.params.flat()), 1e-3)

    def test_bayes_decode(self):
        """
        Test expected-loss decoding of node marginals.
        """
        absolute = loss_matrices(LossSpec(kind="absolute", k=3), 1)
        np.testing.assert_array_equal(bayes_decode_marginals(absolute, np.array([[0.4, 0.1, 0.5]])), [2])
        zero_one = loss_matrices(LossSpec(k=3), 1)
        np.testing.assert_array_equal(bayes_decode_marginals(zero_one, np.array([[0.2, 0.3, 0.5]])), [3])
        squared = loss_matrices(LossSpec(kind="squared", k=3), 1)
        np.testing.assert_array_equal(bayes_decode_marginals(squared, np.array([[0.0, 1.0, 0.0]])), [2])

    def test_crf_bayes_decode_uses_marginals(self):
        """
        Test that decoding a trained CRF agrees with its own marginals.
        """
        template = feature_template(1, 0, 3)
        data = random_dataset(template, 3, 5, seed=6)
        model = train_crf(data, template, CrfConfig(lam=0.5))
        spec = LossSpec(kind="absolute", k=3)
        for inst in data:
            pred = crf_bayes_decode(model, inst, spec)
            marg = crf_infer(model.params, inst, template)
            np.testing.assert_array_equal(pred.labels, bayes_decode_marginals(loss_matrices(spec, 3), marg.r))

    def test_empty(self):
        """
        Test that an empty training set is rejected.
        """
        with self.assertRaises(agm_struct.DatasetError):
            train_crf([], feature_template(0, 0, 2))


class TestSsvm(unittest.TestCase):

    def test_zero_theta_loss_augmented(self):
        """
        Test that with zero potentials the most violated labeling maximizes the loss.
        """
        tree = chain(3)
        pots = Potentials(b=np.zeros((3, 3)), B=np.zeros((3, 3, 3)))
        labels, best = loss_augmented_map(pots, tree, loss_matrices(LossSpec(kind="absolute", k=3), 3), (1, 3, 2))
        np.testing.assert_array_equal(labels, [3, 1, 1])
        self.assertEqual(best, 5.0)

    def test_hinge_majorizes_loss(self):
        """
        Test that the hinge at the trained parameters bounds the decoder's loss on every instance.
        """
        template = feature_template(2, 0, 3)
        spec = LossSpec(kind="squared", k=3)
        data = random_dataset(template, 3, 6, seed=7)
        model = train_ssvm(data, template, spec, SsvmConfig(epochs=10))
        for inst in data:
            pred = ssvm_decode(model, inst)
            self.assertGreaterEqual(ssvm_hinge(model.params, inst, template, spec),
                                    total_loss(spec, pred.labels, inst.y) - 1e-9)

    def test_separable(self):
        """
        Test that a separable instance with expressive features is fitted with zero hinge.
        """
        template = feature_template(2, 0, 2)
        inst = make_instance(np.eye(2), chain(2), y=(1, 2), k=2)
        spec = LossSpec(k=2)
        model = train_ssvm([inst], template, spec, SsvmConfig(lam=0.0, epochs=200, step0=1.0, decay=0.0))
        self.assertLessEqual(model.hinge, 1e-9)
        self.assertEqual(evaluate_loss(spec, ssvm_decode(model, inst).labels, inst.y), 0.0)

    def test_strong_regularization(self):
        """
        Test that a huge lam keeps the SSVM parameters small.
        """
        template = feature_template(1, 0, 2)
        model = train_ssvm(random_dataset(template, 3, 4, seed=8), template, LossSpec(k=2), SsvmConfig(lam=1e4))
        self.assertLessEqual(np.linalg.norm(model.params.flat()), 1e-2)


if __name__ == '__main__':
    unittest.main()
