import unittest

import numpy as np

from agm_struct.config import LossSpec, PredictConfig
from agm_struct.features import ModelParams, Potentials, assemble_potentials, feature_template, make_instance
from agm_struct.game_solver import enumerate_labelings, exhaustive_joint_game, labeling_scores, solve_node_game
from agm_struct.graph import build_tree, chain
from agm_struct.losses import loss_matrices
from agm_struct.predictors import predict_map, predict_probabilistic, project_simplex, viterbi_tree


def bias_params(template, b):
    """Parameters whose node potentials equal b on every node of a d = 0 template."""
    theta_v = np.zeros(template.node_size)
    for label, value in enumerate(b, start=1):
        theta_v[template.node_index(label)] = value
    return ModelParams(theta_v, np.zeros(template.edge_size))


class TestViterbi(unittest.TestCase):

    def test_decoupled(self):
        """
        Test that without edge potentials every node takes its own argmax.
        """
        tree = chain(3)
        b = np.array([[0.1, 0.5, 0.2], [0.9, 0.0, 0.3], [0.0, 0.1, 0.4]])
        labels, best = viterbi_tree(Potentials(b=b, B=np.zeros((3, 3, 3))), tree)
        np.testing.assert_array_equal(labels, [2, 1, 3])
        self.assertAlmostEqual(best, 1.8)

    def test_tie_breaks_to_smallest(self):
        """
        Test that the tie between (1, 1) and (2, 2) goes to the smaller labels.
        """
        B = np.zeros((2, 2, 2))
        B[1] = [[5.0, 0.0], [0.0, 5.0]]
        labels, best = viterbi_tree(Potentials(b=np.zeros((2, 2)), B=B), chain(2))
        np.testing.assert_array_equal(labels, [1, 1])
        self.assertEqual(best, 5.0)

    def test_brute_force(self):
        """
        Test exact decoding against enumeration on chains and a branching tree.
        """
        rng = np.random.default_rng(0)
        trees = [chain(3), build_tree(5, [(1, 2), (1, 3), (3, 4), (3, 5)], root=3), chain(6)]
        for tree, k in zip(trees, (3, 3, 2)):
            for _ in range(5):
                B = rng.normal(size=(tree.n, k, k))
                B[tree.root - 1] = 0.0
                pots = Potentials(b=rng.normal(size=(tree.n, k)), B=B)
                Y = enumerate_labelings(tree.n, k)
                scores = labeling_scores(tree, pots, Y)
                labels, best = viterbi_tree(pots, tree)
                np.testing.assert_array_equal(labels, Y[np.argmax(scores)] + 1)
                self.assertAlmostEqual(best, scores.max(), places=10)

    def test_predict_map(self):
        """
        Test that MAP decoding of parameters goes through the assembled potentials.
        """
        template = feature_template(0, 0, 3)
        inst = make_instance(np.zeros((2, 0)), chain(2))
        pred = predict_map(bias_params(template, (0.0, 1.0, 0.5)), inst, template)
        np.testing.assert_array_equal(pred.labels, [2, 2])
        self.assertAlmostEqual(pred.score, 2.0)
        self.assertIsNone(pred.distributions)


class TestProbabilistic(unittest.TestCase):

    def setUp(self):
        self.template = feature_template(0, 0, 2)
        self.inst = make_instance(np.zeros((1, 0)), chain(1))
        self.spec = LossSpec(k=2)

    def test_symmetric_node(self):
        """
        Test that a symmetric game gives the uniform predictor.
        """
        for cfg in (PredictConfig(max_iters=5000), PredictConfig(method="lp")):
            pred = predict_probabilistic(ModelParams.zeros(self.template), self.inst, self.template, self.spec, cfg)
            np.testing.assert_allclose(pred.distributions[0], [0.5, 0.5], atol=1e-2)
            self.assertIsNone(pred.labels)

    def test_dominant_label(self):
        """
        Test that a large potential on label 1 makes the predictor certain of it.
        """
        params = bias_params(self.template, (10.0, 0.0))
        pred = predict_probabilistic(params, self.inst, self.template, self.spec)
        node = solve_node_game(np.array([10.0, 0.0]), loss_matrices(self.spec, 1)[0])
        self.assertTrue(pred.converged)
        np.testing.assert_allclose(pred.distributions[0], node.p, atol=1e-2)
        np.testing.assert_allclose(pred.distributions[0], [1.0, 0.0], atol=1e-2)
        self.assertLessEqual(pred.gap, PredictConfig().tol)

    def test_matches_flipped_game(self):
        """
        Test the saddle value against the exhaustive game on a two-node chain.
        """
        rng = np.random.default_rng(5)
        template = feature_template(1, 0, 3)
        spec = LossSpec(kind="absolute", k=3)
        inst = make_instance(rng.normal(size=(2, 1)), chain(2))
        params = ModelParams.from_flat(template, rng.normal(size=template.node_size + template.edge_size))
        pots = assemble_potentials(params, inst, template)
        exact, _ = exhaustive_joint_game(inst.tree, pots, loss_matrices(spec, 2))
        lp = predict_probabilistic(params, inst, template, spec, PredictConfig(method="lp"))
        self.assertAlmostEqual(lp.score, exact, delta=1e-3)
        sub = predict_probabilistic(params, inst, template, spec)
        self.assertTrue(sub.converged)
        self.assertLessEqual(sub.gap, 1e-3)
        self.assertGreaterEqual(sub.score, exact - 1e-8)
        self.assertLessEqual(sub.score, exact + 1e-3)
        np.testing.assert_allclose(sub.distributions.sum(axis=1), 1.0, atol=1e-9)


class TestProjection(unittest.TestCase):

    def test_fixed_point(self):
        """
        Test that the uniform distribution is its own projection.
        """
        np.testing.assert_allclose(project_simplex(np.full(3, 1 / 3)), np.full(3, 1 / 3), atol=1e-12)

    def test_grid_search(self):
        """
        Test the two-label projection against a fine grid over the 1-simplex.
        """
        grid = np.linspace(0.0, 1.0, 1000001)
        v = np.array([1.2, 0.3])
        dist = (grid - v[0]) ** 2 + (1.0 - grid - v[1]) ** 2
        best = grid[np.argmin(dist)]
        np.testing.assert_allclose(project_simplex(v), [best, 1.0 - best], atol=1e-6)


if __name__ == '__main__':
    unittest.main()
