import unittest

import numpy as np

import agm_struct
from agm_struct.config import LossSpec
from agm_struct.losses import (
    cost_sensitive_spec,
    evaluate_loss,
    loss_matrices,
    make_loss,
    random_ordinal_cost_matrix,
    spec_digest,
)


class TestMakeLoss(unittest.TestCase):

    def test_zero_one(self):
        """
        Test that zero-one loss is one minus the identity.
        """
        np.testing.assert_array_equal(make_loss(LossSpec(kind="zero_one", k=2), 1), [[0, 1], [1, 0]])

    def test_absolute(self):
        """
        Test that absolute loss is |a - b| on labels 1..k.
        """
        np.testing.assert_array_equal(make_loss(LossSpec(kind="absolute", k=3), 1),
                                      [[0, 1, 2], [1, 0, 1], [2, 1, 0]])

    def test_squared_is_absolute_squared(self):
        """
        Test that squared entries are the squares of absolute entries and both are symmetric.
        """
        a = make_loss(LossSpec(kind="absolute", k=4), 1)
        s = make_loss(LossSpec(kind="squared", k=4), 1)
        np.testing.assert_array_equal(s, a ** 2)
        np.testing.assert_array_equal(s, s.T)

    def test_explicit_weights(self):
        """
        Test that explicit node weights scale the base matrix.
        """
        spec = LossSpec(kind="zero_one", k=2, node_weights=(1.0, 2.0, 3.0))
        np.testing.assert_array_equal(make_loss(spec, 3), [[0, 3], [3, 0]])

    def test_position_weights(self):
        """
        Test that position weighting uses 2i/(n+1) so the weights average to one.
        """
        spec = LossSpec(kind="zero_one", k=2, position_weighted=True)
        mats = loss_matrices(spec, 4)
        np.testing.assert_allclose(mats[:, 0, 1], [0.4, 0.8, 1.2, 1.6])
        self.assertAlmostEqual(mats[:, 0, 1].mean(), 1.0)

    def test_non_positive_weight(self):
        """
        Test that a zero node weight is rejected.
        """
        with self.assertRaises(agm_struct.LossSpecError):
            make_loss(LossSpec(kind="zero_one", k=2, node_weights=(1.0, 0.0)), 2)

    def test_unknown_kind(self):
        """
        Test that an unknown kind is rejected.
        """
        with self.assertRaises(agm_struct.LossSpecError):
            make_loss(LossSpec(kind="hamming", k=2), 1)

    def test_custom_needs_zero_diagonal(self):
        """
        Test that a custom table with a nonzero diagonal is rejected.
        """
        with self.assertRaises(agm_struct.LossSpecError):
            make_loss(LossSpec(kind="cost_sensitive", k=2, custom=((1.0, 1.0), (1.0, 0.0))), 1)


class TestEvaluateLoss(unittest.TestCase):

    def test_exact_match(self):
        """
        Test that a perfect prediction has zero loss.
        """
        self.assertEqual(evaluate_loss(LossSpec(kind="zero_one", k=2), (1, 2), (1, 2)), 0.0)

    def test_half_wrong(self):
        """
        Test that one error out of two nodes averages to 0.5.
        """
        self.assertEqual(evaluate_loss(LossSpec(kind="zero_one", k=2), (1, 2), (2, 2)), 0.5)

    def test_absolute_average(self):
        """
        Test the per-node average of absolute loss.
        """
        self.assertEqual(evaluate_loss(LossSpec(kind="absolute", k=3), (1, 3), (3, 3)), 1.0)

    def test_length_mismatch(self):
        """
        Test that sequences of different lengths are rejected.
        """
        with self.assertRaises(agm_struct.LossSpecError):
            evaluate_loss(LossSpec(kind="zero_one", k=2), (1, 2), (1,))

    def test_label_out_of_range(self):
        """
        Test that a label above k is rejected.
        """
        with self.assertRaises(agm_struct.LossSpecError):
            evaluate_loss(LossSpec(kind="zero_one", k=2), (1, 3), (1, 2))

    def test_permutation_invariance(self):
        """
        Test that jointly permuting predictions and truth leaves the average unchanged.
        """
        spec = LossSpec(kind="squared", k=4)
        pred, truth = np.array([1, 4, 2, 3]), np.array([2, 4, 4, 1])
        perm = np.array([3, 0, 2, 1])
        self.assertAlmostEqual(evaluate_loss(spec, pred, truth), evaluate_loss(spec, pred[perm], truth[perm]))


class TestCostSensitive(unittest.TestCase):

    def test_random_ordinal_matrix(self):
        """
        Test that the seeded cost matrix is a symmetric zero-diagonal ordinal table.
        """
        table = random_ordinal_cost_matrix(5, seed=11)
        np.testing.assert_array_equal(table, table.T)
        np.testing.assert_array_equal(np.diag(table), 0)
        self.assertEqual(table.max(), 4)
        np.testing.assert_array_equal(table, random_ordinal_cost_matrix(5, seed=11))

    def test_spec_digest_stable(self):
        """
        Test that the digest is stable and separates different metrics.
        """
        self.assertEqual(spec_digest(cost_sensitive_spec(5, 1)), spec_digest(cost_sensitive_spec(5, 1)))
        self.assertNotEqual(spec_digest(cost_sensitive_spec(5, 1)), spec_digest(LossSpec(kind="absolute", k=5)))


if __name__ == '__main__':
    unittest.main()
