"""
Additive per-node loss metrics.

A metric is described by a LossSpec and expanded into one k-by-k matrix per node, with
entry [a][b] = loss(predicted label a+1, true label b+1). The same matrices are the game
payoffs during training and the evaluation metric afterwards.
"""
import hashlib
import logging

import numpy as np

from agm_struct.config import LossSpec
from agm_struct.exceptions import LossSpecError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("zero_one", "absolute", "squared", "cost_sensitive")


def _base_matrix(spec):
    k = spec.k
    labels = np.arange(1, k + 1, dtype=float)
    if spec.kind == "zero_one":
        return 1.0 - np.eye(k)
    if spec.kind == "absolute":
        return np.abs(labels[:, None] - labels[None, :])
    if spec.kind == "squared":
        return (labels[:, None] - labels[None, :]) ** 2
    if spec.kind == "cost_sensitive":
        if spec.custom is None:
            raise LossSpecError("cost_sensitive loss needs a custom k-by-k table")
        table = np.asarray(spec.custom, dtype=float)
        if table.shape != (k, k):
            raise LossSpecError(f"custom loss table has shape {table.shape}, expected ({k}, {k})")
        if not np.all(np.isfinite(table)):
            raise LossSpecError("custom loss table has non-finite entries")
        if np.any(table < 0):
            raise LossSpecError("custom loss table has negative entries")
        if np.any(np.diag(table) != 0):
            raise LossSpecError("custom loss table must have a zero diagonal")
        return table
    raise LossSpecError(f"unknown loss kind {spec.kind!r}; expected one of {', '.join(LOSS_KINDS)}")


def node_weight(spec, node, n=None):
    """
    Weight of a 1-based node: explicit node_weights first, then position weighting, else 1.

    Raises:
    LossSpecError: If the weight is missing or not positive.
    """
    if spec.node_weights is not None:
        if node < 1 or node > len(spec.node_weights):
            raise LossSpecError(f"no weight for node {node}; {len(spec.node_weights)} weights given")
        weight = float(spec.node_weights[node - 1])
    elif spec.position_weighted:
        if n is None:
            raise LossSpecError("position weighting needs the instance length")
        weight = 2.0 * node / (n + 1.0)
    else:
        weight = 1.0
    if not weight > 0:
        raise LossSpecError(f"node weight must be positive, got {weight} for node {node}")
    return weight


def make_loss(spec, node, n=None):
    """
    Builds the loss matrix L_i of one node.

    Parameters:
    spec (LossSpec): The metric description.
    node (int): 1-based node index.
    n (int, optional): Instance length, required for position weighting.

    Returns:
    numpy.ndarray: k-by-k matrix with entries loss(predicted=a, true=b).

    Raises:
    LossSpecError: For an unknown kind, a bad custom table or a non-positive weight.
    """
    return node_weight(spec, node, n) * _base_matrix(spec)


def loss_matrices(spec, n):
    """
    Stacks the loss matrices of nodes 1..n into an (n, k, k) array.
    """
    if spec.node_weights is not None and len(spec.node_weights) != n:
        raise LossSpecError(f"{len(spec.node_weights)} node weights given for an instance with {n} nodes")
    base = _base_matrix(spec)
    weights = np.array([node_weight(spec, i, n) for i in range(1, n + 1)])
    return weights[:, None, None] * base[None, :, :]


def _check_labels(spec, predicted, truth):
    predicted = np.asarray(predicted, dtype=int).ravel()
    truth = np.asarray(truth, dtype=int).ravel()
    if predicted.size != truth.size:
        raise LossSpecError(f"prediction has {predicted.size} labels but truth has {truth.size}")
    if predicted.size == 0:
        raise LossSpecError("cannot evaluate an empty label sequence")
    for name, seq in (("predicted", predicted), ("truth", truth)):
        bad = np.flatnonzero((seq < 1) | (seq > spec.k))
        if bad.size:
            raise LossSpecError(f"{name} label {seq[bad[0]]} at node {bad[0] + 1} outside 1..{spec.k}")
    return predicted, truth


def total_loss(spec, predicted, truth):
    """Sum over nodes of L_i[predicted_i][truth_i]."""
    predicted, truth = _check_labels(spec, predicted, truth)
    mats = loss_matrices(spec, predicted.size)
    return float(mats[np.arange(predicted.size), predicted - 1, truth - 1].sum())


def evaluate_loss(spec, predicted, truth):
    """
    Per-node average loss of a prediction.

    Parameters:
    spec (LossSpec): The metric.
    predicted (sequence): Predicted labels in 1..k.
    truth (sequence): Gold labels in 1..k.

    Returns:
    float: sum_i L_i[predicted_i][truth_i] / n.

    Raises:
    LossSpecError: On length mismatch or labels out of range.
    """
    predicted, _ = _check_labels(spec, predicted, truth)
    return total_loss(spec, predicted, truth) / predicted.size


def expected_node_loss(loss_matrix, prediction, marginal):
    """
    Expected loss p^T L r of a predictor distribution against a label distribution.
    """
    return float(np.asarray(prediction) @ np.asarray(loss_matrix) @ np.asarray(marginal))


def random_ordinal_cost_matrix(k, seed):
    """
    Cost-sensitive matrix from a seeded random label order: cost(a, b) = |rank(a) - rank(b)|.

    Parameters:
    k (int): Number of labels.
    seed (int): Seed of the random order.

    Returns:
    numpy.ndarray: Symmetric, nonnegative, zero-diagonal k-by-k matrix.
    """
    rng = np.random.default_rng(seed)
    rank = np.empty(k, dtype=float)
    rank[rng.permutation(k)] = np.arange(k)
    return np.abs(rank[:, None] - rank[None, :])


def cost_sensitive_spec(k, seed, name=None):
    table = random_ordinal_cost_matrix(k, seed)
    return LossSpec(kind="cost_sensitive", k=k, custom=tuple(tuple(row) for row in table.tolist()), name=name)


def spec_digest(spec):
    """SHA-256 of the canonical JSON of a LossSpec, stored in model files."""
    return hashlib.sha256(spec.digest_source().encode("utf-8")).hexdigest()
