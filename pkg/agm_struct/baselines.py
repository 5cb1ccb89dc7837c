"""
Reference models sharing the feature template: a tree CRF trained by maximum likelihood and
a margin-rescaled structured SVM trained by stochastic subgradient descent.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from agm_struct.config import CrfConfig, SsvmConfig
from agm_struct.exceptions import DatasetError
from agm_struct.features import (
    FeatureTemplate,
    ModelParams,
    Potentials,
    assemble_potentials,
    instance_moments,
    labeling_score,
    moments_from_marginals,
)
from agm_struct.graph import topo_order
from agm_struct.helper_functions import make_rng
from agm_struct.learner import step_size
from agm_struct.losses import loss_matrices
from agm_struct.predictors import Prediction, viterbi_tree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrfModel:
    params: ModelParams
    template: FeatureTemplate
    log_likelihood: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SsvmModel:
    params: ModelParams
    template: FeatureTemplate
    hinge: float
    updates: int


@dataclass(frozen=True)
class CrfMarginals:
    """r: (n, k) node marginals; Q: (n, k, k) pairwise marginals; log_z: log partition function."""
    r: np.ndarray
    Q: np.ndarray
    log_z: float


def _check_labeled(dataset):
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    for idx, inst in enumerate(dataset):
        if inst.y is None:
            raise DatasetError("training instance has no gold labels", instance=idx)


#     Sum-product     #


def tree_sum_product(pots, tree):
    """
    Exact node and pairwise marginals of the Gibbs distribution over a tree, in the log domain.
    """
    n, k = pots.b.shape
    log_alpha = pots.b.copy()
    messages = np.zeros((n, k))
    for node in topo_order(tree):
        if node == tree.root:
            continue
        i = node - 1
        messages[i] = logsumexp(pots.B[i] + log_alpha[i][None, :], axis=1)
        log_alpha[tree.parent(node) - 1] += messages[i]

    root = tree.root - 1
    log_z = float(logsumexp(log_alpha[root]))
    outside = np.zeros((n, k))
    Q = np.zeros((n, k, k))
    for node in reversed(topo_order(tree)):
        if node == tree.root:
            continue
        i = node - 1
        parent = tree.parent(node) - 1
        # parent belief without this child's message, rows: parent label
        cavity = outside[parent] + log_alpha[parent] - messages[i]
        joint = cavity[:, None] + pots.B[i] + log_alpha[i][None, :]
        outside[i] = logsumexp(cavity[:, None] + pots.B[i], axis=0)
        Q[i] = np.exp(joint - log_z)
    r = np.exp(log_alpha + outside - log_z)
    Q[root, 0] = r[root]
    return CrfMarginals(r=r, Q=Q, log_z=log_z)


def crf_infer(params, instance, template):
    """
    Node marginals, pairwise marginals and log partition function of the CRF on one instance.

    Parameters:
    params (ModelParams): CRF parameters.
    instance (Instance): The input.
    template (FeatureTemplate): Feature layout.

    Returns:
    CrfMarginals: Marginals in the package's pairwise layout and log Z.
    """
    return tree_sum_product(assemble_potentials(params, instance, template), instance.tree)


def crf_log_likelihood(params, template, dataset, lam=0.0):
    """
    Weighted average log-likelihood minus (lam / 2) ||theta||^2, and its gradient.

    Returns:
    tuple: (value, flat gradient).
    """
    theta = params.flat()
    total_weight = sum(inst.weight for inst in dataset)
    value = 0.0
    grad = np.zeros_like(theta)
    for inst in dataset:
        pots = assemble_potentials(params, inst, template)
        marg = tree_sum_product(pots, inst.tree)
        w = inst.weight / total_weight
        value += w * (labeling_score(pots, inst.tree, inst.y) - marg.log_z)
        expected = moments_from_marginals(template, inst, marg.r, marg.Q).flat()
        grad += w * (instance_moments(template, inst).flat() - expected)
    value -= 0.5 * lam * float(theta @ theta)
    return float(value), grad - lam * theta


def train_crf(dataset, template, cfg=None):
    """
    Maximum likelihood training by gradient ascent with Armijo backtracking.

    Parameters:
    dataset (sequence of Instance): Labeled instances.
    template (FeatureTemplate): Feature layout.
    cfg (CrfConfig, optional): lam, iteration cap, gradient tolerance and initial step.

    Returns:
    CrfModel: Parameters and diagnostics.
    """
    cfg = cfg or CrfConfig()
    dataset = list(dataset)
    _check_labeled(dataset)
    params = ModelParams.zeros(template)
    value, grad = crf_log_likelihood(params, template, dataset, cfg.lam)
    step = cfg.step0
    it = 0
    while it < cfg.max_iters and math.sqrt(float(grad @ grad)) > cfg.grad_tol:
        gnorm_sq = float(grad @ grad)
        while True:
            candidate = ModelParams.from_flat(template, params.flat() + step * grad)
            new_value, new_grad = crf_log_likelihood(candidate, template, dataset, cfg.lam)
            if new_value >= value + 1e-4 * step * gnorm_sq or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12:
            break
        params, value, grad = candidate, new_value, new_grad
        step = min(step * 2.0, cfg.step0 * 1e3)
        it += 1
    grad_norm = math.sqrt(float(grad @ grad))
    converged = grad_norm <= cfg.grad_tol
    if not converged:
        logger.warning("CRF training stopped after %d iterations with gradient norm %.3g", it, grad_norm)
    return CrfModel(params=params, template=template, log_likelihood=value, grad_norm=grad_norm,
                    iterations=it, converged=converged)


def bayes_decode_marginals(losses, marginals):
    """Per node argmin_a sum_b L_i[a][b] marginal_i[b]; near ties go to the smallest label."""
    expected = np.einsum("nab,nb->na", losses, marginals)
    best = expected.min(axis=1, keepdims=True)
    tied = expected <= best + 1e-12 * np.maximum(1.0, np.abs(best))
    return np.argmax(tied, axis=1) + 1


def crf_bayes_decode(model, instance, spec):
    """
    Bayes optimal labels of the CRF for an additive loss, decided node by node.

    Returns:
    Prediction: labels in 1..k and their expected total loss under the CRF as score.
    """
    marg = crf_infer(model.params, instance, model.template)
    losses = loss_matrices(spec, instance.n)
    labels = bayes_decode_marginals(losses, marg.r)
    expected = float(np.einsum("nb,nb->", losses[np.arange(instance.n), labels - 1], marg.r))
    return Prediction(labels=labels, distributions=None, score=expected)


################################


#     Structured SVM     #


def loss_augmented_map(pots, tree, losses, gold):
    """
    argmax_y loss(y, gold) + theta . Phi(x, y): MAP with node potentials b_i + L_i[:, gold_i].

    Returns:
    tuple: (labels in 1..k, augmented score).
    """
    gold = np.asarray(gold, dtype=np.int64) - 1
    augmented = pots.b + losses[np.arange(tree.n), :, gold]
    return viterbi_tree(Potentials(b=augmented, B=pots.B), tree)


def ssvm_hinge(params, instance, template, spec):
    """Margin-rescaled hinge max_y [loss(y, gold) + theta . (Phi(x, y) - Phi(x, gold))]."""
    pots = assemble_potentials(params, instance, template)
    _, best = loss_augmented_map(pots, instance.tree, loss_matrices(spec, instance.n), instance.y)
    return best - labeling_score(pots, instance.tree, instance.y)


def train_ssvm(dataset, template, spec, cfg=None):
    """
    Stochastic subgradient descent on the weighted average hinge plus (lam / 2) ||theta||^2.

    The most violated labeling comes from loss-augmented MAP; the subgradient is its feature
    vector minus the gold features. Iterates over the last cfg.tail_fraction of the updates
    are averaged.

    Parameters:
    dataset (sequence of Instance): Labeled instances.
    template (FeatureTemplate): Feature layout.
    spec (LossSpec): Loss metric in the margin.
    cfg (SsvmConfig, optional): Optimization settings.

    Returns:
    SsvmModel: Averaged parameters and the final average hinge.
    """
    cfg = cfg or SsvmConfig()
    dataset = list(dataset)
    _check_labeled(dataset)
    mean_weight = sum(inst.weight for inst in dataset) / len(dataset)
    theta = np.zeros(template.node_size + template.edge_size)
    rng = make_rng(cfg.seed)
    total_updates = cfg.epochs * len(dataset)
    tail_start = min(int(math.floor(total_updates * (1.0 - cfg.tail_fraction))), total_updates - 1)
    tail_sum = np.zeros_like(theta)
    tail_count = 0
    t = 0
    for _ in range(cfg.epochs):
        for idx in rng.permutation(len(dataset)):
            inst = dataset[idx]
            params = ModelParams.from_flat(template, theta)
            pots = assemble_potentials(params, inst, template)
            violator, _ = loss_augmented_map(pots, inst.tree, loss_matrices(spec, inst.n), inst.y)
            grad = (inst.weight / mean_weight) * (
                instance_moments(template, inst, violator).flat() - instance_moments(template, inst).flat())
            theta = theta - step_size(cfg, t) * (grad + cfg.lam * theta)
            t += 1
            if t > tail_start:
                tail_sum += theta
                tail_count += 1

    params = ModelParams.from_flat(template, tail_sum / tail_count)
    total_weight = mean_weight * len(dataset)
    hinge = sum(inst.weight * ssvm_hinge(params, inst, template, spec) for inst in dataset) / total_weight
    logger.info("SSVM trained in %d updates; average hinge %.6g", t, hinge)
    return SsvmModel(params=params, template=template, hinge=float(hinge), updates=t)


def ssvm_decode(model, instance):
    labels, best = viterbi_tree(assemble_potentials(model.params, instance, model.template), instance.tree)
    return Prediction(labels=labels, distributions=None, score=best)

