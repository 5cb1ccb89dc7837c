"""
Decoders: exact max-sum decoding on trees and the probabilistic saddle point predictor.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from agm_struct.config import PredictConfig
from agm_struct.features import Potentials, assemble_potentials
from agm_struct.game_solver import solve_inner_lp
from agm_struct.graph import topo_order
from agm_struct.helper_functions import project_simplex
from agm_struct.losses import loss_matrices

logger = logging.getLogger(__name__)

__all__ = ["Prediction", "viterbi_tree", "predict_map", "predict_probabilistic", "project_simplex"]


@dataclass(frozen=True)
class Prediction:
    """
    Attributes:
    labels (numpy.ndarray or None): Per-node labels in 1..k (MAP decoding).
    distributions (numpy.ndarray or None): (n, k) per-node predictor distributions (probabilistic decoding).
    score (float): Potential value of the labels, or the saddle value.
    converged (bool): False when the probabilistic predictor hit its iteration cap.
    gap (float): Certified saddle gap of the probabilistic predictor.
    """
    labels: Optional[np.ndarray]
    distributions: Optional[np.ndarray]
    score: float
    converged: bool = True
    gap: float = 0.0


def viterbi_tree(pots, tree):
    """
    Exact argmax of sum_i b_i[y_i] + sum_edges B[y_pt(i), y_i] by leaves-to-root max-sum.

    Parameters:
    pots (Potentials): Node and edge potentials.
    tree (TreeGraph): The label tree.

    Returns:
    tuple: (labels in 1..k, best score).
    """
    n, k = pots.b.shape
    score = pots.b.copy()
    backpointers = {}
    for node in topo_order(tree):
        if node == tree.root:
            continue
        i = node - 1
        # rows: parent label, columns: child label
        scores = pots.B[i] + score[i][None, :]
        backpointers[node] = np.argmax(scores, axis=1)
        score[tree.parent(node) - 1] += scores.max(axis=1)

    labels = np.zeros(n, dtype=np.int64)
    labels[tree.root - 1] = int(np.argmax(score[tree.root - 1]))
    best = float(score[tree.root - 1, labels[tree.root - 1]])
    for node in reversed(topo_order(tree)):
        if node == tree.root:
            continue
        labels[node - 1] = backpointers[node][labels[tree.parent(node) - 1]]
    return labels + 1, best


def predict_map(params, instance, template):
    """
    MAP labeling argmax_y theta . Phi(x, y) of one instance.

    Ties go to the smallest label index at every decision of the dynamic program.

    Returns:
    Prediction: labels in 1..k with their potential score.
    """
    pots = assemble_potentials(params, instance, template)
    labels, best = viterbi_tree(pots, instance.tree)
    return Prediction(labels=labels, distributions=None, score=best)


def _adversary_lower_bound(pots, losses, tree, r, Q):
    value = float((pots.b * r).sum())
    value += sum(float((losses[i] @ r[i]).min()) for i in range(r.shape[0]))
    mask = np.ones(r.shape[0], dtype=bool)
    mask[tree.root - 1] = False
    return value + float((Q[mask] * pots.B[mask]).sum())


def _best_response(pots, losses, tree, p):
    augmented = pots.b + np.einsum("njb,nj->nb", losses, p)
    labels, value = viterbi_tree(Potentials(b=augmented, B=pots.B), tree)
    return labels - 1, value


def predict_probabilistic(params, instance, template, spec, cfg=None):
    """
    Per-node predictor distributions minimizing the adversary's best response.

    With the order of the players flipped, the adversary's best response to fixed predictor
    marginals p is a MAP labeling under loss-augmented potentials b_i + L_i^T p_i, and
    L_i[:, y*_i] is a subgradient in p_i. Projected subgradient steps eta_0 / sqrt(t) are
    averaged; the averaged best responses give a lower bound, so the loop stops once the
    certified gap falls below cfg.tol.

    Parameters:
    params (ModelParams): Trained parameters.
    instance (Instance): The input.
    template (FeatureTemplate): Feature layout.
    spec (LossSpec): Loss metric.
    cfg (PredictConfig, optional): method "subgradient" or "lp" and the loop settings.

    Returns:
    Prediction: distributions of shape (n, k) and the saddle value as score.
    """
    cfg = cfg or PredictConfig()
    pots = assemble_potentials(params, instance, template)
    losses = loss_matrices(spec, instance.n)
    tree = instance.tree
    n, k = pots.b.shape

    if cfg.method == "lp":
        value, marginals = solve_inner_lp(tree, pots, losses)
        return Prediction(labels=None, distributions=marginals.p, score=value)

    p = np.full((n, k), 1.0 / k)
    p_sum = np.zeros((n, k))
    r_sum = np.zeros((n, k))
    Q_sum = np.zeros((n, k, k))
    parent_index = tree.parent_index
    gap = np.inf
    upper = np.inf
    converged = False
    t = 0
    for t in range(1, cfg.max_iters + 1):
        labels, _ = _best_response(pots, losses, tree, p)
        r_sum[np.arange(n), labels] += 1.0
        for i in range(n):
            row = 0 if parent_index[i] < 0 else labels[parent_index[i]]
            Q_sum[i, row, labels[i]] += 1.0
        eta = cfg.step0 / np.sqrt(t)
        step = losses[np.arange(n), :, labels]
        p = np.array([project_simplex(p[i] - eta * step[i]) for i in range(n)])
        p_sum += p

        if t % cfg.check_every == 0 or t == cfg.max_iters:
            p_bar = p_sum / t
            _, upper = _best_response(pots, losses, tree, p_bar)
            lower = _adversary_lower_bound(pots, losses, tree, r_sum / t, Q_sum / t)
            gap = upper - lower
            if gap <= cfg.tol:
                converged = True
                break

    if not converged:
        logger.warning("probabilistic predictor stopped after %d iterations with gap %.3g", t, gap)
    return Prediction(labels=None, distributions=p_sum / t, score=float(upper), converged=converged, gap=float(gap))
