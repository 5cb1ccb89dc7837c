"""
Outer training loop of the adversarial graphical model.

The training objective is the weighted average over instances of the inner saddle value
minus the gold labeling's score, plus (lam / 2) ||theta||^2. It is a pointwise maximum of
affine functions of theta, and a subgradient is the adversary's expected features minus the
gold features, plus lam * theta.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from agm_struct.config import TrainConfig
from agm_struct.exceptions import ConvergenceError, DatasetError
from agm_struct.features import (
    ModelParams,
    assemble_potentials,
    instance_moments,
    labeling_score,
    moments_from_marginals,
)
from agm_struct.game_solver import solve_inner
from agm_struct.helper_functions import make_rng
from agm_struct.losses import loss_matrices

logger = logging.getLogger(__name__)


@dataclass
class TrainReport:
    """
    Diagnostics of one training run.

    Attributes:
    epoch_objectives (list): Average sampled objective per epoch.
    node_violation (float): l-inf norm of the averaged adversary minus empirical node moments.
    edge_violation (float): Same for edge moments.
    converged (bool): True when every inner solve met its gap tolerance.
    failed_solves (int): Inner solves that stopped at the iteration cap.
    total_solves (int): Inner solves performed.
    seconds_per_update (list): Wall-clock time of every parameter update.
    final_objective (float): Full objective at the returned parameters.
    """
    epoch_objectives: list = field(default_factory=list)
    node_violation: float = float("nan")
    edge_violation: float = float("nan")
    converged: bool = True
    failed_solves: int = 0
    total_solves: int = 0
    seconds_per_update: list = field(default_factory=list, repr=False)
    final_objective: float = float("nan")

    @property
    def updates(self):
        return len(self.seconds_per_update)


@dataclass(frozen=True)
class ObjectiveEvaluation:
    """
    value: objective estimate; gradient: flat subgradient (regularizer included);
    moment_gap: flat adversary minus empirical moments (regularizer excluded).
    """
    value: float
    gradient: np.ndarray
    moment_gap: np.ndarray
    converged: bool
    failed_solves: int
    total_solves: int


def _group_by_inputs(instances):
    groups = {}
    for inst in instances:
        groups.setdefault(inst.input_key(), []).append(inst)
    return list(groups.values())


def evaluate_objective(params, template, instances, spec, cfg=None):
    """
    Objective value and subgradient over a set of weighted instances.

    Instances sharing their inputs and tree share one inner solve, since the inner game does
    not depend on the gold labels.

    Parameters:
    params (ModelParams): Current parameters.
    template (FeatureTemplate): Feature layout.
    instances (sequence of Instance): Labeled instances.
    spec (LossSpec): The loss metric the adversarial game is played on.
    cfg (TrainConfig, optional): lam and the inner solver settings.

    Returns:
    ObjectiveEvaluation: Value, subgradient and inner solver diagnostics.

    Raises:
    DatasetError: If instances is empty or an instance has no labels.
    """
    cfg = cfg or TrainConfig()
    if len(instances) == 0:
        raise DatasetError("cannot evaluate the objective on an empty dataset")
    theta = params.flat()
    total_weight = sum(inst.weight for inst in instances)
    value = 0.0
    gap = np.zeros_like(theta)
    failed = 0
    solves = 0
    for group in _group_by_inputs(instances):
        head = group[0]
        pots = assemble_potentials(params, head, template)
        inner = solve_inner(head.tree, pots, loss_matrices(spec, head.n), cfg.solver)
        solves += 1
        failed += 0 if inner.converged and inner.consistent else 1
        adversary = moments_from_marginals(template, head, inner.marginals.r, inner.marginals.Q).flat()
        for inst in group:
            if inst.y is None:
                raise DatasetError("instance has no gold labels")
            w = inst.weight / total_weight
            value += w * (inner.value - labeling_score(pots, inst.tree, inst.y))
            gap += w * (adversary - instance_moments(template, inst).flat())
    value += 0.5 * cfg.lam * float(theta @ theta)
    return ObjectiveEvaluation(value=float(value), gradient=gap + cfg.lam * theta, moment_gap=gap,
                               converged=failed == 0, failed_solves=failed, total_solves=solves)


def agm_objective(params, template, dataset, spec, cfg=None):
    """
    Weighted average inner saddle value minus the gold scores plus (lam / 2) ||theta||^2.

    Parameters:
    params (ModelParams): Parameters to evaluate.
    template (FeatureTemplate): Feature layout.
    dataset (sequence of Instance): Labeled instances.
    spec (LossSpec): Loss metric.
    cfg (TrainConfig, optional): lam and inner solver settings.

    Returns:
    float: The objective value.
    """
    result = evaluate_objective(params, template, dataset, spec, cfg)
    if not result.converged:
        logger.warning("%d of %d inner solves did not converge while evaluating the objective",
                       result.failed_solves, result.total_solves)
    return result.value


def step_size(cfg, t):
    """eta_t = step0 / sqrt(1 + decay t), capped at 1 / lam when lam > 0."""
    eta = cfg.step0 / math.sqrt(1.0 + cfg.decay * t)
    if cfg.lam > 0:
        eta = min(eta, 1.0 / cfg.lam)
    return eta


def train_agm(dataset, template, spec, cfg=None, init=None):
    """
    Stochastic subgradient descent on the adversarial objective.

    Every epoch visits the instances in a seeded random order in minibatches of
    cfg.batch_size. The parameters returned are the average of the iterates over the
    last cfg.tail_fraction of all updates.

    Parameters:
    dataset (sequence of Instance): Labeled training instances.
    template (FeatureTemplate): Feature layout shared by all instances.
    spec (LossSpec): Loss metric of the adversarial game.
    cfg (TrainConfig, optional): Optimization settings.
    init (ModelParams, optional): Starting point (zeros by default).

    Returns:
    tuple: (ModelParams, TrainReport).

    Raises:
    DatasetError: If the dataset is empty or unlabeled.
    ConvergenceError: If more than cfg.max_failure_rate of the inner solves of an epoch fail.
    """
    cfg = cfg or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise DatasetError("cannot train on an empty dataset")
    for idx, inst in enumerate(dataset):
        if inst.y is None:
            raise DatasetError("training instance has no gold labels", instance=idx)

    theta = (init or ModelParams.zeros(template)).flat().copy()
    rng = make_rng(cfg.seed)
    batches_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total_updates = cfg.epochs * batches_per_epoch
    tail_start = min(int(math.floor(total_updates * (1.0 - cfg.tail_fraction))), total_updates - 1)
    tail_sum = np.zeros_like(theta)
    tail_count = 0
    gap_sum = np.zeros_like(theta)
    eta_sum = 0.0
    report = TrainReport()
    t = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_values = []
        failed = 0
        solves = 0
        for start in range(0, len(dataset), cfg.batch_size):
            tic = time.perf_counter()
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            result = evaluate_objective(ModelParams.from_flat(template, theta), template, batch, spec, cfg)
            eta = step_size(cfg, t)
            gap_sum += eta * result.moment_gap
            eta_sum += eta
            theta = theta - eta * result.gradient
            t += 1
            if t > tail_start:
                tail_sum += theta
                tail_count += 1
            epoch_values.append(result.value)
            failed += result.failed_solves
            solves += result.total_solves
            report.seconds_per_update.append(time.perf_counter() - tic)

        report.epoch_objectives.append(float(np.mean(epoch_values)))
        report.failed_solves += failed
        report.total_solves += solves
        logger.debug("epoch %d: objective %.6g, %d/%d inner solves unconverged",
                     epoch + 1, report.epoch_objectives[-1], failed, solves)
        if failed:
            report.converged = False
            logger.warning("epoch %d: %d of %d inner solves stopped at the iteration cap", epoch + 1, failed, solves)
        if solves and failed / solves > cfg.max_failure_rate:
            raise ConvergenceError(
                f"{failed} of {solves} inner solves failed in epoch {epoch + 1}",
                diagnostics={"epoch": epoch + 1, "failed": failed, "solves": solves,
                             "objectives": list(report.epoch_objectives)})

    params = ModelParams.from_flat(template, tail_sum / tail_count)
    averaged_gap = gap_sum / eta_sum
    report.node_violation = float(np.max(np.abs(averaged_gap[:template.node_size])))
    report.edge_violation = float(np.max(np.abs(averaged_gap[template.node_size:]))) \
        if template.edge_size else 0.0
    report.final_objective = evaluate_objective(params, template, dataset, spec, cfg).value
    logger.info("trained on %d instances in %d updates; final objective %.6g",
                len(dataset), report.updates, report.final_objective)
    return params, report
