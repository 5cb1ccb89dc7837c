"""
Experiment harness: random splits, cross-validation of lam, per-split evaluation of every
model on every loss metric, Wilcoxon signed-rank comparisons and report rendering.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from agm_struct.baselines import crf_bayes_decode, train_crf, train_ssvm
from agm_struct.config import PredictConfig
from agm_struct.exceptions import ConfigError, DatasetError
from agm_struct.features import FeatureTemplate, ModelParams
from agm_struct.helper_functions import derive_seed, make_rng
from agm_struct.learner import train_agm
from agm_struct.losses import evaluate_loss, loss_matrices
from agm_struct.model_io import SavedModel
from agm_struct.predictors import Prediction, predict_map, predict_probabilistic

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("split", "model", "metric", "instance", "weight", "loss")


@dataclass(frozen=True)
class FittedModel:
    """
    A trained model ready to decode.

    Attributes:
    kind (str): agm, crf, ssvm or oracle.
    template (FeatureTemplate): Feature layout.
    params (ModelParams or None): Parameters (None for the oracle).
    spec (LossSpec): The metric the model was fitted for.
    lam (float): Regularization used.
    decoder (str): "map" or "probabilistic" (AGM only).
    predict_cfg (PredictConfig): Settings of the probabilistic decoder.
    """
    kind: str
    template: FeatureTemplate
    params: Optional[ModelParams]
    spec: object
    lam: float
    decoder: str = "map"
    predict_cfg: PredictConfig = PredictConfig()

    def predict(self, instance):
        if self.kind == "oracle":
            if instance.y is None:
                raise DatasetError("the oracle model needs gold labels")
            return Prediction(labels=np.array(instance.y), distributions=None, score=0.0)
        if self.kind == "crf":
            return crf_bayes_decode(self, instance, self.spec)
        if self.kind == "agm" and self.decoder == "probabilistic":
            return predict_probabilistic(self.params, instance, self.template, self.spec, self.predict_cfg)
        return predict_map(self.params, instance, self.template)

    def to_saved(self):
        if self.kind == "oracle":
            raise ConfigError("the oracle model cannot be saved")
        return SavedModel(kind=self.kind, template=self.template, params=self.params, spec=self.spec, lam=self.lam)

    @classmethod
    def from_saved(cls, saved, decoder="map", predict_cfg=None):
        return cls(kind=saved.kind, template=saved.template, params=saved.params, spec=saved.spec,
                   lam=saved.lam, decoder=decoder, predict_cfg=predict_cfg or PredictConfig())


def prediction_loss(prediction, instance, spec):
    """
    Per-node average loss of a prediction: the task loss of labels, or the expected loss of
    per-node distributions against the gold labels.
    """
    if instance.y is None:
        raise DatasetError("cannot score an unlabeled instance")
    if prediction.labels is not None:
        return evaluate_loss(spec, prediction.labels, instance.y)
    losses = loss_matrices(spec, instance.n)
    columns = losses[np.arange(instance.n), :, np.asarray(instance.y) - 1]
    return float((prediction.distributions * columns).sum()) / instance.n


def fit_model(kind, train, spec, cfg, lam, seed=0):
    """
    Trains one model kind on a DatasetFile.

    Parameters:
    kind (str): agm, crf, ssvm or oracle.
    train (DatasetFile): Training data.
    spec (LossSpec): Metric the adversarial game and the SSVM margin use; CRF decodes for it.
    cfg (ExperimentConfig): Model settings.
    lam (float): Regularization overriding the configured one.
    seed (int): Seed for the stochastic trainers.

    Returns:
    FittedModel: The trained model.
    """
    template = train.template
    params = None
    if kind == "agm":
        params, report = train_agm(train.instances, template, spec,
                                   cfg.train.model_copy(update={"lam": lam, "seed": seed}))
        if not report.converged:
            logger.warning("AGM: %d of %d inner solves unconverged", report.failed_solves, report.total_solves)
    elif kind == "crf":
        params = train_crf(train.instances, template, cfg.crf.model_copy(update={"lam": lam})).params
    elif kind == "ssvm":
        params = train_ssvm(train.instances, template, spec,
                            cfg.ssvm.model_copy(update={"lam": lam, "seed": seed})).params
    elif kind != "oracle":
        raise ConfigError(f"unknown model kind {kind!r}")
    return FittedModel(kind=kind, template=template, params=params, spec=spec, lam=lam,
                       decoder=cfg.decoder, predict_cfg=cfg.predict)


def default_lam(kind, cfg):
    return {"agm": cfg.train.lam, "crf": cfg.crf.lam, "ssvm": cfg.ssvm.lam}.get(kind, 0.0)


def weighted_mean_loss(model, instances, spec):
    losses = np.array([prediction_loss(model.predict(inst), inst, spec) for inst in instances])
    weights = np.array([inst.weight for inst in instances])
    return float(losses @ weights / weights.sum())


#     Splits and cross-validation     #


def make_splits(n_instances, split, seed):
    """
    Random train/test partitions of range(n_instances).

    Parameters:
    n_instances (int): Dataset size (at least 2).
    split (SplitSpec): Train fraction and number of splits.
    seed (int): Root seed.

    Returns:
    list: (train indices, test indices) pairs, each sorted and disjoint.
    """
    if n_instances < 2:
        raise ConfigError("splitting needs at least two instances")
    n_train = min(max(int(round(split.train_fraction * n_instances)), 1), n_instances - 1)
    splits = []
    for s in range(split.n_splits):
        order = make_rng(seed, 1, s).permutation(n_instances)
        splits.append((np.sort(order[:n_train]), np.sort(order[n_train:])))
    return splits


@dataclass(frozen=True)
class CrossValidationResult:
    best_lam: float
    scores: Dict[float, float]


def cross_validate(data, model, spec, grid, cfg, seed=0):
    """
    Picks lam for one model and metric by k-fold cross-validation.

    Parameters:
    data (DatasetFile): Data to fold (the first split's training set in experiments).
    model (ModelSpec): The model to tune.
    spec (LossSpec): The metric to minimize.
    grid (list): Candidate lam values; the configured lam is used when empty.
    cfg (ExperimentConfig): Folds and model settings.
    seed (int): Seed of the fold assignment.

    Returns:
    CrossValidationResult: The lam with the smallest mean held-out loss (first one on ties) and all scores.
    """
    grid = list(grid) or [default_lam(model.kind, cfg)]
    if model.kind == "oracle" or len(grid) == 1:
        return CrossValidationResult(best_lam=float(grid[0]), scores={})
    folds = min(cfg.cv_folds, len(data))
    if folds < 2:
        raise ConfigError("cross-validation needs at least two instances")
    order = make_rng(seed, 2).permutation(len(data))
    assignment = np.array_split(order, folds)
    scores = {}
    for lam in grid:
        fold_losses = []
        for f in range(folds):
            held = np.sort(assignment[f])
            kept = np.sort(np.concatenate([assignment[g] for g in range(folds) if g != f]))
            fitted = fit_model(model.kind, data.subset(kept), spec, cfg, lam, seed=derive_seed(seed, 3, f))
            fold_losses.append(weighted_mean_loss(fitted, data.subset(held).instances, spec))
        scores[float(lam)] = float(np.mean(fold_losses))
        logger.debug("cross-validation %s / %s: lam=%g loss=%.6g", model.name, spec.label(), lam, scores[float(lam)])
    best = min(scores, key=lambda lam: (scores[lam], grid.index(lam)))
    return CrossValidationResult(best_lam=best, scores=scores)


################################


#     Experiment     #


@dataclass(frozen=True)
class LogRow:
    split: int
    model: str
    metric: str
    instance: int
    weight: float
    loss: float


@dataclass
class ExperimentReport:
    rows: List[LogRow]
    table: str
    summary_tsv: str
    log_tsv: str
    lambdas: Dict = field(default_factory=dict)
    bayes: Dict = field(default_factory=dict)


def _run_job(job):
    split_idx, model_idx, model, metric, data, train_idx, test_idx, cfg, lam = job
    fitted = fit_model(model.kind, data.subset(train_idx), metric, cfg, lam,
                       seed=derive_seed(cfg.seed, 4, split_idx, model_idx))
    rows = []
    for idx in test_idx:
        inst = data.instances[idx]
        rows.append(LogRow(split=split_idx, model=model.name, metric=metric.label(), instance=int(idx),
                           weight=inst.weight, loss=prediction_loss(fitted.predict(inst), inst, metric)))
    return rows


def _check_experiment(cfg, data):
    if len(data) == 0:
        raise DatasetError("experiment dataset is empty")
    for idx, inst in enumerate(data.instances):
        if inst.y is None:
            raise DatasetError("experiment instances must be labeled", instance=idx)
    for metric in cfg.metrics:
        if metric.k != data.k:
            raise ConfigError(f"metric {metric.label()!r} has k={metric.k} but the dataset has k={data.k}")
    labels = [metric.label() for metric in cfg.metrics]
    if len(set(labels)) != len(labels):
        raise ConfigError("metric labels must be unique; set LossSpec.name to disambiguate")


def run_experiment(cfg, data, bayes=None):
    """
    Trains and evaluates every configured model on every metric over random splits.

    lam is chosen per model and metric by cross-validation on the first split's training set
    and reused on every split. Jobs run in a process pool when cfg.workers > 1; results are
    assembled in a fixed order.

    Parameters:
    cfg (ExperimentConfig): The experiment.
    data (DatasetFile): Labeled data.
    bayes (dict, optional): Metric label to Bayes risk, added as an extra column.

    Returns:
    ExperimentReport: Per-instance rows, the text table and the machine-readable files.

    Raises:
    ConfigError: If the config does not fit the data.
    DatasetError: If the data is empty or unlabeled.
    """
    _check_experiment(cfg, data)
    splits = make_splits(len(data), cfg.split, cfg.seed)
    first_train = data.subset(splits[0][0])
    lambdas = {}
    for model in cfg.models:
        for metric in cfg.metrics:
            result = cross_validate(first_train, model, metric, cfg.lambda_grid, cfg, seed=derive_seed(cfg.seed, 5))
            lambdas[(model.name, metric.label())] = result.best_lam

    jobs = [(s, m, model, metric, data, train_idx, test_idx, cfg, lambdas[(model.name, metric.label())])
            for s, (train_idx, test_idx) in enumerate(splits)
            for m, model in enumerate(cfg.models)
            for metric in cfg.metrics]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            results = list(executor.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]
    rows = [row for chunk in results for row in chunk]
    logger.info("experiment finished: %d splits, %d models, %d metrics", len(splits), len(cfg.models), len(cfg.metrics))
    return build_report(rows, cfg.alpha, lambdas=lambdas, bayes=bayes)


#     Reports     #


def _ordered(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def split_losses(rows):
    """
    Weighted mean loss per (metric, model) and split, recomputed from per-instance rows.

    Returns:
    dict: (metric, model) -> list of split means ordered by split index.
    """
    sums = {}
    for row in rows:
        key = (row.metric, row.model)
        acc = sums.setdefault(key, {}).setdefault(row.split, [0.0, 0.0])
        acc[0] += row.weight * row.loss
        acc[1] += row.weight
    return {key: [per[s][0] / per[s][1] for s in sorted(per)] for key, per in sums.items()}


def wilcoxon_pvalue(a, b):
    """Two-sided Wilcoxon signed-rank p-value of paired losses; 1.0 when every difference is zero."""
    diff = np.asarray(a) - np.asarray(b)
    if np.all(diff == 0):
        return 1.0
    try:
        return float(stats.wilcoxon(a, b).pvalue)
    except ValueError:
        return 1.0


def best_marks(per_split, models, alpha):
    """
    Marks the models whose split losses are the lowest on average or not significantly worse
    than the best one.
    """
    means = {m: float(np.mean(per_split[m])) for m in models}
    best = min(models, key=lambda m: (means[m], models.index(m)))
    return {m: m == best or wilcoxon_pvalue(per_split[m], per_split[best]) >= alpha for m in models}


def render_table(per_split, metrics, models, alpha, bayes=None):
    """
    Aligned text table: rows are metrics, columns models, cells split-averaged losses with '*'
    on the best model and on models not significantly worse (Wilcoxon signed-rank).
    """
    header = ["metric"] + list(models) + (["Bayes"] if bayes else [])
    body = []
    for metric in metrics:
        marks = best_marks({m: per_split[(metric, m)] for m in models}, models, alpha)
        cells = [metric]
        for m in models:
            cells.append(f"{np.mean(per_split[(metric, m)]):.4f}" + ("*" if marks[m] else ""))
        if bayes:
            cells.append(f"{bayes[metric]:.4f}" if metric in bayes else "-")
        body.append(cells)
    widths = [max(len(row[c]) for row in [header] + body) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip() for row in [header] + body]
    lines.append(f"* best or not significantly worse than the best (Wilcoxon signed-rank, alpha={alpha:g})")
    return "\n".join(lines) + "\n"


def render_log(rows):
    lines = ["\t".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(f"{row.split}\t{row.model}\t{row.metric}\t{row.instance}\t{row.weight!r}\t{row.loss!r}")
    return "\n".join(lines) + "\n"


def render_summary(per_split, metrics, models):
    lines = ["metric\tmodel\tsplit\tloss"]
    for metric in metrics:
        for m in models:
            for s, value in enumerate(per_split[(metric, m)]):
                lines.append(f"{metric}\t{m}\t{s}\t{value!r}")
    return "\n".join(lines) + "\n"


def build_report(rows, alpha, lambdas=None, bayes=None):
    """Renders the table, the split summary and the per-instance log from rows alone."""
    metrics = _ordered(row.metric for row in rows)
    models = _ordered(row.model for row in rows)
    per_split = split_losses(rows)
    return ExperimentReport(rows=list(rows), table=render_table(per_split, metrics, models, alpha, bayes),
                            summary_tsv=render_summary(per_split, metrics, models), log_tsv=render_log(rows),
                            lambdas=dict(lambdas or {}), bayes=dict(bayes or {}))


def parse_log(text):
    """
    Reads a per-instance log written by render_log.

    Raises:
    DatasetError: On a bad header or malformed rows.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or tuple(lines[0].split("\t")) != LOG_COLUMNS:
        raise DatasetError("log must start with the header " + "\t".join(LOG_COLUMNS), line=1)
    rows = []
    for no, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(LOG_COLUMNS):
            raise DatasetError(f"expected {len(LOG_COLUMNS)} columns, got {len(parts)}", line=no)
        try:
            rows.append(LogRow(split=int(parts[0]), model=parts[1], metric=parts[2], instance=int(parts[3]),
                               weight=float(parts[4]), loss=float(parts[5])))
        except ValueError as e:
            raise DatasetError(f"malformed log row: {e}", line=no) from None
    return rows


def write_report(report, out_dir):
    """Writes table.txt, summary.tsv, log.tsv and lambdas.tsv into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(report.table, encoding="utf-8")
    (out / "summary.tsv").write_text(report.summary_tsv, encoding="utf-8")
    (out / "log.tsv").write_text(report.log_tsv, encoding="utf-8")
    lines = ["model\tmetric\tlam"] + [f"{model}\t{metric}\t{lam!r}" for (model, metric), lam in report.lambdas.items()]
    (out / "lambdas.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("report written to %s", out)
