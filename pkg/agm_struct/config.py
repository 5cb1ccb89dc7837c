"""
Configuration schemas.

Every knob of the library is a frozen pydantic model so that experiment files can be
validated once at the boundary and passed around safely.
"""
import json
import logging
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from agm_struct.exceptions import ConfigError

logger = logging.getLogger(__name__)


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class LossSpec(_Frozen):
    """
    Description of an additive per-node loss metric.

    Attributes:
    kind (str): One of zero_one, absolute, squared, cost_sensitive.
    k (int): Number of labels.
    node_weights (tuple, optional): Explicit positive weight per node (1-based node i uses entry i-1).
    position_weighted (bool): Weight node i of an n-node instance by 2i/(n+1) when no explicit weights are given.
    custom (tuple, optional): Explicit k-by-k table, cost_sensitive only.
    name (str, optional): Label used in report tables.
    """
    kind: str = "zero_one"
    k: int = Field(default=2, ge=2)
    node_weights: Optional[Tuple[float, ...]] = None
    position_weighted: bool = False
    custom: Optional[Tuple[Tuple[float, ...], ...]] = None
    name: Optional[str] = None

    def label(self):
        if self.name:
            return self.name
        suffix = ", weighted" if (self.position_weighted or self.node_weights) else ", unweighted"
        return self.kind.replace("_", "-") + suffix

    def digest_source(self):
        """Canonical JSON used to hash the spec into model files."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


class SolverConfig(_Frozen):
    """
    Inner maximin solver settings (dual decomposition, transport recovery and node games).
    """
    method: Literal["dual_decomposition", "lp"] = "dual_decomposition"
    max_iters: int = Field(default=200, ge=1)
    gap_tol: float = Field(default=1e-4, ge=0.0)
    step_rule: Literal["sqrt", "polyak"] = "sqrt"
    step0: float = Field(default=1.0, gt=0.0)
    patience: int = Field(default=10, ge=1)
    primal_every: int = Field(default=10, ge=1)
    transport: Literal["sinkhorn", "exact"] = "sinkhorn"
    sinkhorn_eps: Optional[float] = Field(default=None, gt=0.0)
    sinkhorn_eps_scale: float = Field(default=1e-2, gt=0.0)
    sinkhorn_max_iters: int = Field(default=5000, ge=1)
    sinkhorn_tol: float = Field(default=1e-6, gt=0.0)
    tie_tol: float = Field(default=1e-12, ge=0.0)
    consistency_tol: float = Field(default=1e-4, gt=0.0)
    zero_one_fast_path: bool = True


class PredictConfig(_Frozen):
    """
    Settings of the probabilistic (saddle point) predictor.
    """
    method: Literal["subgradient", "lp"] = "subgradient"
    max_iters: int = Field(default=2000, ge=1)
    tol: float = Field(default=1e-3, ge=0.0)
    step0: float = Field(default=0.5, gt=0.0)
    check_every: int = Field(default=10, ge=1)


class TrainConfig(_Frozen):
    """
    Outer stochastic subgradient settings for the adversarial model.
    """
    lam: float = Field(default=1e-2, ge=0.0)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=1, ge=1)
    step0: float = Field(default=0.1, gt=0.0)
    decay: float = Field(default=1.0, ge=0.0)
    tail_fraction: float = Field(default=0.25, gt=0.0, le=1.0)
    max_failure_rate: float = Field(default=0.5, ge=0.0, le=1.0)
    solver: SolverConfig = SolverConfig()
    seed: int = 0


class CrfConfig(_Frozen):
    lam: float = Field(default=1e-2, ge=0.0)
    max_iters: int = Field(default=2000, ge=1)
    grad_tol: float = Field(default=1e-5, gt=0.0)
    step0: float = Field(default=1.0, gt=0.0)


class SsvmConfig(_Frozen):
    lam: float = Field(default=1e-2, ge=0.0)
    epochs: int = Field(default=20, ge=1)
    step0: float = Field(default=0.1, gt=0.0)
    decay: float = Field(default=1.0, ge=0.0)
    tail_fraction: float = Field(default=0.25, gt=0.0, le=1.0)
    seed: int = 0


class GeneratorConfig(_Frozen):
    """
    Hidden ordinal chain generator.

    Attributes:
    k (int): Number of ordinal labels.
    symbols (int): Number of discrete emission symbols (at least k).
    n_instances (int): Number of sequences to draw.
    min_length (int), max_length (int): Sequence length range (inclusive).
    stay_prob (float): Probability of keeping the current label.
    advance_prob (float): Probability of moving one label up (kept when already at the top label).
    emission_accuracy (float): Probability that the emitted symbol equals the label index.
    label_noise (float): Probability that an observed gold label is replaced by a uniform draw.
    position_features (bool): Append a node-identity one-hot to every node feature row.
    edge_identity (bool): Give every edge a one-hot edge-position input.
    seed (int): Seed of the generator.
    """
    k: int = Field(default=3, ge=2)
    symbols: Optional[int] = Field(default=None, ge=2)
    n_instances: int = Field(default=100, ge=1)
    min_length: int = Field(default=3, ge=1)
    max_length: int = Field(default=6, ge=1)
    stay_prob: float = Field(default=0.6, ge=0.0, le=1.0)
    advance_prob: float = Field(default=0.3, ge=0.0, le=1.0)
    emission_accuracy: float = Field(default=0.8, ge=0.0, le=1.0)
    label_noise: float = Field(default=0.0, ge=0.0, le=1.0)
    position_features: bool = False
    edge_identity: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.max_length < self.min_length:
            raise ValueError("max_length must be >= min_length")
        if self.stay_prob + self.advance_prob > 1.0 + 1e-12:
            raise ValueError("stay_prob + advance_prob must not exceed 1")
        if self.symbols is not None and self.symbols < self.k:
            raise ValueError("symbols must be >= k")
        if (self.position_features or self.edge_identity) and self.min_length != self.max_length:
            raise ValueError("identity features need a fixed sequence length")
        return self

    @property
    def num_symbols(self):
        return self.symbols if self.symbols is not None else self.k


class SplitSpec(_Frozen):
    train_fraction: float = Field(default=0.7, gt=0.0, lt=1.0)
    n_splits: int = Field(default=5, ge=1)


class ModelSpec(_Frozen):
    name: str
    kind: Literal["agm", "crf", "ssvm", "oracle"]


class ExperimentConfig(_Frozen):
    """
    Full description of a train/evaluate/compare experiment.
    """
    metrics: List[LossSpec]
    models: List[ModelSpec] = [
        ModelSpec(name="AGM", kind="agm"),
        ModelSpec(name="CRF", kind="crf"),
        ModelSpec(name="SSVM", kind="ssvm"),
    ]
    train: TrainConfig = TrainConfig()
    crf: CrfConfig = CrfConfig()
    ssvm: SsvmConfig = SsvmConfig()
    predict: PredictConfig = PredictConfig()
    decoder: Literal["map", "probabilistic"] = "map"
    split: SplitSpec = SplitSpec()
    lambda_grid: List[float] = []
    cv_folds: int = Field(default=3, ge=2)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_models(self):
        if not self.metrics:
            raise ValueError("at least one loss metric is required")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")
        if not self.models:
            raise ValueError("at least one model is required")
        if any(lam < 0 for lam in self.lambda_grid):
            raise ValueError("lambda grid values must be >= 0")
        return self


def load_experiment_config(text):
    """
    Parses and validates an experiment configuration from JSON text.

    Parameters:
    text (str): JSON document.

    Returns:
    ExperimentConfig: The validated configuration.

    Raises:
    ConfigError: If the document is not valid JSON or violates the schema.
    """
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e}") from e


def load_model(model_cls, data):
    """Validates a plain dict into ``model_cls``, mapping schema errors to ConfigError."""
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model_cls.__name__}: {e}") from e
