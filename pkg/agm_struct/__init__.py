from agm_struct.config import (
    CrfConfig,
    ExperimentConfig,
    GeneratorConfig,
    LossSpec,
    PredictConfig,
    SolverConfig,
    SsvmConfig,
    TrainConfig,
)
from agm_struct.exceptions import (
    AgmError,
    ConfigError,
    ConvergenceError,
    DatasetError,
    FeatureShapeError,
    LossSpecError,
    NonFiniteInputError,
    OracleSizeError,
    SolverError,
    TransportError,
    TreeStructureError,
)
from agm_struct.graph import TreeGraph, build_tree, chain, star, topo_order
from agm_struct.losses import evaluate_loss, make_loss
from agm_struct.features import (
    Instance,
    ModelParams,
    assemble_potentials,
    empirical_moments,
    feature_template,
    make_instance,
)
from agm_struct.game_solver import dual_decomposition, exhaustive_joint_game, solve_inner, solve_inner_lp, solve_node_game
from agm_struct.transport import recover_pairwise
from agm_struct.learner import agm_objective, train_agm
from agm_struct.predictors import predict_map, predict_probabilistic, project_simplex
from agm_struct.baselines import crf_bayes_decode, crf_infer, train_crf, train_ssvm
from agm_struct.data import DatasetFile, bayes_risk, generate_synthetic, load_dataset, save_dataset
from agm_struct.experiment import cross_validate, run_experiment

__version__ = "0.1.0"
