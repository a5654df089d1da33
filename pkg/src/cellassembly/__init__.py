"""Cell-assembly detection with a binary latent noisy-OR model."""

from .errors import DataError, DimensionError, FormatError, GuardError
from .evaluation import match_assemblies, determine_members, crispness
from .inference import InferenceConfig, PriorKind, exhaustive_infer, greedy_infer
from .learning import LearnConfig, em_step, train
from .model import HEState, ModelParams, log_joint, log_likelihood
from .statistics import fit_hyperparams, moments, qq_report
from .synthesis import SynthHyperparams, generate_dataset, synthesize_gt

__version__ = "0.1.0"

__all__ = [
    "DataError", "DimensionError", "FormatError", "GuardError",
    "match_assemblies", "determine_members", "crispness",
    "InferenceConfig", "PriorKind", "exhaustive_infer", "greedy_infer",
    "LearnConfig", "em_step", "train",
    "HEState", "ModelParams", "log_joint", "log_likelihood",
    "fit_hyperparams", "moments", "qq_report",
    "SynthHyperparams", "generate_dataset", "synthesize_gt",
]
