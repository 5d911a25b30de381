__version__ = "0.1.0"

from .datasets import gen_lorenz, gen_perfect_metric_dataset, gen_step_regimes, gen_thomas, load_csv, load_dataset
from .engine import AbimcaEngine, SubseqRegistry, predict_offline, process_window, run_online
from .errors import (
    AbimcaError,
    ConfigurationError,
    GenerationError,
    InvalidArgumentError,
    ParseError,
    TrainingError,
)
from .geometry import CurveParams, curve_params, frenet_frame
from .metrics import MetricReport, mt3scm
from .options import AbimcaConfig, Algorithm, KMeansConfig, TrainConfig
from .series import LabelArray, TimeSeries

__all__ = [
    "AbimcaConfig",
    "AbimcaEngine",
    "AbimcaError",
    "Algorithm",
    "ConfigurationError",
    "CurveParams",
    "GenerationError",
    "InvalidArgumentError",
    "KMeansConfig",
    "LabelArray",
    "MetricReport",
    "ParseError",
    "SubseqRegistry",
    "TimeSeries",
    "TrainConfig",
    "TrainingError",
    "curve_params",
    "frenet_frame",
    "gen_lorenz",
    "gen_perfect_metric_dataset",
    "gen_step_regimes",
    "gen_thomas",
    "load_csv",
    "load_dataset",
    "mt3scm",
    "predict_offline",
    "process_window",
    "run_online",
]
