"""Desk-scale simulation of cross-hospital federated seizure prediction.

The package covers the full loop: synthetic heterogeneous federations,
EEG-style staging and segmentation, privacy-preserving normalization via
pairwise zero-sum masking, synchronous federated training (plain, weighted,
and random-subset aggregation), and evaluation with pooled and macro views.
"""

from .data import ClientDataset, ClientSplit
from .engine import TrainConfig, run_training
from .errors import ConfigError, ProtocolError, SingleClassError, ZeroVarianceError
from .metrics import MetricsReport, evaluate_global
from .model import ModelConfig
from .pipeline import RawRecording, SeizureAnnotation, Stage, StagePolicy
from .securenorm import FixedPointCodec, GlobalStats, run_secure_standardization
from .synth import ClientProfile, FederationSpec, default_federation_spec, generate_federation

__version__ = "0.1.0"

__all__ = [
    "ClientDataset",
    "ClientSplit",
    "TrainConfig",
    "run_training",
    "ConfigError",
    "ProtocolError",
    "SingleClassError",
    "ZeroVarianceError",
    "MetricsReport",
    "evaluate_global",
    "ModelConfig",
    "RawRecording",
    "SeizureAnnotation",
    "Stage",
    "StagePolicy",
    "FixedPointCodec",
    "GlobalStats",
    "run_secure_standardization",
    "ClientProfile",
    "FederationSpec",
    "default_federation_spec",
    "generate_federation",
    "__version__",
]
