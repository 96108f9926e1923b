"""Medical-dialogue information extraction with expert BiLSTMs and
candidate-query attention: data model, training stack, and evaluation."""

from .layers import LayerDims, ParamStore
from .metrics import EvalReport, evaluate
from .model import EsalModel, ModelConfig
from .ontology import (
    Candidate,
    CandidatePair,
    CandidateSpace,
    Schema,
    build_space,
    load_mie_schema,
)
from .synthgen import GenConfig, generate, rule_oracle
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CandidatePair",
    "CandidateSpace",
    "EsalModel",
    "EvalReport",
    "GenConfig",
    "LayerDims",
    "ModelConfig",
    "ParamStore",
    "Schema",
    "TrainConfig",
    "TrainResult",
    "build_space",
    "evaluate",
    "generate",
    "load_mie_schema",
    "rule_oracle",
    "train",
    "__version__",
]
