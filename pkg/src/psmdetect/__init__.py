"""Detect pathogenic social-media users from retweet cascades.

Prima-facie causality scores computed over sliding, exponentially decayed
windows feed a semi-supervised Laplacian SVM.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .action_log import ActionRecord, Cascade, CorpusIndex, build_index, load_action_log
from .causal_metrics import CausalityProfile, profile_users
from .lapsvm import GraphSpec, KernelSpec, LapSvmModel, TrainSet, train
from .synth import SynthConfig, generate
from .timedecay import DecayConfig, FeatureVector, extract_features

__all__ = [
    "BACKEND",
    "ActionRecord",
    "Cascade",
    "CorpusIndex",
    "build_index",
    "load_action_log",
    "CausalityProfile",
    "profile_users",
    "GraphSpec",
    "KernelSpec",
    "LapSvmModel",
    "TrainSet",
    "train",
    "SynthConfig",
    "generate",
    "DecayConfig",
    "FeatureVector",
    "extract_features",
]
