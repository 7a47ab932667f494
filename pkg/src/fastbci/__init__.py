"""Fast-adaptability evaluation for EEG motor-imagery classifiers."""

__version__ = "0.1.0"

from .autograd import Tensor, set_debug_checks
from .model import ClassifierSpec, NormKind, build_classifier, forward_logits
from .params import ParamSet, params_equal
from .evaluate import FinetuneSpec, evaluate_fast_adaptability, finetune_and_track
from .training import MetaConfig, TransferConfig, maml_pretrain, transfer_pretrain

__all__ = [
    "Tensor", "ParamSet", "params_equal", "set_debug_checks",
    "ClassifierSpec", "NormKind", "build_classifier", "forward_logits",
    "FinetuneSpec", "evaluate_fast_adaptability", "finetune_and_track",
    "MetaConfig", "TransferConfig", "maml_pretrain", "transfer_pretrain",
    "__version__",
]
