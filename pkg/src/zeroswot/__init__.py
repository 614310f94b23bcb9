"""Desk-scale zero-shot speech translation.

A speech encoder is aligned onto a frozen text encoder by compressing
CTC character runs into subword-level states and minimizing an entropic
optimal-transport distance between the two representation spaces; the
aligned encoder then drives the text model's decoder without ever seeing
a translation during training.
"""

__version__ = "0.1.0"

from .autodiff import Parameter, Tensor, no_grad
from .encoder import ModelConfig
from .ot import OtConfig
from .vocab import LetterVocab, SubwordVocab

__all__ = ["Parameter", "Tensor", "no_grad", "ModelConfig", "OtConfig",
           "LetterVocab", "SubwordVocab", "__version__"]
