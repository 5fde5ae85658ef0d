"""Adversarial shared-private multi-task learner for aggressive-language
detection trained jointly with sequence-to-sequence text normalization."""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
