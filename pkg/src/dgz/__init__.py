"""Deconstructed generation-based zero-shot learning.

Losses, gradient analyses, pseudo-unseen distribution builders, metrics and
training pipelines for generalized zero-shot learning, built on a small
numpy autodiff core.
"""

__version__ = "0.1.0"
