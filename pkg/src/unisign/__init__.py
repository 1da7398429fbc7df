"""Unified sign-language understanding toolkit.

Pose and RGB feature extraction, prior-guided multimodal fusion,
score-aware frame sampling, and one generative objective shared by
pre-training and every downstream task (isolated recognition, continuous
recognition, translation), plus corpus curation and evaluation metrics.
"""

__version__ = "0.1.0"
