"""Score-aware frame sampling keyed to low-confidence hand keypoints.

A frame's reliability is the mean confidence of that hand's 21 keypoints;
frames are drawn with probability proportional to 1 - reliability, so the
RGB branch spends its budget where keypoints are least trustworthy. Draws
are with replacement (k = floor(T * p_samp)); duplicates are collapsed by
default since repeated fusion writes to one frame are redundant.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch

from .errors import IndexOutOfRangeError
from .pose import GROUP_LH, GROUP_RH, GroupedPose


@dataclass
class SamplerConfig:
    p_samp: float = 0.10
    seed: int = 0
    dedupe: bool = True

    def __post_init__(self):
        if not (0.0 <= self.p_samp <= 1.0):
            raise ValueError(f"p_samp must lie in [0, 1], got {self.p_samp}")


def stream_seed(base_seed: int, clip_id: str, epoch: int = 0, hand: str = "") -> int:
    """Stable per-clip seed so sampling is independent of worker scheduling."""
    digest = hashlib.sha256(f"{base_seed}|{clip_id}|{epoch}|{hand}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def reliability_scores(grouped: GroupedPose, hand: str) -> np.ndarray:
    """Per-frame mean confidence of one hand's keypoints."""
    if hand not in (GROUP_LH, GROUP_RH):
        raise ValueError(f"hand must be 'lh' or 'rh', got {hand!r}")
    return grouped.confidences[hand].mean(axis=1)


def sampling_weights(grouped: GroupedPose, hand: str) -> np.ndarray:
    return 1.0 - reliability_scores(grouped, hand)


def sample_frames(weights: Sequence[float], cfg: SamplerConfig) -> List[int]:
    """Draw floor(T * p_samp) indices proportionally to `weights`.

    All-zero weights (a perfectly confident clip) fall back to uniform
    sampling so the RGB branch still gets exercised. The result is sorted
    ascending; with dedupe enabled duplicates collapse, so its length may
    be below k.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a non-empty 1-D sequence")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    t = w.size
    k = int(t * cfg.p_samp)
    if k == 0:
        return []
    total = w.sum()
    probs = np.full(t, 1.0 / t) if total == 0 else w / total
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    drawn = rng.choice(t, size=k, replace=True, p=probs)
    if cfg.dedupe:
        return sorted(set(int(i) for i in drawn))
    return sorted(int(i) for i in drawn)


def scatter_fused(
    features: torch.Tensor, fused: torch.Tensor, indices: Sequence[int]
) -> torch.Tensor:
    """Write fused rows back at the sampled indices; other frames untouched."""
    out = features.clone()
    if len(indices) == 0:
        return out
    idx = torch.as_tensor(list(indices), dtype=torch.long)
    if idx.min() < 0 or idx.max() >= features.shape[0]:
        raise IndexOutOfRangeError(
            f"scatter indices outside [0, {features.shape[0]})"
        )
    if fused.shape[0] != len(indices):
        raise ValueError(
            f"got {fused.shape[0]} fused rows for {len(indices)} indices"
        )
    out[idx] = fused.to(out.dtype)
    return out
