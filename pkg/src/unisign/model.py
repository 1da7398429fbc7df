"""End-to-end network: grouped pose in, per-frame sign features out, and the
generative head on top.

Stage 1 trains the pose-only path. Stage 2 adds the RGB branch: per hand,
frames are drawn by the score-aware sampler, cropped, encoded, fused into
the spatial pose features by the prior-guided fusion module, and scattered
back before the temporal encoders run. With a sampling fraction of zero the
two paths produce identical tensors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .encoders import (
    EncoderConfig,
    PoseGroupEncoder,
    TemporalGroupEncoder,
    aggregate_sign,
)
from .fusion import FusionConfig, PriorGuidedFusion, crop_relative_coords
from .lm import LMConfig, SeqToSeqLM, TinySeq2SeqLM, Tokenizer
from .pose import GROUP_LH, GROUP_ORDER, GROUP_RH, GroupedPose
from .sampler import SamplerConfig, sample_frames, sampling_weights, scatter_fused, stream_seed
from .vision import TinyConvEncoder, crop_hands, encode_crops

logger = logging.getLogger(__name__)

MAX_CLIP_FRAMES = 512

# frames a clip provides to the RGB branch: a list of images or a callable
# returning one (so media decoding can stay lazy)
FrameProvider = Callable[[], Sequence[np.ndarray]]


@dataclass
class Clip:
    """One training/evaluation item after pose preprocessing."""

    grouped: GroupedPose
    target_text: str
    clip_id: str
    frames: Optional[object] = None  # Sequence[np.ndarray] | FrameProvider
    label: Optional[str] = None

    def get_frames(self) -> Optional[Sequence[np.ndarray]]:
        if callable(self.frames):
            return self.frames()
        return self.frames


class UniSignModel(nn.Module):
    """Grouped pose encoders + optional RGB fusion + seq2seq head."""

    def __init__(
        self,
        node_counts: Dict[str, int],
        encoder_cfg: EncoderConfig,
        lm: SeqToSeqLM,
        fusion_cfg: Optional[FusionConfig] = None,
        with_vision: bool = False,
        sampler_cfg: Optional[SamplerConfig] = None,
    ):
        super().__init__()
        self.encoder_cfg = encoder_cfg
        self.sampler_cfg = sampler_cfg or SamplerConfig()
        self.with_vision = with_vision
        self.pose_encoders = nn.ModuleDict(
            {
                gid: PoseGroupEncoder(node_counts[gid], encoder_cfg, encoder_cfg.edges_for(gid))
                for gid in GROUP_ORDER
            }
        )
        self.temporal_encoders = nn.ModuleDict(
            {
                gid: TemporalGroupEncoder(node_counts[gid], encoder_cfg, encoder_cfg.edges_for(gid))
                for gid in GROUP_ORDER
            }
        )
        self.lm = lm
        self.projection = nn.Linear(encoder_cfg.sign_dim, lm.hidden_dim)
        if with_vision:
            self.fusion_cfg = fusion_cfg or FusionConfig(channels=encoder_cfg.feature_dim)
            self.vision_encoder = TinyConvEncoder(out_channels=encoder_cfg.feature_dim)
            self.fusion = nn.ModuleDict(
                {gid: PriorGuidedFusion(self.fusion_cfg) for gid in (GROUP_LH, GROUP_RH)}
            )

    # -- single clip --------------------------------------------------------

    def group_input(self, grouped: GroupedPose, gid: str) -> np.ndarray:
        coords = grouped.coords[gid]
        if not self.encoder_cfg.use_confidence:
            return coords
        return np.concatenate([coords, grouped.confidences[gid][..., None]], axis=-1)

    def spatial_features(self, grouped: GroupedPose) -> Dict[str, torch.Tensor]:
        dtype = next(self.parameters()).dtype
        device = next(self.parameters()).device
        return {
            gid: self.pose_encoders[gid](
                torch.as_tensor(self.group_input(grouped, gid), dtype=dtype, device=device)
            )
            for gid in GROUP_ORDER
        }

    def fuse_hand(
        self,
        feats: torch.Tensor,
        grouped: GroupedPose,
        frames: Sequence[np.ndarray],
        hand: str,
        indices: Sequence[int],
    ) -> torch.Tensor:
        """Fuse RGB information into one hand's features at sampled frames."""
        if not indices:
            return feats
        crops = crop_hands(frames, grouped, indices, hands=(hand,))
        vision = encode_crops(crops, self.vision_encoder)[hand]
        dtype, device = feats.dtype, feats.device
        coords = torch.stack(
            [
                crop_relative_coords(
                    torch.as_tensor(grouped.raw_coords[hand][i], dtype=dtype, device=device),
                    box,
                )
                for i, box in zip(indices, vision.crop_boxes)
            ]
        )
        pose_rows = feats[list(indices)]
        fused, _ = self.fusion[hand](pose_rows, vision.features.to(dtype), coords)
        return scatter_fused(feats, fused, list(indices))

    def hand_sample_indices(
        self, grouped: GroupedPose, hand: str, epoch: Optional[int]
    ) -> List[int]:
        """Score-aware indices for one hand; `epoch=None` means evaluation,
        which pins the stream so repeated runs sample identically."""
        weights = sampling_weights(grouped, hand)
        cfg = SamplerConfig(
            p_samp=self.sampler_cfg.p_samp,
            seed=stream_seed(
                self.sampler_cfg.seed,
                grouped.clip_id,
                epoch if epoch is not None else -1,
                hand,
            ),
            dedupe=self.sampler_cfg.dedupe,
        )
        return sample_frames(weights, cfg)

    def sign_features(
        self,
        grouped: GroupedPose,
        frames: Optional[Sequence[np.ndarray]] = None,
        epoch: Optional[int] = None,
    ) -> torch.Tensor:
        """Per-frame sign representation (T x 4C) for one clip."""
        feats = self.spatial_features(grouped)
        if self.with_vision and frames is not None and self.sampler_cfg.p_samp > 0:
            for hand in (GROUP_LH, GROUP_RH):
                idx = self.hand_sample_indices(grouped, hand, epoch)
                feats[hand] = self.fuse_hand(feats[hand], grouped, frames, hand, idx)
        temporal = {gid: self.temporal_encoders[gid](feats[gid]) for gid in GROUP_ORDER}
        return aggregate_sign(temporal)

    # -- batched ------------------------------------------------------------

    def encode_clips(
        self, clips: Sequence[Clip], epoch: Optional[int] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Batch clips to (B x Tmax x 4C sign features, B x Tmax pad mask).

        The mask is True at padded frames, matching the attention convention
        of the language model.
        """
        dtype = next(self.parameters()).dtype
        device = next(self.parameters()).device
        lengths = [clip.grouped.num_frames for clip in clips]
        t_max = max(lengths)
        in_ch = 3 if self.encoder_cfg.use_confidence else 2
        per_group: Dict[str, torch.Tensor] = {}
        for gid in GROUP_ORDER:
            n = clips[0].grouped.node_count(gid)
            batch = torch.zeros(len(clips), t_max, n, in_ch, dtype=dtype, device=device)
            for b, clip in enumerate(clips):
                batch[b, : lengths[b]] = torch.as_tensor(
                    self.group_input(clip.grouped, gid), dtype=dtype, device=device
                )
            per_group[gid] = self.pose_encoders[gid](batch)
        if self.with_vision and self.sampler_cfg.p_samp > 0:
            for b, clip in enumerate(clips):
                frames = clip.get_frames()
                if frames is None:
                    continue
                for hand in (GROUP_LH, GROUP_RH):
                    idx = self.hand_sample_indices(clip.grouped, hand, epoch)
                    fused = self.fuse_hand(
                        per_group[hand][b, : lengths[b]], clip.grouped, frames, hand, idx
                    )
                    per_group[hand] = per_group[hand].clone()
                    per_group[hand][b, : lengths[b]] = fused
        temporal = {
            gid: self.temporal_encoders[gid](per_group[gid]) for gid in GROUP_ORDER
        }
        sign = aggregate_sign(temporal)
        mask = torch.ones(len(clips), t_max, dtype=torch.bool, device=device)
        for b, t in enumerate(lengths):
            mask[b, :t] = False
        sign = sign * (~mask).unsqueeze(-1).to(dtype)
        return sign, mask

    def embeddings(self, sign: torch.Tensor) -> torch.Tensor:
        return self.projection(sign)


def truncate_clip(grouped: GroupedPose, max_frames: int = MAX_CLIP_FRAMES) -> GroupedPose:
    """Center-truncate an over-length clip, keeping the middle window."""
    t = grouped.num_frames
    if t <= max_frames:
        return grouped
    start = (t - max_frames) // 2
    logger.warning(
        "clip %s has %d frames; center-truncating to %d", grouped.clip_id, t, max_frames
    )
    sl = slice(start, start + max_frames)
    return GroupedPose(
        coords={g: v[sl] for g, v in grouped.coords.items()},
        confidences={g: v[sl] for g, v in grouped.confidences.items()},
        raw_coords={g: v[sl] for g, v in grouped.raw_coords.items()},
        clip_id=grouped.clip_id,
        frame_rate=grouped.frame_rate,
    )


def build_model(
    node_counts: Dict[str, int],
    encoder_cfg: EncoderConfig,
    tokenizer: Tokenizer,
    lm_cfg: Optional[LMConfig] = None,
    fusion_cfg: Optional[FusionConfig] = None,
    with_vision: bool = False,
    sampler_cfg: Optional[SamplerConfig] = None,
) -> UniSignModel:
    lm = TinySeq2SeqLM(
        tokenizer.vocab_size,
        lm_cfg or LMConfig(),
        bos_id=tokenizer.bos_id,
        eos_id=tokenizer.eos_id,
        pad_id=tokenizer.pad_id,
    )
    return UniSignModel(
        node_counts=node_counts,
        encoder_cfg=encoder_cfg,
        lm=lm,
        fusion_cfg=fusion_cfg,
        with_vision=with_vision,
        sampler_cfg=sampler_cfg,
    )
