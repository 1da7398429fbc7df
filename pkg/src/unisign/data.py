"""Manifest-to-model plumbing: turn clip records into encoder-ready clips."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence

from .curation import ClipRecord
from .model import MAX_CLIP_FRAMES, Clip, truncate_clip
from .pose import group_and_normalize, load_pose_sequence
from .trainer import build_target
from .vision import load_frames

logger = logging.getLogger(__name__)


def _resolve(path: str, root: Optional[str]) -> str:
    p = Path(path)
    if root and not p.is_absolute():
        return str(Path(root) / p)
    return str(p)


def prepare_clips(
    records: Sequence[ClipRecord],
    task: str,
    keypoint_root: Optional[str] = None,
    media_root: Optional[str] = None,
    coord_scale: Optional[float] = None,
    with_frames: bool = False,
    max_frames: int = MAX_CLIP_FRAMES,
) -> List[Clip]:
    """Load keypoints, normalize, cap length, and bind supervision targets."""
    clips: List[Clip] = []
    for rec in records:
        seq = load_pose_sequence(
            _resolve(rec.keypoint_path, keypoint_root), clip_id=rec.clip_id
        )
        grouped = group_and_normalize(seq, coord_scale=coord_scale)
        grouped = truncate_clip(grouped, max_frames=max_frames)
        target = build_target(rec, task)
        frames = None
        if with_frames and rec.media:
            media = _resolve(rec.media, media_root)
            frame_range = (rec.frame_start, rec.frame_end)

            def provider(media=media, frame_range=frame_range):
                return load_frames(media, frame_range)

            frames = provider
        clips.append(
            Clip(
                grouped=grouped,
                target_text=target.text,
                clip_id=rec.clip_id,
                frames=frames,
                label=rec.label,
            )
        )
    return clips
