"""Hand-region cropping from video frames and the RGB crop encoder.

Crops are driven purely by raw keypoint geometry: the bounding box of a
hand's 21 keypoints, grown by a margin factor, squared to its larger side,
and resized to 112 x 112. The crop encoder is a pluggable interface; the
default is a small convolutional stack (output stride 16, so a 7 x 7 map)
that trains from scratch. Anything exposing a final spatial feature map can
be swapped in through the same interface, e.g. a pretrained image backbone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch
from torch import nn

from .errors import DecodeError, IndexOutOfRangeError
from .pose import GROUP_LH, GROUP_RH, GroupedPose

CROP_SIZE = 112
FALLBACK_BOX_SIDE = 64.0


@dataclass
class HandCrop:
    """One resized hand image plus the source-pixel box it came from."""

    image: np.ndarray  # 112 x 112 x 3 float32 in [0, 1]
    source_frame_index: int
    group_id: str
    crop_box: Tuple[float, float, float, float]


def expand_box(
    box: Tuple[float, float, float, float], margin: float
) -> Tuple[float, float, float, float]:
    """Grow a box about its center by `margin` per side length."""
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half_w = (x1 - x0) * margin / 2.0
    half_h = (y1 - y0) * margin / 2.0
    return (cx - half_w, cy - half_h, cx + half_w, cy + half_h)


def square_box(
    box: Tuple[float, float, float, float]
) -> Tuple[float, float, float, float]:
    """Expand the shorter side so the box becomes square about its center."""
    x0, y0, x1, y1 = box
    side = max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    return (cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)


def hand_box(
    keypoints: np.ndarray,
    margin: float = 1.2,
    square: bool = True,
    degenerate_eps: float = 1e-6,
) -> Tuple[float, float, float, float]:
    """Crop box for one frame's 21 raw hand keypoints.

    Coincident keypoints (an undetected hand collapses onto one point) fall
    back to a fixed 64 x 64 box centered on the root keypoint.
    """
    x0, y0 = keypoints.min(axis=0)
    x1, y1 = keypoints.max(axis=0)
    if (x1 - x0) < degenerate_eps and (y1 - y0) < degenerate_eps:
        rx, ry = keypoints[0]
        half = FALLBACK_BOX_SIDE / 2.0
        return (rx - half, ry - half, rx + half, ry + half)
    box = expand_box((x0, y0, x1, y1), margin)
    if square:
        box = square_box(box)
    return box


def extract_crop(frame: np.ndarray, box: Tuple[float, float, float, float]) -> np.ndarray:
    """Cut `box` out of `frame`, zero-padding where it leaves the image."""
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = (int(round(v)) for v in box)
    x1 = max(x1, x0 + 1)
    y1 = max(y1, y0 + 1)
    out = np.zeros((y1 - y0, x1 - x0, 3), dtype=np.float32)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x1, w), min(y1, h)
    if sx1 > sx0 and sy1 > sy0:
        patch = frame[sy0:sy1, sx0:sx1]
        if patch.dtype == np.uint8:
            patch = patch.astype(np.float32) / 255.0
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = patch
    return cv2.resize(out, (CROP_SIZE, CROP_SIZE), interpolation=cv2.INTER_LINEAR)


def crop_hands(
    frames: Sequence[np.ndarray],
    grouped: GroupedPose,
    indices: Sequence[int],
    margin: float = 1.2,
    square: bool = True,
    hands: Sequence[str] = (GROUP_LH, GROUP_RH),
) -> List[HandCrop]:
    """Crop each requested hand at each sampled frame index."""
    num_frames = grouped.num_frames
    crops: List[HandCrop] = []
    for idx in indices:
        if not (0 <= idx < num_frames):
            raise IndexOutOfRangeError(f"frame index {idx} outside [0, {num_frames})")
        if idx >= len(frames):
            raise IndexOutOfRangeError(
                f"frame index {idx} beyond available video frames ({len(frames)})"
            )
        frame = frames[idx]
        if frame is None:
            raise DecodeError(f"frame {idx} could not be decoded")
        for gid in hands:
            pts = grouped.raw_coords[gid][idx]
            box = hand_box(pts, margin=margin, square=square)
            crops.append(
                HandCrop(
                    image=extract_crop(np.asarray(frame), box),
                    source_frame_index=int(idx),
                    group_id=gid,
                    crop_box=box,
                )
            )
    return crops


@dataclass
class VisionFeatures:
    group_id: str
    features: torch.Tensor  # K x h x w x C
    frame_indices: List[int]
    crop_boxes: List[Tuple[float, float, float, float]]


class TinyConvEncoder(nn.Module):
    """From-scratch crop encoder: four stride-2 stages, stride 16 overall."""

    def __init__(self, out_channels: int = 256):
        super().__init__()
        chans = [3, 32, 64, 128, out_channels]
        blocks = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            blocks += [
                nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(num_groups=8, num_channels=cout),
                nn.ReLU(),
            ]
        self.body = nn.Sequential(*blocks)
        self.out_channels = out_channels

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        # images: B x 3 x 112 x 112 -> B x C x 7 x 7
        return self.body(images)


def encode_crops(
    crops: Sequence[HandCrop],
    encoder: nn.Module,
    projection: Optional[nn.Module] = None,
) -> Dict[str, VisionFeatures]:
    """Run the crop encoder and regroup feature maps per hand.

    The optional 1x1 projection maps the encoder's channel width to the
    pose feature width; encoders already at the right width can skip it.
    """
    if not crops:
        raise ValueError("encode_crops needs at least one crop")
    batch = torch.stack(
        [torch.as_tensor(c.image, dtype=torch.float32).permute(2, 0, 1) for c in crops]
    )
    param = next(encoder.parameters(), None)
    if param is not None:
        batch = batch.to(dtype=param.dtype, device=param.device)
    maps = encoder(batch)
    if projection is not None:
        maps = projection(maps)
    maps = maps.permute(0, 2, 3, 1)  # B x h x w x C
    out: Dict[str, VisionFeatures] = {}
    for gid in (GROUP_LH, GROUP_RH):
        rows = [i for i, c in enumerate(crops) if c.group_id == gid]
        if rows:
            out[gid] = VisionFeatures(
                group_id=gid,
                features=maps[rows],
                frame_indices=[crops[i].source_frame_index for i in rows],
                crop_boxes=[crops[i].crop_box for i in rows],
            )
    return out


def load_frames(media: str, frame_range: Optional[Tuple[int, int]] = None) -> List[np.ndarray]:
    """Load RGB frames from a frame directory or a video file.

    Frame directories hold one image per frame, sorted by filename; frame
    indexing matches the keypoint file's frame axis.
    """
    path = Path(media)
    frames: List[np.ndarray] = []
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg"})
        if frame_range is not None:
            files = files[frame_range[0] : frame_range[1]]
        for f in files:
            img = cv2.imread(str(f), cv2.IMREAD_COLOR)
            if img is None:
                raise DecodeError(f"cannot decode image {f}")
            frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
        return frames
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video {path}")
    start, stop = frame_range if frame_range is not None else (0, None)
    idx = 0
    while True:
        ok, img = cap.read()
        if not ok:
            break
        if idx >= start and (stop is None or idx < stop):
            frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
        idx += 1
        if stop is not None and idx >= stop:
            break
    cap.release()
    return frames
