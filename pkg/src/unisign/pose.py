"""Keypoint parsing, sub-pose grouping and root-relative normalization.

Whole-body keypoints arrive as one file per clip: a ``.npy`` array of shape
T x 133 x 3 holding (x-pixel, y-pixel, confidence) per keypoint per frame.
Out of the 133 keypoints, 69 are used downstream, split into four groups
(left hand, right hand, body, face). Hands and face are re-expressed
relative to a per-frame root keypoint; the body keeps absolute coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import EmptyClipError, IndexOutOfRangeError, MalformedFileError

NUM_KEYPOINTS = 133

GROUP_LH = "lh"
GROUP_RH = "rh"
GROUP_BODY = "b"
GROUP_FACE = "f"
GROUP_ORDER = (GROUP_LH, GROUP_RH, GROUP_BODY, GROUP_FACE)


@dataclass(frozen=True)
class PoseSequence:
    """Per-clip keypoint array in source pixel coordinates.

    frames: float32 array T x 133 x 3, field order (x, y, confidence).
    """

    frames: np.ndarray
    frame_rate: float = 25.0
    clip_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[1:] != (NUM_KEYPOINTS, 3):
            raise MalformedFileError(
                f"expected keypoint array of shape (T, {NUM_KEYPOINTS}, 3), got {arr.shape}"
            )
        if arr.shape[0] < 1:
            raise EmptyClipError(f"clip {self.clip_id!r} has no frames")
        if not np.isfinite(arr).all():
            raise MalformedFileError(f"clip {self.clip_id!r} contains non-finite values")
        conf = arr[:, :, 2]
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise MalformedFileError(
                f"clip {self.clip_id!r} has confidences outside [0, 1]"
            )
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class GroupSpec:
    """Keypoint subset forming one sub-pose group.

    Indices are 1-based (matching the whole-body keypoint numbering) and are
    converted to 0-based storage only at this boundary.
    """

    group_id: str
    indices: tuple
    root_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        for i in self.indices:
            if not (1 <= i <= NUM_KEYPOINTS):
                raise IndexOutOfRangeError(
                    f"group {self.group_id!r}: keypoint index {i} outside 1..{NUM_KEYPOINTS}"
                )
        if self.root_index is not None and self.root_index not in self.indices:
            raise IndexOutOfRangeError(
                f"group {self.group_id!r}: root index {self.root_index} not a member"
            )

    @property
    def node_count(self) -> int:
        return len(self.indices)

    @property
    def zero_based(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64) - 1

    @property
    def root_local(self) -> Optional[int]:
        if self.root_index is None:
            return None
        return self.indices.index(self.root_index)


def canonical_group_specs() -> Dict[str, GroupSpec]:
    """The four standard groups: 21 keypoints per hand, 9 body, 18 face.

    Roots are 92 (left wrist), 113 (right wrist) and 54 (nose); the body
    group keeps absolute coordinates and has no root.
    """
    face = (24, 26, 28, 30, 32, 34, 36, 38, 40, 54) + tuple(range(84, 92))
    return {
        GROUP_LH: GroupSpec(GROUP_LH, tuple(range(92, 113)), root_index=92),
        GROUP_RH: GroupSpec(GROUP_RH, tuple(range(113, 134)), root_index=113),
        GROUP_BODY: GroupSpec(GROUP_BODY, (1,) + tuple(range(4, 12)), root_index=None),
        GROUP_FACE: GroupSpec(GROUP_FACE, face, root_index=54),
    }


@dataclass
class GroupedPose:
    """Per-group normalized coordinates plus the raw values kept for fusion.

    coords[g]:      T x N_g x 2 root-relative (body: absolute) coordinates
    confidences[g]: T x N_g unmodified detector confidences
    raw_coords[g]:  T x N_g x 2 source-pixel coordinates (crop geometry and
                    reference-point priors are computed from these)
    """

    coords: Dict[str, np.ndarray]
    confidences: Dict[str, np.ndarray]
    raw_coords: Dict[str, np.ndarray]
    clip_id: str = ""
    frame_rate: float = 25.0

    @property
    def num_frames(self) -> int:
        return next(iter(self.coords.values())).shape[0]

    def node_count(self, group_id: str) -> int:
        return self.coords[group_id].shape[1]


def load_pose_sequence(
    path, frame_rate: float = 25.0, clip_id: Optional[str] = None
) -> PoseSequence:
    """Load a T x 133 x 3 keypoint file (``.npy`` container)."""
    path = Path(path)
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise MalformedFileError(f"cannot read keypoint file {path}: {exc}") from exc
    if arr.ndim == 3 and arr.shape[0] == 0:
        raise EmptyClipError(f"keypoint file {path} holds zero frames")
    return PoseSequence(
        frames=arr,
        frame_rate=frame_rate,
        clip_id=clip_id if clip_id is not None else path.stem,
    )


def save_pose_file(path, frames: np.ndarray) -> None:
    """Write a keypoint array in the container format `load_pose_sequence` reads."""
    arr = np.asarray(frames, dtype=np.float32)
    np.save(path, arr)


def group_and_normalize(
    seq: PoseSequence,
    specs: Optional[Dict[str, GroupSpec]] = None,
    coord_scale: Optional[float] = None,
) -> GroupedPose:
    """Select each group's keypoints and subtract the per-frame root.

    Hands and face become root-relative (the root lands on (0, 0) every
    frame); the body group is passed through untouched. Confidences are
    copied, never rescaled. ``coord_scale``, when given (e.g. the larger
    side of the source image), divides the normalized coordinates so inputs
    are resolution independent; raw coordinates always stay in pixels.
    """
    if specs is None:
        specs = canonical_group_specs()
    coords: Dict[str, np.ndarray] = {}
    confs: Dict[str, np.ndarray] = {}
    raws: Dict[str, np.ndarray] = {}
    for gid, spec in specs.items():
        sel = seq.frames[:, spec.zero_based, :]  # T x N x 3
        raw = sel[:, :, :2].astype(np.float32)
        conf = sel[:, :, 2].astype(np.float32)
        norm = raw.copy()
        root = spec.root_local
        if root is not None:
            norm = norm - norm[:, root : root + 1, :]
        if coord_scale is not None:
            if coord_scale <= 0:
                raise ValueError("coord_scale must be positive")
            norm = norm / np.float32(coord_scale)
        coords[gid] = norm
        confs[gid] = conf
        raws[gid] = raw
    return GroupedPose(
        coords=coords,
        confidences=confs,
        raw_coords=raws,
        clip_id=seq.clip_id,
        frame_rate=seq.frame_rate,
    )
