"""Prior-guided fusion of hand pose features with RGB crop feature maps.

Per sampled frame, pose node features first query the whole crop feature
map through multi-head attention (global context), then sample it at
keypoint-anchored locations through deformable attention: each node's
reference point is its own normalized crop coordinate, and a zero-initialized
predictor learns per-head offsets around it. The two-branch result is blended
into the original pose features by a gate whose parameters start at zero, so
a freshly initialized module is an exact identity on the pose branch and the
backbone's prior training is preserved when fusion training starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
from torch import nn

FUSION_DEFORMABLE = "deformable"
FUSION_CROSS_ATTENTION = "cross_attention"


@dataclass
class FusionConfig:
    channels: int = 256
    heads: int = 8
    deform_points: int = 4
    per_channel_gate: bool = False
    mode: str = FUSION_DEFORMABLE

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ValueError(
                f"heads ({self.heads}) must divide channels ({self.channels})"
            )
        if self.deform_points < 1:
            raise ValueError("deform_points must be >= 1")
        if self.mode not in (FUSION_DEFORMABLE, FUSION_CROSS_ATTENTION):
            raise ValueError(f"unknown fusion mode {self.mode!r}")


def _axis_indices(coord: torch.Tensor, size: int):
    """Split a continuous [0,1] coordinate into cell indices and fraction."""
    if size == 1:
        zero = torch.zeros_like(coord)
        return zero.long(), zero.long(), zero
    scaled = coord * (size - 1)
    low = torch.clamp(torch.floor(scaled), 0, size - 2)
    frac = scaled - low
    return low.long(), low.long() + 1, frac


def batched_bilinear(maps: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample `maps` (K x h x w x C) at `points` (K x P x 2).

    Points are (u, v) in [0, 1]^2 with u along the width axis; (0, 0) is the
    center of the top-left cell and (1, 1) the center of the bottom-right
    cell. Out-of-range points are clamped to the map border. Differentiable
    in both the maps and the points.
    """
    k, h, w, c = maps.shape
    uv = points.clamp(0.0, 1.0)
    x0, x1, fx = _axis_indices(uv[..., 0], w)
    y0, y1, fy = _axis_indices(uv[..., 1], h)
    flat = maps.reshape(k, h * w, c)

    def take(yy, xx):
        idx = (yy * w + xx).unsqueeze(-1).expand(-1, -1, c)
        return flat.gather(1, idx)

    fx = fx.unsqueeze(-1)
    fy = fy.unsqueeze(-1)
    top = (1 - fx) * take(y0, x0) + fx * take(y0, x1)
    bottom = (1 - fx) * take(y1, x0) + fx * take(y1, x1)
    return (1 - fy) * top + fy * bottom


def deform_sample(rgb_map: torch.Tensor, points) -> torch.Tensor:
    """Sample one feature map (h x w x C) at continuous [0,1]^2 locations."""
    pts = torch.as_tensor(points, dtype=rgb_map.dtype, device=rgb_map.device)
    if pts.dim() == 1:
        pts = pts.unsqueeze(0)
    return batched_bilinear(rgb_map.unsqueeze(0), pts.unsqueeze(0)).squeeze(0)


class PriorGuidedFusion(nn.Module):
    """Fuses pose node features with an RGB feature map, frame by frame."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        c, heads, points = cfg.channels, cfg.heads, cfg.deform_points
        self.global_attn = nn.MultiheadAttention(c, heads, batch_first=True)
        self.value_proj = nn.Linear(c, c)
        self.offset_proj = nn.Linear(c, heads * points * 2)
        self.weight_proj = nn.Linear(c, heads * points)
        self.out_proj = nn.Linear(c, c)
        if cfg.mode == FUSION_CROSS_ATTENTION:
            self.cross_attn = nn.MultiheadAttention(c, heads, batch_first=True)
        gate_out = c if cfg.per_channel_gate else 1
        self.gate_linear = nn.Linear(2 * c, gate_out)
        self.gate_scale = nn.Parameter(torch.zeros(()))
        # zero starting points: offsets sit on the keypoint priors and the
        # gate passes the pose branch through unchanged
        nn.init.zeros_(self.offset_proj.weight)
        nn.init.zeros_(self.offset_proj.bias)
        nn.init.zeros_(self.gate_linear.weight)
        nn.init.zeros_(self.gate_linear.bias)
        self.coord_clamp_count = 0

    def sampling_locations(
        self, queries: torch.Tensor, coords: torch.Tensor
    ) -> torch.Tensor:
        """Reference points plus predicted offsets, K x N x heads x points x 2."""
        k, n, _ = queries.shape
        offsets = self.offset_proj(queries).reshape(
            k, n, self.cfg.heads, self.cfg.deform_points, 2
        )
        refs = coords[:, :, None, None, :]
        return refs + offsets

    def _deformable_branch(
        self, queries: torch.Tensor, rgb_map: torch.Tensor, coords: torch.Tensor
    ) -> torch.Tensor:
        k, n, c = queries.shape
        heads, points = self.cfg.heads, self.cfg.deform_points
        head_dim = c // heads
        h, w = rgb_map.shape[1], rgb_map.shape[2]

        locs = self.sampling_locations(queries, coords)  # K,N,H,P,2
        values = self.value_proj(rgb_map).reshape(k, h, w, heads, head_dim)
        # fold heads into the batch axis so each head samples its own slice
        per_head_maps = (
            values.permute(0, 3, 1, 2, 4).reshape(k * heads, h, w, head_dim)
        )
        per_head_locs = (
            locs.permute(0, 2, 1, 3, 4).reshape(k * heads, n * points, 2)
        )
        sampled = batched_bilinear(per_head_maps, per_head_locs).reshape(
            k, heads, n, points, head_dim
        )
        attn = torch.softmax(
            self.weight_proj(queries).reshape(k, n, heads, points), dim=-1
        )
        mixed = torch.einsum("knhp,khnpd->knhd", attn, sampled).reshape(k, n, c)
        return self.out_proj(mixed)

    def forward(
        self,
        pose_rows: torch.Tensor,   # K x N x C
        rgb_maps: torch.Tensor,    # K x h x w x C
        coords: torch.Tensor,      # K x N x 2 in the crop's [0,1]^2 frame
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns the blended features and the gate values."""
        if not torch.isfinite(coords).all():
            raise ValueError("fusion reference coordinates must be finite")
        outside = ((coords < 0) | (coords > 1)).any(dim=-1).sum().item()
        if outside:
            self.coord_clamp_count += int(outside)
        coords = coords.clamp(0.0, 1.0)

        k, n, c = pose_rows.shape
        rgb_tokens = rgb_maps.reshape(k, -1, c)
        global_ctx, _ = self.global_attn(pose_rows, rgb_tokens, rgb_tokens)
        queries = pose_rows + global_ctx

        if self.cfg.mode == FUSION_CROSS_ATTENTION:
            fused_hat, _ = self.cross_attn(queries, rgb_tokens, rgb_tokens)
        else:
            fused_hat = self._deformable_branch(queries, rgb_maps, coords)

        gate_in = torch.cat([pose_rows, fused_hat], dim=-1)
        gate = torch.sigmoid(self.gate_linear(gate_in)) * self.gate_scale
        fused = (1 - gate) * pose_rows + gate * fused_hat
        return fused, gate

    def fuse_frame(self, pose_row, rgb_map, coords):
        """Single-frame convenience wrapper around the batched forward."""
        fused, gate = self.forward(
            pose_row.unsqueeze(0), rgb_map.unsqueeze(0), coords.unsqueeze(0)
        )
        return fused.squeeze(0), gate.squeeze(0)


def crop_relative_coords(
    raw_points: torch.Tensor, crop_box: Tuple[float, float, float, float]
) -> torch.Tensor:
    """Re-express raw pixel keypoints in a crop box's normalized frame."""
    x0, y0, x1, y1 = crop_box
    scale = torch.tensor(
        [max(x1 - x0, 1e-6), max(y1 - y0, 1e-6)],
        dtype=raw_points.dtype,
        device=raw_points.device,
    )
    origin = torch.tensor([x0, y0], dtype=raw_points.dtype, device=raw_points.device)
    return (raw_points - origin) / scale
