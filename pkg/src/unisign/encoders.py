"""Per-group spatial graph encoders, short-term temporal encoders, and the
group concatenation that yields the per-frame sign representation.

Each group owns an independent weight set: a linear lift of the 2-D
coordinates, three graph-convolution layers, and three spatial-temporal
layers whose temporal kernel spans five frames with symmetric padding, so
sequence length is preserved end to end. Group features are mean-pooled
over nodes and concatenated in the fixed order (lh, rh, b, f).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .errors import ConfigMismatchError, GroupMissingError, LengthMismatchError
from .graph import build_adjacency, default_edge_lists
from .pose import GROUP_ORDER, GroupedPose


@dataclass
class EncoderConfig:
    input_linear_dim: int = 64
    gcn_dims: Tuple[int, ...] = (64, 128, 256)
    temporal_dims: Tuple[int, ...] = (256, 256, 256)
    temporal_kernel: int = 5
    # feed detector confidences as a third input channel (off by default:
    # confidences drive the frame sampler, not the encoders)
    use_confidence: bool = False
    # per-group edge lists over local node indices; None = skeleton defaults
    adjacency: Optional[Dict[str, list]] = None

    def __post_init__(self):
        self.gcn_dims = tuple(self.gcn_dims)
        self.temporal_dims = tuple(self.temporal_dims)
        if self.temporal_kernel % 2 != 1:
            raise ConfigMismatchError("temporal_kernel must be odd")

    @property
    def feature_dim(self) -> int:
        return self.gcn_dims[-1]

    @property
    def sign_dim(self) -> int:
        return 4 * self.feature_dim

    def edges_for(self, group_id: str):
        if self.adjacency is not None and group_id in self.adjacency:
            return [tuple(e) for e in self.adjacency[group_id]]
        return default_edge_lists()[group_id]


class GraphConvLayer(nn.Module):
    """adjacency-mix -> linear -> ReLU -> LayerNorm, residual when dims match."""

    def __init__(self, adjacency: np.ndarray, in_dim: int, out_dim: int):
        super().__init__()
        self.register_buffer("adj", torch.as_tensor(adjacency, dtype=torch.float32))
        self.linear = nn.Linear(in_dim, out_dim)
        self.norm = nn.LayerNorm(out_dim)
        self.residual = in_dim == out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (..., N, C); adjacency mixes over the node axis
        mixed = torch.matmul(self.adj.to(x.dtype), x)
        out = self.norm(torch.relu(self.linear(mixed)))
        if self.residual:
            out = out + x
        return out


class TemporalGraphLayer(nn.Module):
    """Graph mixing followed by a per-node temporal convolution.

    Symmetric zero padding keeps the frame count; a kernel of k widens the
    receptive field by (k - 1) / 2 frames on each side.
    """

    def __init__(self, adjacency: np.ndarray, in_dim: int, out_dim: int, kernel: int):
        super().__init__()
        self.spatial = GraphConvLayer(adjacency, in_dim, out_dim)
        self.tconv = nn.Conv2d(
            out_dim, out_dim, kernel_size=(kernel, 1), padding=(kernel // 2, 0)
        )
        self.norm = nn.LayerNorm(out_dim)
        self.residual = in_dim == out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, N, C)
        y = self.spatial(x)
        y = y.permute(0, 3, 1, 2)          # B, C, T, N
        y = self.tconv(y)
        y = y.permute(0, 2, 3, 1)          # B, T, N, C
        y = self.norm(torch.relu(y))
        if self.residual:
            y = y + x
        return y


class PoseGroupEncoder(nn.Module):
    """Linear lift plus stacked graph-convolution layers for one group."""

    def __init__(self, num_nodes: int, cfg: EncoderConfig, edges):
        super().__init__()
        adj = build_adjacency(num_nodes, edges)
        self.num_nodes = num_nodes
        self.in_channels = 3 if cfg.use_confidence else 2
        self.lift = nn.Linear(self.in_channels, cfg.input_linear_dim)
        dims = (cfg.input_linear_dim,) + cfg.gcn_dims
        self.layers = nn.ModuleList(
            GraphConvLayer(adj, dims[i], dims[i + 1]) for i in range(len(cfg.gcn_dims))
        )

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        # coords: (B, T, N, in_channels) or (T, N, in_channels)
        squeeze = coords.dim() == 3
        if squeeze:
            coords = coords.unsqueeze(0)
        if coords.shape[-1] != self.in_channels:
            raise ConfigMismatchError(
                f"encoder expects {self.in_channels} input channels, got {coords.shape[-1]}"
            )
        if coords.shape[-2] != self.num_nodes:
            raise ConfigMismatchError(
                f"encoder built for {self.num_nodes} nodes, got {coords.shape[-2]}"
            )
        x = self.lift(coords)
        for layer in self.layers:
            x = layer(x)
        return x.squeeze(0) if squeeze else x


class TemporalGroupEncoder(nn.Module):
    """Stacked spatial-temporal layers for one group."""

    def __init__(self, num_nodes: int, cfg: EncoderConfig, edges):
        super().__init__()
        adj = build_adjacency(num_nodes, edges)
        dims = (cfg.gcn_dims[-1],) + cfg.temporal_dims
        self.layers = nn.ModuleList(
            TemporalGraphLayer(adj, dims[i], dims[i + 1], cfg.temporal_kernel)
            for i in range(len(cfg.temporal_dims))
        )

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        squeeze = feats.dim() == 3
        if squeeze:
            feats = feats.unsqueeze(0)
        x = feats
        for layer in self.layers:
            x = layer(x)
        return x.squeeze(0) if squeeze else x


def encode_pose_group(
    grouped: GroupedPose, group_id: str, encoder: PoseGroupEncoder
) -> torch.Tensor:
    if group_id not in grouped.coords:
        raise GroupMissingError(f"group {group_id!r} absent from grouped pose")
    coords = torch.as_tensor(grouped.coords[group_id], dtype=torch.float32)
    return encoder(coords)


def aggregate_sign(features: Dict[str, torch.Tensor]) -> torch.Tensor:
    """Mean-pool each group over its nodes and concatenate (lh, rh, b, f)."""
    pooled = []
    length = None
    width = None
    for gid in GROUP_ORDER:
        if gid not in features:
            raise GroupMissingError(f"group {gid!r} missing from feature map")
        feat = features[gid]
        if length is None:
            length, width = feat.shape[-3], feat.shape[-1]
        elif feat.shape[-3] != length or feat.shape[-1] != width:
            raise LengthMismatchError(
                f"group {gid!r} has shape {tuple(feat.shape)}, expected T={length}, C={width}"
            )
        pooled.append(feat.mean(dim=-2))
    return torch.cat(pooled, dim=-1)
