"""Skeleton graph topologies for the four sub-pose groups.

Edges are listed over the group's local node order (the order keypoints
appear in its GroupSpec). Every adjacency gets self-loops and is
row-normalized before use.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigMismatchError
from .pose import GROUP_BODY, GROUP_FACE, GROUP_LH, GROUP_RH

Edge = Tuple[int, int]


def hand_edges() -> List[Edge]:
    """Wrist-rooted kinematic tree over the 21 hand keypoints."""
    edges = []
    for finger in range(5):
        base = 1 + 4 * finger
        edges.append((0, base))
        edges.extend((base + j, base + j + 1) for j in range(3))
    return edges


def body_edges() -> List[Edge]:
    """Head/torso/arm links over [nose, ears, shoulders, elbows, wrists]."""
    return [
        (0, 1), (0, 2),          # nose - ears
        (0, 3), (0, 4), (3, 4),  # nose - shoulders, shoulder line
        (3, 5), (5, 7),          # left arm chain
        (4, 6), (6, 8),          # right arm chain
    ]


def face_edges() -> List[Edge]:
    """Star rooted at the nose (local node 9) plus the mouth ring cycle."""
    edges = [(9, i) for i in range(18) if i != 9]
    ring = list(range(10, 18))
    edges.extend((ring[i], ring[(i + 1) % len(ring)]) for i in range(len(ring)))
    return edges


def default_edge_lists() -> Dict[str, List[Edge]]:
    return {
        GROUP_LH: hand_edges(),
        GROUP_RH: hand_edges(),
        GROUP_BODY: body_edges(),
        GROUP_FACE: face_edges(),
    }


def build_adjacency(num_nodes: int, edges: Sequence[Edge]) -> np.ndarray:
    """Symmetric adjacency with self-loops, row-normalized to float32."""
    adj = np.eye(num_nodes, dtype=np.float32)
    for a, b in edges:
        if not (0 <= a < num_nodes and 0 <= b < num_nodes):
            raise ConfigMismatchError(
                f"edge ({a}, {b}) outside graph with {num_nodes} nodes"
            )
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    adj /= adj.sum(axis=1, keepdims=True)
    return adj
