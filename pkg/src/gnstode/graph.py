"""k-nearest-neighbour interaction graphs over particle coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .physics import ParticleState


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Directed receiver-oriented edges ``receivers[e] <- senders[e]``.

    ``edge_features[e] = [dx, dy, dist]`` with ``(dx, dy) = x_sender - x_receiver``.
    Edges are grouped by receiver, senders ordered nearest first.
    """

    n: int
    receivers: np.ndarray
    senders: np.ndarray
    edge_features: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.receivers.size)


def knn_edges(positions: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = positions.shape[0]
    k = min(k, n - 1)
    diff = positions[None, :, :] - positions[:, None, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    if np.any(d2 == 0.0):
        i, j = np.argwhere(d2 == 0.0)[0]
        raise ValueError(f"particles {i} and {j} have identical coordinates")
    # stable sort keeps the smaller sender index first on distance ties
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    receivers = np.repeat(np.arange(n), k)
    return receivers, order.reshape(-1)


def knn_graph(state: ParticleState | np.ndarray, k: int = 15) -> SpatialGraph:
    """Connect each particle to its ``min(k, n - 1)`` nearest neighbours.

    Accepts a :class:`ParticleState` or a raw (n, 2) coordinate array.
    """
    pos = state.positions if isinstance(state, ParticleState) else np.asarray(state, dtype=np.float64)
    n = pos.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 particles, got {n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    receivers, senders = knn_edges(pos, k)
    delta = pos[senders] - pos[receivers]
    dist = np.sqrt(np.sum(delta * delta, axis=1))
    feats = np.column_stack([delta, dist])
    return SpatialGraph(n, receivers, senders, feats)


def merge_graphs(graphs: list[SpatialGraph]) -> SpatialGraph:
    """Disjoint union; node ids of graph b are offset by the sizes of graphs before it."""
    offsets = np.cumsum([0] + [g.n for g in graphs[:-1]])
    return SpatialGraph(
        n=int(sum(g.n for g in graphs)),
        receivers=np.concatenate([g.receivers + o for g, o in zip(graphs, offsets)]),
        senders=np.concatenate([g.senders + o for g, o in zip(graphs, offsets)]),
        edge_features=np.concatenate([g.edge_features for g in graphs]),
    )

