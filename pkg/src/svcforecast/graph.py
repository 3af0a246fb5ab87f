"""Per-window service graphs and the symmetric-normalized propagation operator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGraphError, DimensionError, ValidationError


@dataclass(frozen=True)
class GraphSnapshot:
    """One time window: services observed, weighted call edges, and an N x d feature matrix."""

    window_index: int
    window_start: int
    node_ids: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        object.__setattr__(self, "edges", tuple((int(s), int(d), float(w)) for s, d, w in self.edges))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(0, 0)
        object.__setattr__(self, "features", feats)
        n = len(self.node_ids)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValidationError(f"features shape {feats.shape} does not match {n} nodes", "features")
        for s, d, w in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise ValidationError(f"edge ({s}, {d}) references a node outside 0..{n - 1}", "edges")
            if w < 0:
                raise ValidationError(f"edge ({s}, {d}) has negative weight {w}", "edges")

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)


def adjacency(snapshot: GraphSnapshot, symmetrize: str = "max") -> np.ndarray:
    """Fold directed call edges into an undirected weighted adjacency with a zero diagonal."""
    if symmetrize not in ("max", "sum"):
        raise ValueError(f"symmetrize must be 'max' or 'sum', got {symmetrize!r}")
    n = snapshot.num_nodes
    directed = np.zeros((n, n))
    for s, d, w in snapshot.edges:
        if s != d:
            directed[s, d] += w
    if symmetrize == "max":
        a = np.maximum(directed, directed.T)
    else:
        a = directed + directed.T
    np.fill_diagonal(a, 0.0)
    return a


def add_self_loops(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {a.shape}")
    return a + np.eye(a.shape[0])


def normalize(a_hat: np.ndarray) -> np.ndarray:
    """D^-1/2 A D^-1/2 with D the weighted degree (row sums) of ``a_hat``."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_hat.ndim != 2 or a_hat.shape[0] != a_hat.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {a_hat.shape}")
    if np.any(a_hat < 0):
        raise ValueError("adjacency entries must be non-negative")
    deg = a_hat.sum(axis=1)
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise DegenerateGraphError(f"node {bad} has zero degree; add self-loops first")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


def scale_edges(a: np.ndarray, mode: str = "max") -> np.ndarray:
    """Rescale edge weights before self-loops are added.

    ``"max"`` divides by the largest weight so raw call counts (thousands per
    window) do not drown the unit self-loop; ``"none"`` keeps weights as-is.
    """
    if mode == "none":
        return a
    if mode != "max":
        raise ValueError(f"edge scale must be 'max' or 'none', got {mode!r}")
    top = a.max() if a.size else 0.0
    return a / top if top > 0 else a


def propagation_operator(snapshot: GraphSnapshot, symmetrize: str = "max", edge_scale: str = "max") -> np.ndarray:
    return normalize(add_self_loops(scale_edges(adjacency(snapshot, symmetrize), edge_scale)))


def align_to_vocabulary(
    snapshots: list[GraphSnapshot],
) -> tuple[list[GraphSnapshot], tuple[str, ...], np.ndarray]:
    """Re-index every snapshot onto the sorted union of service ids.

    Returns the aligned snapshots, the vocabulary and a (T, N) boolean presence mask.
    Absent services get zero feature rows and no edges.
    """
    if not snapshots:
        raise ValueError("align_to_vocabulary needs at least one snapshot")
    vocab = tuple(sorted({nid for snap in snapshots for nid in snap.node_ids}))
    index = {nid: i for i, nid in enumerate(vocab)}
    widths = {snap.features.shape[1] for snap in snapshots if snap.num_nodes}
    if len(widths) > 1:
        raise DimensionError(f"snapshots disagree on feature width: {sorted(widths)}")
    d = widths.pop() if widths else 0
    n = len(vocab)

    aligned = []
    presence = np.zeros((len(snapshots), n), dtype=bool)
    for t, snap in enumerate(snapshots):
        pos = [index[nid] for nid in snap.node_ids]
        feats = np.zeros((n, d))
        if pos:
            feats[pos] = snap.features
            presence[t, pos] = True
        edges = tuple((pos[s], pos[dst], w) for s, dst, w in snap.edges)
        aligned.append(GraphSnapshot(snap.window_index, snap.window_start, vocab, edges, feats))
    return aligned, vocab, presence
