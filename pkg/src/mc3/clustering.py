import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.cluster.hierarchy import cut_tree, linkage

from .common import TooFewPoints
from .numerics import Array, normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterResult:
    labels: npt.NDArray[np.int64]
    """Cluster index per point, numbered by first appearance."""
    exemplars: list[list[int]]
    """Per cluster, point indices nearest to the cluster's mean direction."""

    @property
    def sizes(self) -> list[int]:
        return [int(n) for n in np.bincount(self.labels)]


def canonical_labels(labels: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """Renumbers clusters in order of first appearance."""
    labels = np.asarray(labels)
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, label in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(label, len(mapping))
    return out


def agglomerative_cluster(
    embeddings: Array, n_clusters: int = 20, n_exemplars: int = 5
) -> ClusterResult:
    """Average-linkage clustering on cosine distance."""
    if n_clusters < 1:
        raise ValueError(f"n_clusters must be >= 1, got {n_clusters}")
    n = embeddings.shape[0]
    if n < n_clusters:
        raise TooFewPoints(f"Cannot form {n_clusters} clusters from {n} points")

    if n == 1:
        labels = np.zeros(1, dtype=np.int64)
    else:
        tree = linkage(embeddings, method="average", metric="cosine")
        labels = canonical_labels(cut_tree(tree, n_clusters=n_clusters).ravel())

    units, _ = normalize_rows(embeddings)
    exemplars = []
    for cluster in range(n_clusters):
        members = np.flatnonzero(labels == cluster)
        centre = units[members].sum(axis=0)
        norm = np.linalg.norm(centre)
        similarity = units[members] @ (centre / norm) if norm > 0 else np.zeros(len(members))
        order = np.argsort(-similarity, kind="stable")[:n_exemplars]
        exemplars.append([int(i) for i in members[order]])

    logger.info(f"Clustered {n} points into {n_clusters} clusters")
    return ClusterResult(labels=labels, exemplars=exemplars)
