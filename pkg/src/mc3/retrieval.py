"""Cross-modal retrieval over action groups.

Sounding records from groups with more than two instances are split per group into a
query pool and a retrieval pool. A query is answered correctly at k if at least one
of its k nearest retrieval items shares its group.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import hypergeom

from .common import EmptyPools, MissingLabel, ModalityId, PoolMismatch
from .manifest import SampleRecord
from .numerics import Array, make_rng

logger = logging.getLogger(__name__)

DEFAULT_K = (1, 5, 10)


@dataclass
class Pool:
    ids: list[str]
    groups: list[str]
    embeddings: dict[ModalityId, Array]
    """Unit embeddings per modality, rows aligned with `ids`."""

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class RetrievalPools:
    query: Pool
    retrieval: Pool

    def __post_init__(self) -> None:
        if len(self.query) == 0 or len(self.retrieval) == 0:
            raise EmptyPools("Query and retrieval pools must both be non-empty")
        overlap = set(self.query.ids) & set(self.retrieval.ids)
        if overlap:
            raise PoolMismatch(f"Pools share sample ids, e.g. {sorted(overlap)[0]}")
        missing = set(self.query.groups) - set(self.retrieval.groups)
        if missing:
            raise PoolMismatch(f"Query group {sorted(missing)[0]} has no retrieval candidates")


def _take(
    records: Sequence[SampleRecord], embeddings: dict[ModalityId, Array], rows: list[int]
) -> Pool:
    index = np.asarray(rows, dtype=np.int64)
    return Pool(
        ids=[records[i].id for i in rows],
        groups=[records[i].group or "" for i in rows],
        embeddings={m: e[index] for m, e in embeddings.items()},
    )


def build_pools(
    records: Sequence[SampleRecord],
    embeddings: dict[ModalityId, Array],
    seed: int = 0,
) -> RetrievalPools:
    """Splits each qualifying action group half/half; odd groups put the extra member
    in the retrieval pool."""
    members: dict[str, list[int]] = defaultdict(list)
    for i, record in enumerate(records):
        if record.sounding is None:
            raise MissingLabel(f"Record {record.id} has no sounding label")
        if record.sounding != 1:
            continue
        if record.group is None:
            raise MissingLabel(f"Sounding record {record.id} has no verb/noun group")
        members[record.group].append(i)

    rng = make_rng(seed)
    query_rows: list[int] = []
    retrieval_rows: list[int] = []
    kept = 0
    for group in sorted(members):
        rows = members[group]
        if len(rows) <= 2:
            continue
        kept += 1
        shuffled = [rows[i] for i in rng.permutation(len(rows))]
        half = len(rows) // 2
        query_rows.extend(shuffled[:half])
        retrieval_rows.extend(shuffled[half:])
    if kept == 0:
        raise EmptyPools("No action group has more than two sounding instances")

    logger.info(
        f"Built retrieval pools from {kept} groups: {len(query_rows)} queries, "
        f"{len(retrieval_rows)} candidates"
    )
    return RetrievalPools(
        query=_take(records, embeddings, query_rows),
        retrieval=_take(records, embeddings, retrieval_rows),
    )


def _check_k(pools: RetrievalPools, k_list: Iterable[int]) -> list[int]:
    ks = list(k_list)
    for k in ks:
        if not 1 <= k <= len(pools.retrieval):
            raise ValueError(f"k must be in [1, {len(pools.retrieval)}], got {k}")
    return ks


def first_hit_ranks(
    pools: RetrievalPools, query_modality: ModalityId, target_modality: ModalityId
) -> Array:
    """0-based rank of the first same-group retrieval item for each query.

    Items are ranked by descending cosine similarity, ties by ascending sample id."""
    queries = pools.query.embeddings[query_modality]
    targets = pools.retrieval.embeddings[target_modality]
    similarities = queries @ targets.T

    id_order = np.argsort(np.asarray(pools.retrieval.ids), kind="stable")
    id_rank = np.empty_like(id_order)
    id_rank[id_order] = np.arange(len(id_order))

    retrieval_groups = np.asarray(pools.retrieval.groups)
    ranks = np.empty(len(pools.query), dtype=np.int64)
    for q, group in enumerate(pools.query.groups):
        # lexsort sorts by the last key first
        order = np.lexsort((id_rank, -similarities[q]))
        ranks[q] = int(np.argmax(retrieval_groups[order] == group))
    return ranks


def recall_at_k(
    pools: RetrievalPools,
    query_modality: ModalityId,
    target_modality: ModalityId,
    k_list: Iterable[int] = DEFAULT_K,
) -> dict[int, float]:
    ks = _check_k(pools, k_list)
    ranks = first_hit_ranks(pools, query_modality, target_modality)
    return {k: float(np.mean(ranks < k)) for k in ks}


def chance_recall_at_k(pools: RetrievalPools, k_list: Iterable[int] = DEFAULT_K) -> dict[int, float]:
    """Expected recall@k of a uniformly random ranking."""
    ks = _check_k(pools, k_list)
    total = len(pools.retrieval)
    counts: dict[str, int] = defaultdict(int)
    for group in pools.retrieval.groups:
        counts[group] += 1
    matches = np.array([counts[g] for g in pools.query.groups])
    return {
        k: float(np.mean(1.0 - hypergeom(total, matches, k).pmf(0)))
        for k in ks
    }
