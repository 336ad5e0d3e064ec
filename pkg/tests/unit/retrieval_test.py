import numpy as np
import pytest
from scipy.special import comb

from mc3.common import MODALITIES, EmptyPools, MissingLabel, ModalityId, PoolMismatch, Split
from mc3.manifest import FeatureRef, SampleRecord
from mc3.numerics import make_rng, normalize_rows
from mc3.retrieval import (
    Pool,
    RetrievalPools,
    build_pools,
    chance_recall_at_k,
    recall_at_k,
)

A, V, L = MODALITIES


def make_record(i: int, group: str | None, sounding: int = 1) -> SampleRecord:
    verb, noun = group.split("/") if group else (None, None)
    return SampleRecord(
        id=f"s{i:03d}",
        features={m: FeatureRef(f"{m.key}.mc3f", i) for m in MODALITIES},
        split=Split.TEST,
        sounding=sounding,
        verb=verb,
        noun=noun,
    )


def random_embeddings(n: int, dim: int = 4, seed: int = 0) -> dict[ModalityId, np.ndarray]:
    rng = make_rng(seed)
    return {m: normalize_rows(rng.standard_normal((n, dim)))[0] for m in MODALITIES}


def test_odd_group_sends_extra_member_to_retrieval():
    records = [make_record(i, "cut/onion") for i in range(3)]
    pools = build_pools(records, random_embeddings(3))
    assert (len(pools.query), len(pools.retrieval)) == (1, 2)


def test_small_groups_and_silent_records_are_excluded():
    records = [
        *[make_record(i, "cut/onion") for i in range(4)],
        *[make_record(4 + i, "open/door") for i in range(2)],
        *[make_record(6 + i, "wash/pan", sounding=0) for i in range(5)],
    ]
    pools = build_pools(records, random_embeddings(len(records)))
    assert set(pools.query.groups) | set(pools.retrieval.groups) == {"cut/onion"}
    assert (len(pools.query), len(pools.retrieval)) == (2, 2)


def test_ten_groups_of_ten():
    records = [make_record(i, f"verb{i // 10}/noun") for i in range(100)]
    pools = build_pools(records, random_embeddings(100))
    assert (len(pools.query), len(pools.retrieval)) == (50, 50)
    assert not set(pools.query.ids) & set(pools.retrieval.ids)


def test_split_is_seeded():
    records = [make_record(i, f"verb{i // 5}/noun") for i in range(40)]
    embeddings = random_embeddings(40)
    assert build_pools(records, embeddings, seed=1).query.ids == build_pools(records, embeddings, seed=1).query.ids
    assert build_pools(records, embeddings, seed=1).query.ids != build_pools(records, embeddings, seed=2).query.ids


def test_no_qualifying_group():
    records = [make_record(i, "cut/onion") for i in range(2)]
    with pytest.raises(EmptyPools):
        build_pools(records, random_embeddings(2))


def test_missing_labels():
    with pytest.raises(MissingLabel):
        build_pools([make_record(0, None)], random_embeddings(1))


def pools_from(query: np.ndarray, query_groups, retrieval: np.ndarray, retrieval_groups) -> RetrievalPools:
    return RetrievalPools(
        query=Pool(
            ids=[f"q{i:03d}" for i in range(len(query))],
            groups=list(query_groups),
            embeddings={A: query, V: query},
        ),
        retrieval=Pool(
            ids=[f"r{i:03d}" for i in range(len(retrieval))],
            groups=list(retrieval_groups),
            embeddings={A: retrieval, V: retrieval},
        ),
    )


def test_nearest_neighbour_is_group_mate():
    embeddings = np.eye(4)
    pools = pools_from(embeddings, "abcd", embeddings, "abcd")
    assert recall_at_k(pools, A, V, [1]) == {1: 1.0}


def test_recall_at_pool_size_is_one():
    rng = make_rng(0)
    pools = pools_from(
        normalize_rows(rng.standard_normal((6, 3)))[0], "aabbcc",
        normalize_rows(rng.standard_normal((9, 3)))[0], "aaabbbccc",
    )  # fmt: skip
    assert recall_at_k(pools, A, V, [9]) == {9: 1.0}


def test_k_larger_than_pool():
    embeddings = np.eye(2)
    with pytest.raises(ValueError):
        recall_at_k(pools_from(embeddings, "ab", embeddings, "ab"), A, V, [3])


def test_ties_are_broken_by_sample_id():
    """All candidates are equally similar, so the first by id wins."""
    query = np.array([[1.0, 0.0]])
    retrieval = np.array([[0.0, 1.0]] * 3)
    pools = pools_from(query, "b", retrieval, "abb")
    assert recall_at_k(pools, A, V, [1, 2]) == {1: 0.0, 2: 1.0}


def test_pools_must_share_groups():
    embeddings = np.eye(2)
    with pytest.raises(PoolMismatch):
        pools_from(embeddings, "ab", embeddings, "aa")


def brute_force_recall(pools: RetrievalPools, k: int) -> float:
    """Full sort of (-similarity, id) tuples for every query."""
    hits = 0
    for q, group in enumerate(pools.query.groups):
        ranked = sorted(
            (-float(pools.query.embeddings[A][q] @ pools.retrieval.embeddings[V][r]), pools.retrieval.ids[r], pools.retrieval.groups[r])
            for r in range(len(pools.retrieval))
        )
        hits += any(g == group for _, _, g in ranked[:k])
    return hits / len(pools.query.groups)


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force(seed):
    rng = make_rng(seed)
    num_groups = int(rng.integers(2, 8))
    n_query = int(rng.integers(num_groups, 50))
    n_retrieval = int(rng.integers(num_groups, 50))
    query_groups = [str(g) for g in rng.integers(0, num_groups, size=n_query)]
    retrieval_groups = [str(g % num_groups) for g in range(n_retrieval)]
    # Coarse values make exact similarity ties likely
    query = np.round(rng.standard_normal((n_query, 3)))
    query[np.all(query == 0, axis=1)] = 1.0
    retrieval = np.round(rng.standard_normal((n_retrieval, 3)))
    pools = pools_from(query, query_groups, retrieval, retrieval_groups)

    ks = [1, 3, n_retrieval]
    recalls = recall_at_k(pools, A, V, ks)
    for k in ks:
        assert abs(recalls[k] - brute_force_recall(pools, k)) < 1e-12
    assert recalls[1] <= recalls[3] <= recalls[n_retrieval]


def test_chance_recall_matches_closed_form():
    """One query whose group has m of N candidates: P(hit in k) = 1 - C(N-m, k) / C(N, k)."""
    pools = pools_from(np.eye(3)[:1], "a", np.eye(3)[[0, 1, 2, 0, 1, 2]], "aabbbb")
    expected = 1 - comb(4, 3) / comb(6, 3)
    assert abs(chance_recall_at_k(pools, [3])[3] - expected) < 1e-12


def test_random_embeddings_recall_close_to_chance():
    rng = make_rng(4)
    n = 2_000
    groups = [str(g) for g in rng.integers(0, 20, size=n)]
    records = [make_record(i, f"{g}/x") for i, g in enumerate(groups)]
    pools = build_pools(records, random_embeddings(n, dim=8, seed=5))
    measured = recall_at_k(pools, A, V, [10])[10]
    chance = chance_recall_at_k(pools, [10])[10]
    assert abs(measured - chance) < 0.05
