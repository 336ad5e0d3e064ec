import logging
from dataclasses import dataclass

import numpy as np

from .common import MODALITIES, MissingLabel, ModalityId
from .corpus import Corpus
from .encoders import EncoderParams, encode_batch
from .losses import Pair
from .metrics import ScoredLabel, pr_auc, roc_auc
from .numerics import Array

logger = logging.getLogger(__name__)

A, V, L = MODALITIES
DISCOVERY_PAIRS: tuple[Pair, ...] = ((A, V), (A, L))


def embed_corpus(corpus: Corpus, encoders: EncoderParams) -> dict[ModalityId, Array]:
    """Unit embeddings for every record, one matrix per modality."""
    return {m: encode_batch(encoders, m, corpus.features(m)).e for m in MODALITIES}


def cosine_scores(e_i: Array, e_j: Array) -> Array:
    """Row-wise cosine similarity of unit embeddings, clipped to [-1, 1]."""
    return np.clip(np.sum(e_i * e_j, axis=1), -1.0, 1.0)


def discovery_scores(
    corpus: Corpus,
    encoders: EncoderParams,
    pair: Pair = (A, V),
    embeddings: dict[ModalityId, Array] | None = None,
) -> list[ScoredLabel]:
    """Scores each record by the cosine similarity of its two modality embeddings.
    A high score predicts a sounding action."""
    missing = [r.id for r in corpus.records if r.sounding is None]
    if missing:
        raise MissingLabel(
            f"{len(missing)} records have no sounding label (first: {missing[0]})"
        )
    if embeddings is None:
        embeddings = embed_corpus(corpus, encoders)
    i, j = pair
    scores = cosine_scores(embeddings[i], embeddings[j])
    return [
        ScoredLabel(score=float(score), label=int(record.sounding or 0), sample_id=record.id)
        for score, record in zip(scores, corpus.records)
    ]


@dataclass(frozen=True)
class DiscoveryResult:
    pair: Pair
    roc_auc: float
    pr_auc: float
    scored: list[ScoredLabel]

    @property
    def name(self) -> str:
        return "".join(m.short for m in self.pair)


def evaluate_discovery(
    corpus: Corpus,
    encoders: EncoderParams,
    pairs: tuple[Pair, ...] = DISCOVERY_PAIRS,
) -> list[DiscoveryResult]:
    embeddings = embed_corpus(corpus, encoders)
    results = []
    for pair in pairs:
        scored = discovery_scores(corpus, encoders, pair, embeddings)
        result = DiscoveryResult(pair, roc_auc(scored), pr_auc(scored), scored)
        logger.info(f"Discovery {result.name}: ROC-AUC {result.roc_auc:.4f}, PR-AUC {result.pr_auc:.4f}")
        results.append(result)
    return results
