"""Contrastive and consensus objectives over a batch of unit-norm embeddings.

All functions return the loss together with its analytic gradient w.r.t. each
modality's embedding matrix. Gradients treat the rows as free vectors; the
projection onto the sphere is handled by `encoders.encode_backward`.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import permutations

import numpy as np
from scipy.special import log_softmax, softmax

from .common import (
    MODALITIES,
    InvalidConfig,
    ModalityId,
    NonFiniteValue,
    OutOfRange,
    ShapeMismatch,
)
from .numerics import Array, check_finite

logger = logging.getLogger(__name__)

Pair = tuple[ModalityId, ModalityId]
Grads = dict[ModalityId, Array]

ALL_PAIRS: tuple[Pair, ...] = tuple(permutations(MODALITIES, 2))
"""The six ordered modality pairs, in canonical order."""

SIM_TOLERANCE = 1e-9


class ConsensusGradient(Enum):
    DETACHED = "detached"
    """The consensus score is a constant target."""
    FULL = "full"
    """Gradients also flow through the consensus score."""


def symmetric_pairs(a: ModalityId, b: ModalityId) -> tuple[Pair, ...]:
    return ((a, b), (b, a))


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    anchor: ModalityId = ModalityId.AUDIO
    alpha: dict[ModalityId, float] = field(
        default_factory=lambda: {
            ModalityId.AUDIO: 1.0,
            ModalityId.VIDEO: 0.5,
            ModalityId.LANGUAGE: 1.0,
        }
    )
    consensus_gradient: ConsensusGradient = ConsensusGradient.DETACHED
    pair_set: tuple[Pair, ...] = ALL_PAIRS
    consensus_weight: float = 1.0
    """Multiplier on the consensus term of the combined loss. 1.0 is the plain sum."""

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise InvalidConfig(f"temperature must be positive, got {self.temperature}")
        for modality in self.non_anchor:
            if not self.alpha.get(modality, 0.0) > 0:
                raise InvalidConfig(f"alpha for {modality.key} must be positive")
        for i, j in self.pair_set:
            if i == j:
                raise InvalidConfig(f"Pair ({i.key}, {j.key}) must use two modalities")

    @property
    def non_anchor(self) -> tuple[ModalityId, ...]:
        return tuple(m for m in MODALITIES if m != self.anchor)


@dataclass
class BatchEmbeddings:
    embeddings: dict[ModalityId, Array]

    def __post_init__(self) -> None:
        sizes = {e.shape[0] for e in self.embeddings.values()}
        if len(sizes) != 1:
            raise ShapeMismatch(f"Modalities have different batch sizes: {sorted(sizes)}")

    def __getitem__(self, modality: ModalityId) -> Array:
        return self.embeddings[modality]

    @property
    def size(self) -> int:
        return next(iter(self.embeddings.values())).shape[0]

    def anchor_similarities(self, anchor: ModalityId) -> dict[ModalityId, Array]:
        """Per-sample cosine similarity of every non-anchor modality with the anchor."""
        e_a = self.embeddings[anchor]
        return {
            m: np.sum(e * e_a, axis=1) for m, e in self.embeddings.items() if m != anchor
        }


@dataclass(frozen=True)
class LossParts:
    contrastive: float | None
    consensus: float | None

    @property
    def total(self) -> float:
        return (self.contrastive or 0.0) + (self.consensus or 0.0)


def _zero_grads(batch: BatchEmbeddings) -> Grads:
    return {m: np.zeros_like(e) for m, e in batch.embeddings.items()}


def infonce_pair(e_i: Array, e_j: Array, temperature: float) -> tuple[float, Array, Array]:
    """InfoNCE of modality i against modality j, with negatives drawn from j.

    Returns (loss, dL/dE_i, dL/dE_j)."""
    if e_i.shape != e_j.shape or e_i.ndim != 2 or e_i.shape[0] < 1:
        raise ShapeMismatch(f"Incompatible batch shapes {e_i.shape} and {e_j.shape}")
    if not temperature > 0:
        raise InvalidConfig(f"temperature must be positive, got {temperature}")

    n = e_i.shape[0]
    logits = (e_i @ e_j.T) / temperature
    check_finite(logits, "InfoNCE logits")
    # log_softmax subtracts the row max internally
    log_probs = log_softmax(logits, axis=1)
    loss = -float(np.trace(log_probs)) / n

    d_logits = softmax(logits, axis=1)
    d_logits[np.diag_indices(n)] -= 1.0
    d_logits /= n * temperature
    grad_i = d_logits @ e_j
    grad_j = d_logits.T @ e_i

    if not np.isfinite(loss):
        raise NonFiniteValue("InfoNCE loss is not finite")
    return loss, grad_i, grad_j


def contrastive_total(batch: BatchEmbeddings, cfg: LossConfig) -> tuple[float, Grads]:
    """Sum of `infonce_pair` over the configured ordered pairs."""
    if not cfg.pair_set:
        raise InvalidConfig("pair_set must not be empty")
    grads = _zero_grads(batch)
    total = 0.0
    for i, j in cfg.pair_set:
        loss, grad_i, grad_j = infonce_pair(batch[i], batch[j], cfg.temperature)
        total += loss
        grads[i] += grad_i
        grads[j] += grad_j
    return total, grads


def _clamp_similarity(x: Array) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -1.0 - SIM_TOLERANCE) or np.any(x > 1.0 + SIM_TOLERANCE):
        raise OutOfRange(f"Similarity outside [-1, 1]: {x}")
    return np.clip(x, -1.0, 1.0)


def scale(x: float | Array, alpha: float) -> float | Array:
    """Modality-specific scaling ((x + 1) / 2) ** alpha, mapping [-1, 1] onto [0, 1]."""
    if not alpha > 0:
        raise InvalidConfig(f"alpha must be positive, got {alpha}")
    result = ((_clamp_similarity(x) + 1.0) / 2.0) ** alpha
    return float(result) if np.ndim(result) == 0 else result


def scale_inverse(y: float | Array, alpha: float) -> float | Array:
    """Inverse of `scale`: maps a scaled score in [0, 1] back to [-1, 1]."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < -SIM_TOLERANCE) or np.any(y > 1.0 + SIM_TOLERANCE):
        raise OutOfRange(f"Scaled score outside [0, 1]: {y}")
    result = 2.0 * np.clip(y, 0.0, 1.0) ** (1.0 / alpha) - 1.0
    return float(result) if np.ndim(result) == 0 else result


def consensus_scores(
    similarities: dict[ModalityId, Array], cfg: LossConfig
) -> tuple[Array, Array]:
    """Batched consensus score.

    For each sample, picks the non-anchor modality with the lowest scaled similarity
    (ties go to the earlier modality) and returns its raw similarity, i.e.
    K_k^-1(K_k(s_k)) for the bottleneck modality k.

    Returns (scores, bottleneck modality codes)."""
    modalities = sorted(similarities)
    if not modalities or ModalityId(cfg.anchor) in modalities:
        raise ShapeMismatch("Need one similarity per non-anchor modality")
    raw = np.stack([_clamp_similarity(similarities[m]) for m in modalities])
    scaled = np.stack([scale(raw[k], cfg.alpha[m]) for k, m in enumerate(modalities)])
    scaled = np.atleast_2d(scaled.reshape(len(modalities), -1))
    raw = raw.reshape(len(modalities), -1)

    # argmin returns the first minimum, which is the earliest modality
    best = np.argmin(scaled, axis=0)
    columns = np.arange(raw.shape[1])
    codes = np.array([modalities[k].value for k in best], dtype=np.int64)
    return raw[best, columns], codes


def consensus_score(
    anchor_sims: dict[ModalityId, float], cfg: LossConfig
) -> tuple[float, ModalityId]:
    scores, codes = consensus_scores(
        {m: np.array([s], dtype=np.float64) for m, s in anchor_sims.items()}, cfg
    )
    return float(scores[0]), ModalityId(int(codes[0]))


def consensus_loss(
    batch: BatchEmbeddings,
    cfg: LossConfig,
    target: Array | None = None,
) -> tuple[float, Grads]:
    """Mean over the batch of sum_i |s_i - c| over non-anchor modalities i.

    `target` overrides the consensus score (it must then be held fixed, e.g. in a
    gradient check); by default it is computed from the batch."""
    n = batch.size
    if n < 1:
        raise ShapeMismatch("Batch must not be empty")
    anchor = cfg.anchor
    sims = batch.anchor_similarities(anchor)
    if target is None:
        target, codes = consensus_scores(sims, cfg)
    else:
        codes = None
    if target.shape != (n,):
        raise ShapeMismatch(f"Consensus target has shape {target.shape}, expected ({n},)")

    grads = _zero_grads(batch)
    e_a = batch[anchor]
    total = 0.0
    for modality, s in sims.items():
        diff = s - target
        total += float(np.sum(np.abs(diff)))
        # np.sign(0) == 0 gives the zero subgradient at the kink
        weight = (np.sign(diff) / n)[:, None]
        grads[modality] += weight * e_a
        grads[anchor] += weight * batch[modality]

        if cfg.consensus_gradient is ConsensusGradient.FULL and codes is not None:
            # c = s_k for the bottleneck modality k
            for bottleneck in sims:
                rows = codes == bottleneck.value
                if not np.any(rows):
                    continue
                w = np.where(rows, -np.sign(diff) / n, 0.0)[:, None]
                grads[bottleneck] += w * e_a
                grads[anchor] += w * batch[bottleneck]
    return total / n, grads


def mc3_loss(
    batch: BatchEmbeddings,
    cfg: LossConfig,
    target: Array | None = None,
) -> tuple[float, Grads, LossParts]:
    """Contrastive plus consensus loss."""
    contrastive, grads = contrastive_total(batch, cfg)
    consensus, consensus_grads = consensus_loss(batch, cfg, target)
    for modality, grad in consensus_grads.items():
        grads[modality] += cfg.consensus_weight * grad
    weighted = cfg.consensus_weight * consensus
    return contrastive + weighted, grads, LossParts(contrastive, weighted)
