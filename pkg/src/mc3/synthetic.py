"""Synthetic corpus with controlled agreement between audio, video and language.

Each sample has an action concept z and one of five agreement regions:

    I    all agree      A, V, L all carry z
    II   AV only        A and V share an ambient distractor z' != z, L carries z
    III  VL only        V and L carry z, A carries unrelated content
    IV   AL only        A and L carry z, V shows an unrelated concept z'' != z
    V    none           all three carry unrelated content

Action content reaches modality m through a fixed mixing map W_m. The shared
distractor of region II (correlated background sound and visuals) goes through a
separate ambient map D_m, scaled by `ambient_scale`, so it is correlated across A
and V without looking like an action. A sample is sounding iff it is in region I.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import product

import numpy as np

from .common import MODALITIES, InvalidConfig, ModalityId, Split
from .feature_bank import FeatureBank
from .manifest import FeatureRef, SampleRecord
from .numerics import Array, make_rng

logger = logging.getLogger(__name__)

VERBS = (
    "cut", "open", "close", "wash", "pour", "stir",
    "knock", "scrape", "type", "hammer", "drop", "fold",
)  # fmt: skip
NOUNS = (
    "onion", "door", "bottle", "cabinet", "bowl", "pan",
    "keyboard", "board", "tap", "nail", "paper", "lid",
)  # fmt: skip


class RegionLabel(Enum):
    I_ALL_AGREE = 0
    II_AV_ONLY = 1
    III_VL_ONLY = 2
    IV_AL_ONLY = 3
    V_NONE = 4


def bank_filename(modality: ModalityId) -> str:
    return f"{modality.key}.mc3f"


@dataclass(frozen=True)
class SynthConfig:
    num_samples: int = 12_500
    num_concepts: int = 100
    concept_dim: int = 16
    dims: dict[ModalityId, int] = field(
        default_factory=lambda: {
            ModalityId.AUDIO: 64,
            ModalityId.VIDEO: 96,
            ModalityId.LANGUAGE: 48,
        }
    )
    region_probs: tuple[float, float, float, float, float] = (0.4, 0.2, 0.15, 0.15, 0.1)
    noise: float = 0.5
    ambient_scale: float = 0.3
    """Amplitude of the region II distractor relative to action content."""
    train_fraction: float = 0.8
    val_fraction: float = 0.04
    seed: int = 0

    def __post_init__(self) -> None:
        probs = np.asarray(self.region_probs, dtype=np.float64)
        if probs.shape != (5,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidConfig(
                f"region_probs must be 5 nonnegative values summing to 1, got {self.region_probs}"
            )
        if self.num_concepts < 2:
            raise InvalidConfig(f"num_concepts must be >= 2, got {self.num_concepts}")
        if self.num_concepts > len(VERBS) * len(NOUNS):
            raise InvalidConfig(
                f"num_concepts must be <= {len(VERBS) * len(NOUNS)}, got {self.num_concepts}"
            )
        if self.num_samples < 1:
            raise InvalidConfig(f"num_samples must be >= 1, got {self.num_samples}")
        if self.concept_dim < 1:
            raise InvalidConfig(f"concept_dim must be >= 1, got {self.concept_dim}")
        if set(self.dims) != set(MODALITIES) or min(self.dims.values()) < 1:
            raise InvalidConfig(f"dims must give a positive size per modality, got {self.dims}")
        if self.noise < 0:
            raise InvalidConfig(f"noise must be >= 0, got {self.noise}")
        if self.ambient_scale < 0:
            raise InvalidConfig(f"ambient_scale must be >= 0, got {self.ambient_scale}")
        if not (
            0 <= self.train_fraction
            and 0 <= self.val_fraction
            and self.train_fraction + self.val_fraction <= 1
        ):
            raise InvalidConfig(
                "train_fraction and val_fraction must be nonnegative and sum to at most 1"
            )


@dataclass
class SyntheticCorpus:
    banks: dict[ModalityId, FeatureBank]
    records: list[SampleRecord]
    regions: Array
    """Region code per sample (`RegionLabel` values)."""
    concepts: Array
    """Action concept id per sample."""
    content: dict[ModalityId, Array]
    """The latent content each modality received, before mixing and noise."""


def concept_groups(num_concepts: int, rng: np.random.Generator) -> list[tuple[str, str]]:
    """Assigns each concept a distinct (verb, noun) pair."""
    pairs = list(product(VERBS, NOUNS))
    order = rng.permutation(len(pairs))[:num_concepts]
    return [pairs[i] for i in order]


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> Array:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_synthetic(cfg: SynthConfig) -> SyntheticCorpus:
    rng = make_rng(cfg.seed)
    n, k, c = cfg.num_samples, cfg.concept_dim, cfg.num_concepts

    concept_vectors = _unit_rows(rng, c, k)
    action_maps = {m: rng.standard_normal((k, cfg.dims[m])) for m in MODALITIES}
    ambient_maps = {m: rng.standard_normal((k, cfg.dims[m])) for m in MODALITIES}
    groups = concept_groups(c, rng)

    regions = rng.choice(len(RegionLabel), size=n, p=np.asarray(cfg.region_probs))
    concepts = rng.integers(c, size=n)
    # Adding an offset in [1, c) modulo c never lands on the sample's own concept
    shared_distractor = (concepts + rng.integers(1, c, size=n)) % c
    visual_distractor = (concepts + rng.integers(1, c, size=n)) % c
    unrelated = {m: _unit_rows(rng, n, k) for m in MODALITIES}

    z = concept_vectors[concepts]
    z_shared = concept_vectors[shared_distractor]
    z_visual = concept_vectors[visual_distractor]
    region = {label: (regions == label.value)[:, None] for label in RegionLabel}

    A, V, L = MODALITIES
    action = {
        A: np.where(region[RegionLabel.I_ALL_AGREE] | region[RegionLabel.IV_AL_ONLY], z, unrelated[A]),
        V: np.where(
            region[RegionLabel.IV_AL_ONLY],
            z_visual,
            np.where(region[RegionLabel.V_NONE], unrelated[V], z),
        ),
        L: np.where(region[RegionLabel.V_NONE], unrelated[L], z),
    }
    ambient = {m: np.zeros((n, k)) for m in MODALITIES}
    for m in (A, V):
        action[m] = np.where(region[RegionLabel.II_AV_ONLY], 0.0, action[m])
        ambient[m] = np.where(region[RegionLabel.II_AV_ONLY], z_shared, 0.0)

    banks: dict[ModalityId, FeatureBank] = {}
    content: dict[ModalityId, Array] = {}
    for m in MODALITIES:
        noise = cfg.noise * rng.standard_normal((n, cfg.dims[m]))
        features = (
            action[m] @ action_maps[m]
            + cfg.ambient_scale * ambient[m] @ ambient_maps[m]
            + noise
        )
        # Round through float32 so the in-memory bank equals what is saved to disk
        features = features.astype(np.float32).astype(np.float64)
        banks[m] = FeatureBank(modality=m, features=features)
        content[m] = action[m] + ambient[m]

    splits = _assign_splits(cfg, rng)
    timestamps = np.round(rng.uniform(0.0, 600.0, size=n), 2)

    records = []
    for i in range(n):
        verb, noun = groups[concepts[i]]
        records.append(
            SampleRecord(
                id=f"s{i:06d}",
                features={m: FeatureRef(bank_filename(m), i) for m in MODALITIES},
                split=splits[i],
                sounding=int(regions[i] == RegionLabel.I_ALL_AGREE.value),
                verb=verb,
                noun=noun,
                timestamp=float(timestamps[i]),
            )
        )

    counts = np.bincount(regions, minlength=len(RegionLabel))
    logger.info(
        f"Generated {n} samples over {c} concepts; region counts "
        + ", ".join(f"{label.name}={count}" for label, count in zip(RegionLabel, counts))
    )
    return SyntheticCorpus(
        banks=banks, records=records, regions=regions, concepts=concepts, content=content
    )


def _assign_splits(cfg: SynthConfig, rng: np.random.Generator) -> list[Split]:
    n = cfg.num_samples
    num_train = int(round(cfg.train_fraction * n))
    num_val = min(int(round(cfg.val_fraction * n)), n - num_train)
    splits = [Split.TEST] * n
    order = rng.permutation(n)
    for i in order[:num_train]:
        splits[i] = Split.TRAIN
    for i in order[num_train : num_train + num_val]:
        splits[i] = Split.VAL
    return splits
