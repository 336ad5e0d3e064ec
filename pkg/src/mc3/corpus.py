import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .common import MODALITIES, DanglingReference, ModalityId, Split
from .feature_bank import FeatureBank, load_bank, save_bank
from .manifest import SampleRecord, load_manifest, write_manifest
from .numerics import Array

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.jsonl"


@dataclass
class Corpus:
    """Records together with the banks they reference.

    Features are gathered once into one dense matrix per modality, aligned with
    `records`."""

    records: list[SampleRecord]
    banks: dict[str, FeatureBank]
    _matrices: dict[ModalityId, Array] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._matrices = {}
        for modality in MODALITIES:
            rows = []
            for record in self.records:
                ref = record.features[modality]
                bank = self.banks.get(ref.bank)
                if bank is None or ref.row >= bank.count:
                    raise DanglingReference(
                        f"Record {record.id}: no row {ref.row} in bank {ref.bank}"
                    )
                rows.append(bank.features[ref.row])
            dim = self._bank_dim(modality)
            self._matrices[modality] = np.array(rows).reshape(len(rows), dim)

    def _bank_dim(self, modality: ModalityId) -> int:
        dims = {b.dim for b in self.banks.values() if b.modality == modality}
        if not dims and not self.records:
            return 0
        if len(dims) != 1:
            raise DanglingReference(f"Expected one {modality.key} feature dim, found {sorted(dims)}")
        return dims.pop()

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dims(self) -> dict[ModalityId, int]:
        return {m: self._matrices[m].shape[1] for m in MODALITIES}

    def features(self, modality: ModalityId, indices: Array | None = None) -> Array:
        matrix = self._matrices[modality]
        return matrix if indices is None else matrix[indices]

    def subset(self, split: Split) -> "Corpus":
        records = [r for r in self.records if r.split == split]
        return Corpus(records=records, banks=self.banks)

    def labeled(self) -> "Corpus":
        return Corpus(records=[r for r in self.records if r.sounding is not None], banks=self.banks)


def load_corpus(manifest_path: Path) -> Corpus:
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path)
    names = sorted({ref.bank for r in records for ref in r.features.values()})
    banks = {name: load_bank(manifest_path.parent / name) for name in names}
    return Corpus(records=records, banks=banks)


def write_corpus(
    out_dir: Path, banks: dict[str, FeatureBank], records: list[SampleRecord]
) -> list[Path]:
    """Writes the banks (keyed by file name) and the manifest. Returns the written
    paths."""
    written = []
    for name, bank in banks.items():
        path = out_dir / name
        save_bank(bank, path)
        written.append(path)
    manifest_path = out_dir / MANIFEST_FILENAME
    write_manifest(records, manifest_path)
    written.append(manifest_path)
    return written


def make_batches(
    records: Sequence[object], batch_size: int, rng: np.random.Generator, drop_last: bool
) -> Iterator[Array]:
    """Yields index arrays over a fresh shuffle of `records`."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(records))
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        if drop_last and len(batch) < batch_size:
            return
        yield batch
