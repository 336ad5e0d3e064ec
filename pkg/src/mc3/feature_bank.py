"""Binary feature banks: one dense matrix of raw features per modality.

File layout (little-endian throughout):

    magic     4 bytes  b"MC3F"
    version   u32      1
    modality  u8       ModalityId code
    count     u32      number of rows
    dim       u32      features per row
    payload   count * dim float32, row-major

Features are held as float64 in memory. A bank whose values are representable in
float32 survives a save/load round trip bit-exactly.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .common import (
    BadMagic,
    ModalityId,
    ShapeMismatch,
    TrailingData,
    TruncatedFile,
    VersionMismatch,
)
from .files import atomic_write_bytes
from .numerics import Array, check_finite

logger = logging.getLogger(__name__)

BANK_MAGIC = b"MC3F"
BANK_VERSION = 1
_HEADER = struct.Struct("<4sIBII")


@dataclass(frozen=True)
class BankHeader:
    modality: ModalityId
    count: int
    dim: int


@dataclass
class FeatureBank:
    modality: ModalityId
    features: Array

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ShapeMismatch(f"Bank features must be 2-D, got shape {self.features.shape}")
        check_finite(self.features, f"{self.modality.key} bank")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def rows(self, indices: Array) -> Array:
        return self.features[indices]


def _parse_header(data: bytes, path: Path) -> BankHeader:
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: file ends inside the header")
    magic, version, code, count, dim = _HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise BadMagic(f"{path}: expected magic {BANK_MAGIC!r}, got {magic!r}")
    if version != BANK_VERSION:
        raise VersionMismatch(f"{path}: unsupported bank version {version}")
    try:
        modality = ModalityId(code)
    except ValueError:
        raise BadMagic(f"{path}: unknown modality code {code}")
    return BankHeader(modality=modality, count=count, dim=dim)


def read_bank_header(path: Path) -> BankHeader:
    """Reads only the header, e.g. to validate manifest references cheaply."""
    with open(path, "rb") as f:
        return _parse_header(f.read(_HEADER.size), path)


def load_bank(path: Path) -> FeatureBank:
    data = Path(path).read_bytes()
    header = _parse_header(data, path)
    expected = header.count * header.dim * 4
    payload = data[_HEADER.size :]
    if len(payload) < expected:
        rows = len(payload) // (4 * header.dim) if header.dim else 0
        raise TruncatedFile(
            f"{path}: header declares {header.count} rows, payload holds {rows}"
        )
    if len(payload) > expected:
        raise TrailingData(
            f"{path}: {len(payload) - expected} bytes past the {header.count}x{header.dim} payload"
        )
    features = (
        np.frombuffer(payload[:expected], dtype="<f4")
        .astype(np.float64)
        .reshape(header.count, header.dim)
    )
    logger.debug(f"Loaded {header.modality.key} bank {path} ({header.count}x{header.dim})")
    return FeatureBank(modality=header.modality, features=features)


def encode_bank(bank: FeatureBank) -> bytes:
    header = _HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.modality.value, bank.count, bank.dim)
    return header + np.ascontiguousarray(bank.features, dtype="<f4").tobytes()


def save_bank(bank: FeatureBank, path: Path) -> None:
    atomic_write_bytes(Path(path), encode_bank(bank))
    logger.debug(f"Saved {bank.modality.key} bank to {path}")
