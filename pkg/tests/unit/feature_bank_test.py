import numpy as np
import pytest

from mc3.common import (
    BadMagic,
    ModalityId,
    NonFiniteValue,
    TrailingData,
    TruncatedFile,
    VersionMismatch,
)
from mc3.feature_bank import FeatureBank, encode_bank, load_bank, read_bank_header, save_bank
from mc3.numerics import make_rng


def float32_bank(rows: int = 4, dim: int = 3) -> FeatureBank:
    features = make_rng(0).standard_normal((rows, dim)).astype(np.float32).astype(np.float64)
    return FeatureBank(modality=ModalityId.VIDEO, features=features)


def test_round_trip_is_bit_exact(tmp_path):
    bank = float32_bank()
    path = tmp_path / "video.mc3f"
    save_bank(bank, path)
    loaded = load_bank(path)
    assert loaded.modality is ModalityId.VIDEO
    assert np.array_equal(loaded.features, bank.features)


def test_header_layout():
    data = encode_bank(float32_bank(rows=2, dim=5))
    assert data[:4] == b"MC3F"
    assert data[8] == ModalityId.VIDEO.value
    assert np.array_equal(
        np.frombuffer(data[17:], dtype="<f4").reshape(2, 5), float32_bank(rows=2, dim=5).features
    )
    assert len(data) == 17 + 2 * 5 * 4


def test_read_header_only(tmp_path):
    path = tmp_path / "video.mc3f"
    save_bank(float32_bank(rows=7, dim=2), path)
    header = read_bank_header(path)
    assert (header.modality, header.count, header.dim) == (ModalityId.VIDEO, 7, 2)


def test_bad_magic(tmp_path):
    path = tmp_path / "bank.mc3f"
    path.write_bytes(b"NOPE" + encode_bank(float32_bank())[4:])
    with pytest.raises(BadMagic):
        load_bank(path)


def test_version_mismatch(tmp_path):
    data = bytearray(encode_bank(float32_bank()))
    data[4] = 2
    path = tmp_path / "bank.mc3f"
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        load_bank(path)


def test_truncated_payload(tmp_path):
    """A file whose header declares more rows than the payload holds is rejected."""
    path = tmp_path / "bank.mc3f"
    path.write_bytes(encode_bank(float32_bank(rows=4, dim=3))[: 17 + 2 * 3 * 4])
    with pytest.raises(TruncatedFile, match="declares 4 rows, payload holds 2"):
        load_bank(path)


def test_extra_payload_bytes(tmp_path):
    path = tmp_path / "bank.mc3f"
    path.write_bytes(encode_bank(float32_bank(rows=4, dim=3)) + b"\x00" * 4)
    with pytest.raises(TrailingData, match="4 bytes past"):
        load_bank(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "bank.mc3f"
    path.write_bytes(b"MC3F")
    with pytest.raises(TruncatedFile):
        load_bank(path)


def test_rejects_nan_features():
    with pytest.raises(NonFiniteValue):
        FeatureBank(modality=ModalityId.AUDIO, features=np.array([[1.0, np.nan]]))
