import json

import pytest

from mc3.common import MODALITIES, DanglingReference, ModalityId, ParseError, Split
from mc3.manifest import FeatureRef, SampleRecord, load_manifest, parse_record, write_manifest


def record_json(**overrides) -> dict:
    data = {
        "id": "s1",
        "audio": {"bank": "audio.mc3f", "row": 0},
        "video": {"bank": "video.mc3f", "row": 0},
        "language": {"bank": "language.mc3f", "row": 0},
        "sounding": 1,
        "verb": "cut",
        "noun": "onion",
        "split": "test",
        "t": 12.5,
    }
    data.update(overrides)
    return data


def test_parse_record():
    record = parse_record(record_json(), line=1)
    assert record.id == "s1"
    assert record.split is Split.TEST
    assert record.sounding == 1
    assert record.group == "cut/onion"
    assert record.timestamp == 12.5
    assert record.features[ModalityId.VIDEO] == FeatureRef("video.mc3f", 0)


def test_optional_fields():
    data = record_json()
    for key in ("sounding", "verb", "noun", "t", "split"):
        del data[key]
    record = parse_record(data, line=1)
    assert record.sounding is None
    assert record.group is None
    assert record.split is Split.TRAIN


def test_to_json_round_trip():
    record = parse_record(record_json(), line=1)
    assert parse_record(record.to_json(), line=1) == record


@pytest.mark.parametrize(
    "overrides",
    [
        {"sounding": 2},
        {"split": "holdout"},
        {"audio": {"bank": "audio.mc3f"}},
        {"video": {"bank": "video.mc3f", "row": -1}},
        {"verb": ""},
        {"t": "noon"},
    ],
)
def test_invalid_records(overrides):
    with pytest.raises(ParseError):
        parse_record(record_json(**overrides), line=3)


def test_parse_error_names_line(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(json.dumps(record_json()) + "\n{not json\n")
    with pytest.raises(ParseError) as excinfo:
        load_manifest(path, check_references=False)
    assert excinfo.value.line == 2
    assert "line 2" in str(excinfo.value)


def test_invalid_utf8_is_a_parse_error(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_bytes(json.dumps(record_json()).encode() + b'\n{"id": "\xff\xfe"}\n')
    with pytest.raises(ParseError) as excinfo:
        load_manifest(path, check_references=False)
    assert excinfo.value.line == 2


def test_empty_manifest(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n")
    assert load_manifest(path) == []


def test_dangling_reference(small_manifest):
    records = load_manifest(small_manifest)
    bad = SampleRecord(
        id="extra",
        features={m: FeatureRef(records[0].features[m].bank, 10_000) for m in MODALITIES},
        split=Split.TRAIN,
    )
    write_manifest([*records, bad], small_manifest)
    with pytest.raises(DanglingReference, match="extra"):
        load_manifest(small_manifest)


def test_missing_bank(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(json.dumps(record_json()) + "\n")
    with pytest.raises(FileNotFoundError):
        load_manifest(path)
