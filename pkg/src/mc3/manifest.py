"""JSONL manifests: one sample record per line.

    {"id": "s00042", "audio": {"bank": "audio.mc3f", "row": 42},
     "video": {...}, "language": {...}, "sounding": 1,
     "verb": "cut", "noun": "onion", "split": "test", "t": 12.5}

Bank paths are relative to the manifest's directory. Unknown keys are ignored.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .common import MODALITIES, DanglingReference, ModalityId, ParseError, Split
from .feature_bank import BankHeader, read_bank_header
from .files import atomic_write_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureRef:
    bank: str
    row: int


@dataclass(frozen=True)
class SampleRecord:
    id: str
    features: Mapping[ModalityId, FeatureRef]
    split: Split
    sounding: int | None = None
    verb: str | None = None
    noun: str | None = None
    timestamp: float | None = None

    @property
    def group(self) -> str | None:
        """Action group tag, "verb/noun"; None unless both are present."""
        if self.verb is None or self.noun is None:
            return None
        return f"{self.verb}/{self.noun}"

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {"id": self.id}
        for modality in MODALITIES:
            ref = self.features[modality]
            data[modality.key] = {"bank": ref.bank, "row": ref.row}
        data["split"] = self.split.value
        if self.sounding is not None:
            data["sounding"] = self.sounding
        if self.verb is not None:
            data["verb"] = self.verb
        if self.noun is not None:
            data["noun"] = self.noun
        if self.timestamp is not None:
            data["t"] = self.timestamp
        return data


def _optional_tag(data: Mapping[str, Any], key: str, line: int) -> str | None:
    value = data.get(key)
    if value is None:
        return None
    if not isinstance(value, str) or not value.strip():
        raise ParseError(f"{key!r} must be a non-empty string", line)
    return value


def parse_record(data: Any, line: int) -> SampleRecord:
    if not isinstance(data, dict):
        raise ParseError("expected a JSON object", line)
    if "id" not in data:
        raise ParseError("missing 'id'", line)

    features: dict[ModalityId, FeatureRef] = {}
    for modality in MODALITIES:
        ref = data.get(modality.key)
        if not isinstance(ref, dict) or "bank" not in ref or "row" not in ref:
            raise ParseError(f"missing or malformed {modality.key!r} reference", line)
        row = ref["row"]
        if not isinstance(row, int) or isinstance(row, bool) or row < 0:
            raise ParseError(f"{modality.key!r} row must be a non-negative integer", line)
        features[modality] = FeatureRef(bank=str(ref["bank"]), row=row)

    try:
        split = Split(data.get("split", Split.TRAIN.value))
    except ValueError:
        raise ParseError(f"unknown split {data.get('split')!r}", line)

    sounding = data.get("sounding")
    if sounding is not None and sounding not in (0, 1):
        raise ParseError(f"'sounding' must be 0 or 1, got {sounding!r}", line)

    timestamp = data.get("t")
    if timestamp is not None and not isinstance(timestamp, (int, float)):
        raise ParseError("'t' must be a number", line)

    return SampleRecord(
        id=str(data["id"]),
        features=features,
        split=split,
        sounding=None if sounding is None else int(sounding),
        verb=_optional_tag(data, "verb", line),
        noun=_optional_tag(data, "noun", line),
        timestamp=None if timestamp is None else float(timestamp),
    )


def load_manifest(path: Path, *, check_references: bool = True) -> list[SampleRecord]:
    """Parses and validates a manifest. Records keep file order."""
    path = Path(path)
    records: list[SampleRecord] = []
    with open(path, "rb") as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(f"invalid UTF-8 at byte {e.start}", line_number)
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", line_number)
            records.append(parse_record(data, line_number))

    if check_references:
        check_manifest_references(records, path.parent)
    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def check_manifest_references(records: Iterable[SampleRecord], root: Path) -> None:
    """Raises DanglingReference if a record points past the end of its bank."""
    headers: dict[str, BankHeader] = {}
    for record in records:
        for modality, ref in record.features.items():
            if ref.bank not in headers:
                headers[ref.bank] = read_bank_header(root / ref.bank)
            header = headers[ref.bank]
            if header.modality != modality:
                raise DanglingReference(
                    f"Record {record.id}: bank {ref.bank} holds {header.modality.key}, "
                    f"not {modality.key}"
                )
            if ref.row >= header.count:
                raise DanglingReference(
                    f"Record {record.id}: row {ref.row} of {ref.bank} does not exist "
                    f"({header.count} rows)"
                )


def write_manifest(records: Iterable[SampleRecord], path: Path) -> None:
    lines = [json.dumps(record.to_json(), sort_keys=False) for record in records]
    atomic_write_text(Path(path), "".join(line + "\n" for line in lines))
    logger.info(f"Wrote {len(lines)} records to {path}")
