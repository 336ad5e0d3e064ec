from pathlib import Path

import pytest

from mc3.common import ModalityId
from mc3.corpus import MANIFEST_FILENAME, Corpus, load_corpus, write_corpus
from mc3.synthetic import SynthConfig, SyntheticCorpus, bank_filename, generate_synthetic

SMALL_DIMS = {ModalityId.AUDIO: 6, ModalityId.VIDEO: 8, ModalityId.LANGUAGE: 5}


def small_synth_config(**overrides) -> SynthConfig:
    """A corpus small enough to train on in a unit test."""
    values = dict(num_samples=240, num_concepts=4, concept_dim=4, dims=SMALL_DIMS, seed=0)
    values.update(overrides)
    return SynthConfig(**values)


def write_synthetic(out_dir: Path, synthetic: SyntheticCorpus) -> Path:
    banks = {bank_filename(m): bank for m, bank in synthetic.banks.items()}
    write_corpus(out_dir, banks, synthetic.records)
    return out_dir / MANIFEST_FILENAME


@pytest.fixture
def small_synthetic() -> SyntheticCorpus:
    return generate_synthetic(small_synth_config())


@pytest.fixture
def small_manifest(tmp_path: Path, small_synthetic: SyntheticCorpus) -> Path:
    return write_synthetic(tmp_path / "corpus", small_synthetic)


@pytest.fixture
def small_corpus(small_manifest: Path) -> Corpus:
    return load_corpus(small_manifest)
