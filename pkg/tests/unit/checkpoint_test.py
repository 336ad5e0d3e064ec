import numpy as np
import pytest

from mc3.checkpoint import TrainingCheckpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from mc3.common import CorruptCheckpoint, ModalityId, VersionMismatch
from mc3.encoders import init_params, save_params
from mc3.numerics import AdamState, adam_step, make_rng

DIMS = {ModalityId.AUDIO: 4, ModalityId.VIDEO: 5, ModalityId.LANGUAGE: 3}


def trained_checkpoint() -> TrainingCheckpoint:
    params = init_params(DIMS, 2, make_rng(0), latent_dim=6)
    optimizer = AdamState(lr=1e-3)
    grads = {k: np.ones_like(v) for k, v in params.flat().items() if k.startswith("audio")}
    params = params.with_flat(adam_step(optimizer, params.flat(), grads))
    return TrainingCheckpoint(params, optimizer, epochs_done=3, global_step=42, config={"mode": "mc3"})


def test_round_trip(tmp_path):
    checkpoint = trained_checkpoint()
    path = tmp_path / "checkpoint.mc3"
    save_checkpoint(checkpoint, path)
    loaded = load_checkpoint(path, expected_latent_dim=6)

    assert loaded.params.equals(checkpoint.params)
    assert (loaded.epochs_done, loaded.global_step) == (3, 42)
    assert loaded.config == {"mode": "mc3"}
    assert loaded.optimizer is not None and checkpoint.optimizer is not None
    assert loaded.optimizer.step == 1
    assert loaded.optimizer.m.keys() == checkpoint.optimizer.m.keys()
    for name in checkpoint.optimizer.m:
        assert np.array_equal(loaded.optimizer.m[name], checkpoint.optimizer.m[name])
        assert np.array_equal(loaded.optimizer.v[name], checkpoint.optimizer.v[name])


def test_encoding_is_deterministic():
    assert encode_checkpoint(trained_checkpoint()) == encode_checkpoint(trained_checkpoint())


def test_plain_weights_file_loads(tmp_path):
    params = init_params(DIMS, 0, make_rng(0), latent_dim=6)
    path = tmp_path / "weights.mc3"
    save_params(params, path)
    loaded = load_checkpoint(path)
    assert loaded.params.equals(params)
    assert loaded.optimizer is None and loaded.epochs_done == 0


@pytest.mark.parametrize("keep", [0, 10, -1])
def test_truncated_file(tmp_path, keep):
    data = encode_checkpoint(trained_checkpoint())
    path = tmp_path / "checkpoint.mc3"
    path.write_bytes(data[:keep])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_garbage_file(tmp_path):
    path = tmp_path / "checkpoint.mc3"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_latent_dim_mismatch(tmp_path):
    path = tmp_path / "checkpoint.mc3"
    save_checkpoint(trained_checkpoint(), path)
    with pytest.raises(VersionMismatch):
        load_checkpoint(path, expected_latent_dim=8)


def test_bytes_after_config_echo(tmp_path):
    path = tmp_path / "checkpoint.mc3"
    path.write_bytes(encode_checkpoint(trained_checkpoint()) + b"\x00")
    with pytest.raises(CorruptCheckpoint, match="after the config echo"):
        load_checkpoint(path)
