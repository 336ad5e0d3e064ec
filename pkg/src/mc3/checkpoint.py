"""Training checkpoints: encoder weights plus the state needed to resume.

A checkpoint is an encoder weights block (see `encoders`) optionally followed by a
training trailer (little-endian):

    magic         4 bytes  b"MC3T"
    version       u32      1
    epochs_done   u32      epochs completed, counted across both stages
    global_step   u64
    adam_step     u64
    lr, beta1, beta2, eps  4 x float64
    entries       u32      number of parameters with moments
    per entry:    u16 name length, UTF-8 name, then m and v as float64 in the
                  parameter's shape
    config_len    u32
    config        UTF-8 JSON echo of the training config

A file without a trailer is a plain weights file and loads with empty training state.
"""

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from .common import BadMagic, CorruptCheckpoint, VersionMismatch
from .encoders import EncoderParams, read_params, write_params
from .files import atomic_write_bytes
from .numerics import AdamState, Array

logger = logging.getLogger(__name__)

TRAILER_MAGIC = b"MC3T"
TRAILER_VERSION = 1
_TRAILER = struct.Struct("<4sIIQQddddI")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@dataclass
class TrainingCheckpoint:
    params: EncoderParams
    optimizer: AdamState | None = None
    epochs_done: int = 0
    global_step: int = 0
    config: dict[str, Any] = field(default_factory=dict)


def _read(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise CorruptCheckpoint(f"File ends inside {what}")
    return data


def encode_checkpoint(checkpoint: TrainingCheckpoint) -> bytes:
    out = io.BytesIO()
    write_params(checkpoint.params, out)
    state = checkpoint.optimizer or AdamState(lr=0.0)
    flat = checkpoint.params.flat()
    entries = [name for name in flat if name in state.m and name in state.v]
    out.write(
        _TRAILER.pack(
            TRAILER_MAGIC,
            TRAILER_VERSION,
            checkpoint.epochs_done,
            checkpoint.global_step,
            state.step,
            state.lr,
            state.beta1,
            state.beta2,
            state.eps,
            len(entries),
        )
    )
    for name in entries:
        encoded = name.encode("utf-8")
        out.write(_U16.pack(len(encoded)))
        out.write(encoded)
        out.write(np.ascontiguousarray(state.m[name], dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(state.v[name], dtype="<f8").tobytes())
    config = json.dumps(checkpoint.config, sort_keys=True).encode("utf-8")
    out.write(_U32.pack(len(config)))
    out.write(config)
    return out.getvalue()


def save_checkpoint(checkpoint: TrainingCheckpoint, path: Path) -> None:
    atomic_write_bytes(Path(path), encode_checkpoint(checkpoint))
    logger.debug(f"Saved checkpoint to {path} after {checkpoint.epochs_done} epochs")


def read_checkpoint(source: BinaryIO, expected_latent_dim: int | None = None) -> TrainingCheckpoint:
    try:
        params = read_params(source, expected_latent_dim)
    except BadMagic as e:
        raise CorruptCheckpoint(str(e)) from e

    head = source.read(_TRAILER.size)
    if not head:
        return TrainingCheckpoint(params=params)
    if len(head) != _TRAILER.size:
        raise CorruptCheckpoint("File ends inside the training trailer")
    (magic, version, epochs_done, global_step, adam_step, lr, beta1, beta2, eps, n_entries) = (
        _TRAILER.unpack(head)
    )
    if magic != TRAILER_MAGIC:
        raise CorruptCheckpoint(f"Expected trailer magic {TRAILER_MAGIC!r}, got {magic!r}")
    if version != TRAILER_VERSION:
        raise VersionMismatch(f"Unsupported checkpoint trailer version {version}")

    flat = params.flat()
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=adam_step)
    for _ in range(n_entries):
        (length,) = _U16.unpack(_read(source, _U16.size, "moment name"))
        try:
            name = _read(source, length, "moment name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptCheckpoint("Moment name is not valid UTF-8") from e
        if name not in flat:
            raise CorruptCheckpoint(f"Moments for unknown parameter {name!r}")
        shape = flat[name].shape
        size = int(np.prod(shape)) * 8

        def read_moment() -> Array:
            raw = _read(source, size, f"moments of {name}")
            return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

        state.m[name] = read_moment()
        state.v[name] = read_moment()

    (config_len,) = _U32.unpack(_read(source, _U32.size, "config length"))
    try:
        config = json.loads(_read(source, config_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"Config echo is not valid JSON: {e}") from e
    if source.read(1):
        raise CorruptCheckpoint("Unexpected bytes after the config echo")

    return TrainingCheckpoint(
        params=params,
        optimizer=state,
        epochs_done=epochs_done,
        global_step=global_step,
        config=config,
    )


def load_checkpoint(path: Path, expected_latent_dim: int | None = None) -> TrainingCheckpoint:
    with open(path, "rb") as f:
        return read_checkpoint(f, expected_latent_dim)


def resume(path: Path, expected_latent_dim: int | None = None) -> TrainingCheckpoint:
    """Loads a checkpoint to continue training from. Alias of `load_checkpoint` that
    logs where training will pick up."""
    checkpoint = load_checkpoint(path, expected_latent_dim)
    logger.info(
        f"Resuming from {path}: {checkpoint.epochs_done} epochs done, "
        f"step {checkpoint.global_step}"
    )
    return checkpoint
