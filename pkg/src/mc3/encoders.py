"""Per-modality projection heads onto the shared unit sphere.

Each head is either a single affine map (hidden=0) or an affine-nonlinearity-affine
MLP. The output is L2-normalized, so cosine similarity is a dot product everywhere
downstream.

Weights file layout (little-endian throughout):

    magic        4 bytes  b"MC3W"
    version      u32      1
    latent_dim   u32
    activation   u8       0 = tanh, 1 = relu
    per modality, in ModalityId order:
        code     u8
        in_dim   u32
        hidden   u32
    per modality, in ModalityId order, row-major float64:
        w1 (in_dim x out1), b1 (out1), and if hidden > 0: w2 (hidden x latent), b2 (latent)
        where out1 = hidden if hidden > 0 else latent
"""

import io
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .common import (
    MODALITIES,
    BadMagic,
    CorruptCheckpoint,
    InvalidDims,
    ModalityId,
    ShapeMismatch,
    VersionMismatch,
)
from .files import atomic_write_bytes
from .numerics import Array, Params, check_finite, normalize_rows

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"MC3W"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sIIB")
_HEAD_DIMS = struct.Struct("<BII")


class Activation(Enum):
    TANH = 0
    RELU = 1

    def forward(self, x: Array) -> Array:
        match self:
            case Activation.TANH:
                return np.tanh(x)
            case Activation.RELU:
                return np.maximum(x, 0.0)

    def derivative(self, pre: Array, post: Array) -> Array:
        """Elementwise derivative given the pre- and post-activation values."""
        match self:
            case Activation.TANH:
                return 1.0 - post * post
            case Activation.RELU:
                return (pre > 0).astype(np.float64)


@dataclass
class ModalityHead:
    """Weights of one modality's projection head."""

    w1: Array
    b1: Array
    w2: Array | None = None
    b2: Array | None = None

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return 0 if self.w2 is None else self.w1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w1.shape[1] if self.w2 is None else self.w2.shape[1]

    def named(self) -> Params:
        params = {"w1": self.w1, "b1": self.b1}
        if self.w2 is not None and self.b2 is not None:
            params["w2"] = self.w2
            params["b2"] = self.b2
        return params

    def copy(self) -> "ModalityHead":
        return ModalityHead(
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=None if self.w2 is None else self.w2.copy(),
            b2=None if self.b2 is None else self.b2.copy(),
        )


@dataclass
class EncoderParams:
    latent_dim: int
    heads: dict[ModalityId, ModalityHead]
    activation: Activation = Activation.TANH

    def flat(self) -> Params:
        """All parameters keyed as "<modality>.<name>", in canonical order."""
        params: Params = {}
        for modality in MODALITIES:
            for name, value in self.heads[modality].named().items():
                params[f"{modality.key}.{name}"] = value
        return params

    def with_flat(self, params: Mapping[str, Array]) -> "EncoderParams":
        """Returns a copy with parameters replaced from a `flat()`-style mapping."""
        heads = {m: head.copy() for m, head in self.heads.items()}
        for key, value in params.items():
            modality_key, name = key.split(".", 1)
            head = heads[ModalityId.parse(modality_key)]
            setattr(head, name, np.array(value, dtype=np.float64))
        return EncoderParams(self.latent_dim, heads, self.activation)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.latent_dim, {m: h.copy() for m, h in self.heads.items()}, self.activation
        )

    def input_dims(self) -> dict[ModalityId, int]:
        return {m: h.input_dim for m, h in self.heads.items()}

    def equals(self, other: "EncoderParams") -> bool:
        """Bit-exact comparison of all weights."""
        if self.latent_dim != other.latent_dim or self.activation != other.activation:
            return False
        mine, theirs = self.flat(), other.flat()
        return mine.keys() == theirs.keys() and all(
            np.array_equal(mine[k], theirs[k]) for k in mine
        )


@dataclass(frozen=True)
class Embedding:
    vector: Array
    modality: ModalityId
    sample_id: str = ""


@dataclass
class ForwardCache:
    """Intermediate values of a batched forward pass, needed for the backward pass."""

    x: Array
    pre: Array | None
    hidden: Array | None
    z: Array
    norms: Array
    e: Array = field(repr=False)


def init_params(
    dims: Mapping[ModalityId, int],
    hidden: int,
    rng: np.random.Generator,
    *,
    latent_dim: int = 256,
    activation: Activation = Activation.TANH,
) -> EncoderParams:
    """Draws weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    if latent_dim < 1 or hidden < 0:
        raise InvalidDims(f"Invalid latent_dim={latent_dim} or hidden={hidden}")
    if set(dims) != set(MODALITIES):
        raise InvalidDims(f"Need input dims for all modalities, got {sorted(dims)}")

    def affine(fan_in: int, fan_out: int) -> tuple[Array, Array]:
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        return w, b

    heads: dict[ModalityId, ModalityHead] = {}
    for modality in MODALITIES:
        input_dim = dims[modality]
        if input_dim < 1:
            raise InvalidDims(f"{modality.key} input dim must be >= 1, got {input_dim}")
        if hidden == 0:
            w1, b1 = affine(input_dim, latent_dim)
            heads[modality] = ModalityHead(w1, b1)
        else:
            w1, b1 = affine(input_dim, hidden)
            w2, b2 = affine(hidden, latent_dim)
            heads[modality] = ModalityHead(w1, b1, w2, b2)
    return EncoderParams(latent_dim, heads, activation)


def encode_batch(params: EncoderParams, modality: ModalityId, x: Array) -> ForwardCache:
    """Encodes a (batch x input_dim) matrix. The embeddings are `cache.e`."""
    head = params.heads[modality]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.input_dim:
        raise ShapeMismatch(
            f"{modality.key} input has shape {x.shape}, expected (n, {head.input_dim})"
        )

    pre = hidden = None
    if head.w2 is None:
        z = x @ head.w1 + head.b1
    else:
        assert head.b2 is not None
        pre = x @ head.w1 + head.b1
        hidden = params.activation.forward(pre)
        z = hidden @ head.w2 + head.b2
    check_finite(z, f"{modality.key} projection")
    e, norms = normalize_rows(z)
    return ForwardCache(x=x, pre=pre, hidden=hidden, z=z, norms=norms, e=e)


def encode(params: EncoderParams, modality: ModalityId, x: Array, sample_id: str = "") -> Embedding:
    cache = encode_batch(params, modality, np.asarray(x, dtype=np.float64)[None, :])
    return Embedding(vector=cache.e[0], modality=modality, sample_id=sample_id)


def encode_backward(
    params: EncoderParams,
    modality: ModalityId,
    cache: ForwardCache,
    upstream: Array,
) -> tuple[Params, Array]:
    """Backpropagates a gradient w.r.t. the embeddings to the head's parameters and
    inputs. Returns (parameter grads keyed like `ModalityHead.named()`, input grad)."""
    head = params.heads[modality]
    if upstream.shape != cache.e.shape:
        raise ShapeMismatch(f"Upstream grad has shape {upstream.shape}, expected {cache.e.shape}")

    # d(z/|z|)/dz = (I - e e^T) / |z|
    e = cache.e
    radial = np.sum(upstream * e, axis=1, keepdims=True)
    dz = (upstream - e * radial) / cache.norms[:, None]

    grads: Params = {}
    if head.w2 is None:
        grads["w1"] = cache.x.T @ dz
        grads["b1"] = dz.sum(axis=0)
        dx = dz @ head.w1.T
    else:
        assert cache.hidden is not None and cache.pre is not None
        grads["w2"] = cache.hidden.T @ dz
        grads["b2"] = dz.sum(axis=0)
        dh = dz @ head.w2.T
        dpre = dh * params.activation.derivative(cache.pre, cache.hidden)
        grads["w1"] = cache.x.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        dx = dpre @ head.w1.T
    return grads, dx


def write_params(params: EncoderParams, out: BinaryIO) -> None:
    out.write(_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, params.latent_dim, params.activation.value))
    for modality in MODALITIES:
        head = params.heads[modality]
        out.write(_HEAD_DIMS.pack(modality.value, head.input_dim, head.hidden))
    for modality in MODALITIES:
        for value in params.heads[modality].named().values():
            out.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def _read_exact(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise CorruptCheckpoint(f"File ends inside {what}")
    return data


def read_params(source: BinaryIO, expected_latent_dim: int | None = None) -> EncoderParams:
    magic, version, latent_dim, activation_code = _HEADER.unpack(
        _read_exact(source, _HEADER.size, "header")
    )
    if magic != WEIGHTS_MAGIC:
        raise BadMagic(f"Expected magic {WEIGHTS_MAGIC!r}, got {magic!r}")
    if version != WEIGHTS_VERSION:
        raise VersionMismatch(f"Unsupported weights version {version}")
    if expected_latent_dim is not None and latent_dim != expected_latent_dim:
        raise VersionMismatch(
            f"Checkpoint latent dim {latent_dim} does not match expected {expected_latent_dim}"
        )
    try:
        activation = Activation(activation_code)
    except ValueError:
        raise CorruptCheckpoint(f"Unknown activation code {activation_code}")

    layout: list[tuple[ModalityId, int, int]] = []
    for expected in MODALITIES:
        code, input_dim, hidden = _HEAD_DIMS.unpack(_read_exact(source, _HEAD_DIMS.size, "head dims"))
        if code != expected.value:
            raise CorruptCheckpoint(f"Expected modality code {expected.value}, got {code}")
        layout.append((expected, input_dim, hidden))

    def read_matrix(shape: tuple[int, ...], what: str) -> Array:
        count = int(np.prod(shape))
        raw = _read_exact(source, count * 8, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    heads: dict[ModalityId, ModalityHead] = {}
    for modality, input_dim, hidden in layout:
        what = f"{modality.key} weights"
        if hidden == 0:
            heads[modality] = ModalityHead(
                read_matrix((input_dim, latent_dim), what), read_matrix((latent_dim,), what)
            )
        else:
            heads[modality] = ModalityHead(
                read_matrix((input_dim, hidden), what),
                read_matrix((hidden,), what),
                read_matrix((hidden, latent_dim), what),
                read_matrix((latent_dim,), what),
            )
    return EncoderParams(latent_dim, heads, activation)


def save_params(params: EncoderParams, path: Path) -> None:
    buffer = io.BytesIO()
    write_params(params, buffer)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Saved encoder weights to {path}")


def load_params(path: Path, expected_latent_dim: int | None = None) -> EncoderParams:
    with open(path, "rb") as f:
        return read_params(f, expected_latent_dim)
