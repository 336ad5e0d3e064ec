"""Run configuration shared by all commands.

A config file is flat `key=value` text (comments with `#`). Keys are the field names
of `RunConfig`; tuples are comma separated. Flags override file values, and every
command writes the resolved config next to its outputs so the run can be repeated
with `--config`.
"""

import logging
import types
import typing
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from dotenv import dotenv_values

from ..common import MODALITIES, InvalidConfig, ModalityId
from ..encoders import Activation
from ..files import atomic_write_text
from ..losses import ALL_PAIRS, ConsensusGradient, LossConfig, Pair
from ..probe import ProbeConfig
from ..synthetic import SynthConfig
from ..trainer import TrainConfig, TrainMode

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILENAME = "resolved_config.env"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: Path = Path("runs")
    manifest: Path | None = None

    # Synthetic corpus
    num_samples: int = 12_500
    num_concepts: int = 100
    concept_dim: int = 16
    dim_audio: int = 64
    dim_video: int = 96
    dim_language: int = 48
    region_probs: tuple[float, ...] = (0.4, 0.2, 0.15, 0.15, 0.1)
    noise: float = 0.5
    ambient_scale: float = 0.3
    train_fraction: float = 0.8
    val_fraction: float = 0.04

    # Encoders
    latent_dim: int = 256
    hidden: int = 0
    activation: Activation = Activation.TANH

    # Loss
    temperature: float = 0.07
    anchor: ModalityId = ModalityId.AUDIO
    alpha_audio: float = 1.0
    alpha_video: float = 0.5
    alpha_language: float = 1.0
    consensus_gradient: ConsensusGradient = ConsensusGradient.DETACHED
    consensus_weight: float = 30.0
    pairs: tuple[str, ...] = ("all",)
    """Ordered modality pairs such as "AV", or "all" for every ordered pair."""

    # Training, at desk scale
    mode: TrainMode = TrainMode.MC3
    stage1_epochs: int = 5
    stage2_epochs: int = 8
    lr: float = 1e-3
    batch_size: int = 64
    log_every: int = 50
    eval_every: int = 0
    reset_optimizer_between_stages: bool = True
    clip_norm: float = 5.0
    drop_last: bool = True

    # Evaluation
    k_list: tuple[int, ...] = (1, 5, 10)
    n_clusters: int = 20
    n_exemplars: int = 5
    probe_epochs: int = 100
    probe_lr: float = 1e-2
    fine_tune_lr: float = 1e-3

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            num_samples=self.num_samples,
            num_concepts=self.num_concepts,
            concept_dim=self.concept_dim,
            dims=self.dims,
            region_probs=tuple(self.region_probs),  # type: ignore[arg-type]
            noise=self.noise,
            ambient_scale=self.ambient_scale,
            train_fraction=self.train_fraction,
            val_fraction=self.val_fraction,
            seed=self.seed,
        )

    @property
    def dims(self) -> dict[ModalityId, int]:
        return {m: getattr(self, f"dim_{m.key}") for m in MODALITIES}

    def pair_set(self) -> tuple[Pair, ...]:
        if tuple(p.lower() for p in self.pairs) == ("all",):
            return ALL_PAIRS
        parsed = []
        for pair in self.pairs:
            if len(pair) != 2:
                raise InvalidConfig(f"pairs: expected two modality letters, got {pair!r}")
            try:
                parsed.append((ModalityId.parse(pair[0]), ModalityId.parse(pair[1])))
            except ValueError as e:
                raise InvalidConfig(f"pairs: {e}") from e
        return tuple(parsed)

    def loss_config(self) -> LossConfig:
        return LossConfig(
            temperature=self.temperature,
            anchor=self.anchor,
            alpha={m: getattr(self, f"alpha_{m.key}") for m in MODALITIES},
            consensus_gradient=self.consensus_gradient,
            pair_set=self.pair_set(),
            consensus_weight=self.consensus_weight,
        )

    def train_config(self, checkpoint_path: Path | None = None) -> TrainConfig:
        return TrainConfig(
            loss=self.loss_config(),
            stage1_epochs=self.stage1_epochs,
            stage2_epochs=self.stage2_epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            seed=self.seed,
            mode=self.mode,
            log_every=self.log_every,
            eval_every=self.eval_every,
            checkpoint_path=checkpoint_path,
            reset_optimizer_between_stages=self.reset_optimizer_between_stages,
            clip_norm=self.clip_norm,
            drop_last=self.drop_last,
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            epochs=self.probe_epochs,
            lr=self.probe_lr,
            fine_tune_lr=self.fine_tune_lr,
            seed=self.seed,
        )

    def to_env(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"{key}={_format_value(value)}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, out_dir: Path | None = None) -> Path:
        path = Path(out_dir or self.out_dir) / RESOLVED_CONFIG_FILENAME
        atomic_write_text(path, self.to_env())
        return path


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, ModalityId):
        return value.key
    if isinstance(value, Enum):
        return str(value.value if isinstance(value.value, str) else value.name.lower())
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_enum(kind: type[Enum], text: str) -> Enum:
    if kind is ModalityId:
        return ModalityId.parse(text)
    lowered = text.strip().lower()
    for member in kind:
        if lowered in (str(member.value).lower(), member.name.lower()):
            return member
    raise ValueError(f"expected one of {[str(m.value).lower() for m in kind]}, got {text!r}")


def _coerce(kind: Any, text: str) -> Any:
    origin = typing.get_origin(kind)
    if origin in (typing.Union, types.UnionType):
        options = [a for a in typing.get_args(kind) if a is not type(None)]
        if not text.strip():
            return None
        return _coerce(options[0], text)
    if origin is tuple:
        item = typing.get_args(kind)[0]
        return tuple(_coerce(item, part) for part in text.split(",") if part.strip())
    if kind is bool:
        return _parse_bool(text)
    if isinstance(kind, type) and issubclass(kind, Enum):
        return _parse_enum(kind, text)
    if kind is Path:
        return Path(text.strip())
    return kind(text.strip())


def _field_types() -> dict[str, Any]:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def parse_assignments(assignments: Iterable[str]) -> dict[str, str]:
    """Parses repeated `key=value` flags."""
    values = {}
    for assignment in assignments:
        key, sep, value = assignment.partition("=")
        if not sep or not key.strip():
            raise InvalidConfig(f"Expected key=value, got {assignment!r}")
        values[key.strip()] = value.strip()
    return values


def resolve_config(
    path: Path | None = None,
    overrides: Mapping[str, str | None] | None = None,
) -> RunConfig:
    """Loads a config file and applies overrides. Unknown keys are rejected."""
    raw: dict[str, str | None] = {}
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        raw.update(dotenv_values(path))
    raw.update(overrides or {})

    types_by_key = _field_types()
    values: dict[str, Any] = {}
    for key, text in raw.items():
        if key not in types_by_key:
            raise InvalidConfig(f"Unknown config key {key!r}")
        if text is None:
            continue
        try:
            values[key] = _coerce(types_by_key[key], text)
        except ValueError as e:
            raise InvalidConfig(f"Invalid value for {key!r}: {e}") from e

    return RunConfig(**values)
