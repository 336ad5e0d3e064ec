import logging
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from .checkpoint import TrainingCheckpoint, save_checkpoint
from .common import MODALITIES, InvalidConfig, ModalityId, NumericError, TrainingAborted
from .corpus import Corpus, make_batches
from .encoders import EncoderParams, encode_backward, encode_batch
from .losses import (
    ALL_PAIRS,
    BatchEmbeddings,
    Grads,
    LossConfig,
    LossParts,
    Pair,
    consensus_loss,
    contrastive_total,
    mc3_loss,
    symmetric_pairs,
)
from .numerics import AdamState, Params, adam_step, clip_global_norm, make_rng

logger = logging.getLogger(__name__)

A, V, L = MODALITIES


class TrainMode(Enum):
    MC3 = "mc3"
    NO_CONSENSUS = "no_consensus"
    """Contrastive in both stages. Also the all-pairs joint baseline (CMC)."""
    NO_CONTRASTIVE_STAGE2 = "no_contrastive_stage2"
    NO_ALIGN = "no_align"
    CLAP = "clap"
    """Audio-language contrastive baseline."""
    CM_ACC = "cm_acc"
    """Audio-video contrastive baseline."""
    IMAGEBIND = "imagebind"
    """Sequential binding: video-language first, then audio to the frozen video head."""


class Objective(Enum):
    CONTRASTIVE = "contrastive"
    CONSENSUS = "consensus"
    MC3 = "mc3"


@dataclass(frozen=True)
class StagePlan:
    objective: Objective
    pair_set: tuple[Pair, ...] | None = None
    """Overrides the configured pair set when given."""
    frozen: frozenset[ModalityId] = frozenset()


def stage_plan(mode: TrainMode, stage: int) -> StagePlan:
    match mode, stage:
        case TrainMode.MC3 | TrainMode.NO_ALIGN, 2:
            return StagePlan(Objective.MC3)
        case TrainMode.NO_CONTRASTIVE_STAGE2, 2:
            return StagePlan(Objective.CONSENSUS)
        case TrainMode.CLAP, _:
            return StagePlan(Objective.CONTRASTIVE, symmetric_pairs(A, L))
        case TrainMode.CM_ACC, _:
            return StagePlan(Objective.CONTRASTIVE, symmetric_pairs(A, V))
        case TrainMode.IMAGEBIND, 1:
            return StagePlan(Objective.CONTRASTIVE, symmetric_pairs(V, L))
        case TrainMode.IMAGEBIND, 2:
            return StagePlan(Objective.CONTRASTIVE, symmetric_pairs(A, V), frozenset({V}))
        case _:
            return StagePlan(Objective.CONTRASTIVE)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    stage1_epochs: int = 5
    stage2_epochs: int = 5
    lr: float = 3e-5
    batch_size: int = 256
    seed: int = 0
    mode: TrainMode = TrainMode.MC3
    log_every: int = 50
    eval_every: int = 0
    """Run the evaluation hook every this many epochs; 0 disables it."""
    checkpoint_path: Path | None = None
    reset_optimizer_between_stages: bool = True
    clip_norm: float = 5.0
    """Global gradient norm limit; 0 disables clipping."""
    drop_last: bool = True

    def __post_init__(self) -> None:
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise InvalidConfig("Epoch counts must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise InvalidConfig(f"lr must be >= 0, got {self.lr}")

    @classmethod
    def desk_scale(cls, **overrides: Any) -> "TrainConfig":
        """Smaller batches and a larger step size for CPU-sized corpora."""
        return cls(**{"batch_size": 64, "lr": 1e-3, **overrides})

    @property
    def effective_stage1_epochs(self) -> int:
        return 0 if self.mode is TrainMode.NO_ALIGN else self.stage1_epochs

    @property
    def total_epochs(self) -> int:
        return self.effective_stage1_epochs + self.stage2_epochs

    def stage_of(self, epoch: int) -> tuple[int, int]:
        """Maps a global epoch index to (stage, epoch within stage)."""
        first = self.effective_stage1_epochs
        return (1, epoch) if epoch < first else (2, epoch - first)

    def echo(self) -> dict[str, Any]:
        """JSON-serializable view of the config, stored in checkpoints."""
        data = asdict(self)
        loss = self.loss
        data["loss"] = {
            "temperature": loss.temperature,
            "anchor": loss.anchor.key,
            "alpha": {m.key: a for m, a in loss.alpha.items()},
            "consensus_gradient": loss.consensus_gradient.value,
            "pair_set": [[i.key, j.key] for i, j in loss.pair_set],
            "consensus_weight": loss.consensus_weight,
        }
        data["mode"] = self.mode.value
        # Output locations stay out of the echo
        del data["checkpoint_path"]
        return data


@dataclass(frozen=True)
class StepRecord:
    stage: int
    epoch: int
    step: int
    contrastive: float | None
    consensus: float | None
    total: float
    seconds: float


LOG_COLUMNS = ["stage", "epoch", "step", "contrastive", "consensus", "total", "seconds"]


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.steps], columns=pd.Index(LOG_COLUMNS))

    def epoch_means(self, stage: int, column: str = "total") -> list[float]:
        df = self.to_frame()
        df = df[df["stage"] == stage]
        return [float(v) for v in df.groupby("epoch", sort=True)[column].mean()]


def append_log_csv(records: list[StepRecord], path: Path) -> None:
    """Appends step records to a CSV file, writing the header on first use."""
    if not records:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([asdict(r) for r in records], columns=pd.Index(LOG_COLUMNS))
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


EpochCallback = Callable[[int, int, EncoderParams], None]
"""Called with (stage, epoch within stage, encoders) after an epoch."""


class Trainer:
    """Two-stage align-refine training loop."""

    def __init__(
        self,
        corpus: Corpus,
        cfg: TrainConfig,
        *,
        log_path: Path | None = None,
        on_epoch_end: EpochCallback | None = None,
        evaluate: EpochCallback | None = None,
    ) -> None:
        if len(corpus) == 0:
            raise InvalidConfig("Cannot train on an empty corpus")
        self._corpus = corpus
        self._cfg = cfg
        self._log_path = log_path
        self._on_epoch_end = on_epoch_end
        self._evaluate = evaluate

    def _loss_config(self, plan: StagePlan) -> LossConfig:
        pair_set = plan.pair_set if plan.pair_set is not None else self._cfg.loss.pair_set
        return replace(self._cfg.loss, pair_set=pair_set or ALL_PAIRS)

    def _objective(
        self, plan: StagePlan, batch: BatchEmbeddings
    ) -> tuple[float, Grads, LossParts]:
        cfg = self._loss_config(plan)
        match plan.objective:
            case Objective.CONTRASTIVE:
                loss, grads = contrastive_total(batch, cfg)
                return loss, grads, LossParts(loss, None)
            case Objective.CONSENSUS:
                loss, grads = consensus_loss(batch, cfg)
                return loss, grads, LossParts(None, loss)
            case Objective.MC3:
                return mc3_loss(batch, cfg)

    def _step(
        self,
        params: EncoderParams,
        optimizer: AdamState,
        plan: StagePlan,
        indices: np.ndarray,
    ) -> tuple[EncoderParams, LossParts]:
        caches = {
            m: encode_batch(params, m, self._corpus.features(m, indices)) for m in MODALITIES
        }
        batch = BatchEmbeddings({m: c.e for m, c in caches.items()})
        _, embedding_grads, parts = self._objective(plan, batch)

        grads: Params = {}
        for modality in MODALITIES:
            if modality in plan.frozen:
                continue
            head_grads, _ = encode_backward(
                params, modality, caches[modality], embedding_grads[modality]
            )
            for name, grad in head_grads.items():
                grads[f"{modality.key}.{name}"] = grad

        if grads:
            grads, norm = clip_global_norm(grads, self._cfg.clip_norm)
            logger.debug(f"Gradient norm {norm:.4f}")
            params = params.with_flat(adam_step(optimizer, params.flat(), grads))
        return params, parts

    def train(
        self,
        encoders: EncoderParams,
        *,
        start: TrainingCheckpoint | None = None,
    ) -> tuple[EncoderParams, TrainLog]:
        """Trains a copy of `encoders`. Pass a checkpoint as `start` to resume from
        the epoch boundary it was saved at."""
        cfg = self._cfg
        params = (start.params if start is not None else encoders).copy()
        optimizer = AdamState(lr=cfg.lr)
        epochs_done = 0
        global_step = 0
        if start is not None:
            epochs_done = start.epochs_done
            global_step = start.global_step
            if start.optimizer is not None:
                optimizer = start.optimizer
                optimizer.lr = cfg.lr

        log = TrainLog()
        first_stage2 = cfg.effective_stage1_epochs
        logger.info(
            f"Training mode {cfg.mode.value}: {cfg.effective_stage1_epochs} align + "
            f"{cfg.stage2_epochs} refine epochs on {len(self._corpus)} samples"
        )

        for epoch in range(epochs_done, cfg.total_epochs):
            stage, stage_epoch = cfg.stage_of(epoch)
            plan = stage_plan(cfg.mode, stage)
            if epoch == first_stage2 and first_stage2 > 0 and cfg.reset_optimizer_between_stages:
                logger.info("Resetting optimizer state for the refine stage")
                optimizer.reset()

            epoch_records: list[StepRecord] = []
            started = time.perf_counter()
            rng = make_rng(cfg.seed, stage, stage_epoch)
            for indices in make_batches(self._corpus.records, cfg.batch_size, rng, cfg.drop_last):
                try:
                    params, parts = self._step(params, optimizer, plan, indices)
                except NumericError as e:
                    raise TrainingAborted(global_step, e) from e
                record = StepRecord(
                    stage=stage,
                    epoch=stage_epoch,
                    step=global_step,
                    contrastive=parts.contrastive,
                    consensus=parts.consensus,
                    total=parts.total,
                    seconds=time.perf_counter() - started,
                )
                epoch_records.append(record)
                if cfg.log_every and global_step % cfg.log_every == 0:
                    logger.debug(
                        f"Stage {stage} epoch {stage_epoch} step {global_step}: "
                        f"total={parts.total:.4f}"
                    )
                global_step += 1

            log.steps.extend(epoch_records)
            if self._log_path is not None:
                append_log_csv(epoch_records, self._log_path)

            stage_epochs = cfg.effective_stage1_epochs if stage == 1 else cfg.stage2_epochs
            mean_total = (
                float(np.mean([r.total for r in epoch_records])) if epoch_records else float("nan")
            )
            logger.info(
                f"Stage {stage}: epoch {stage_epoch + 1}/{stage_epochs} "
                f"mean loss {mean_total:.4f} ({len(epoch_records)} steps)"
            )

            if cfg.checkpoint_path is not None:
                save_checkpoint(
                    TrainingCheckpoint(params, optimizer, epoch + 1, global_step, cfg.echo()),
                    cfg.checkpoint_path,
                )
            if self._evaluate is not None and cfg.eval_every and (stage_epoch + 1) % cfg.eval_every == 0:
                self._evaluate(stage, stage_epoch, params)
            if self._on_epoch_end is not None:
                self._on_epoch_end(stage, stage_epoch, params)

        if cfg.checkpoint_path is not None and cfg.total_epochs <= epochs_done:
            save_checkpoint(
                TrainingCheckpoint(params, optimizer, epochs_done, global_step, cfg.echo()),
                cfg.checkpoint_path,
            )
        return params, log


def train(
    corpus: Corpus,
    encoders: EncoderParams,
    cfg: TrainConfig,
    *,
    log_path: Path | None = None,
) -> tuple[EncoderParams, TrainLog]:
    return Trainer(corpus, cfg, log_path=log_path).train(encoders)
