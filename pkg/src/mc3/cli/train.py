import logging
from pathlib import Path
from typing import Annotated

import typer

from ..checkpoint import TrainingCheckpoint, resume
from ..common import InvalidConfig, Split, VersionMismatch
from ..corpus import Corpus, load_corpus
from ..discovery import evaluate_discovery
from ..encoders import EncoderParams, init_params
from ..numerics import make_rng
from ..trainer import Trainer, TrainLog
from .config import RunConfig
from .errors import exit_on_error
from .options import ConfigOption, OutDirOption, SeedOption, SetOption, load_run_config

logger = logging.getLogger(__name__)

CHECKPOINT_FILENAME = "checkpoint.mc3"
TRAIN_LOG_FILENAME = "train_log.csv"


def check_dims(encoders: EncoderParams, corpus: Corpus) -> None:
    if encoders.input_dims() != corpus.dims:
        raise VersionMismatch(
            f"Encoder input dims {encoders.input_dims()} do not match corpus dims {corpus.dims}"
        )


def train_run(
    run: RunConfig, manifest: Path, resume_from: Path | None = None
) -> tuple[EncoderParams, TrainLog]:
    """Trains on the manifest's train split, writing the checkpoint, the log and the
    resolved config to the run's output directory."""
    out_dir = run.out_dir
    corpus = load_corpus(manifest)
    train_split = corpus.subset(Split.TRAIN)
    val_split = corpus.subset(Split.VAL)
    cfg = run.train_config(checkpoint_path=out_dir / CHECKPOINT_FILENAME)
    run.write_resolved(out_dir)

    start: TrainingCheckpoint | None = None
    if resume_from is not None:
        start = resume(resume_from, run.latent_dim)
        encoders = start.params
    else:
        encoders = init_params(
            corpus.dims,
            run.hidden,
            make_rng(run.seed),
            latent_dim=run.latent_dim,
            activation=run.activation,
        )
    check_dims(encoders, corpus)

    log_path = out_dir / TRAIN_LOG_FILENAME
    if start is None:
        log_path.unlink(missing_ok=True)

    def evaluate(stage: int, epoch: int, params: EncoderParams) -> None:
        if len(val_split) == 0:
            logger.info("No validation records to evaluate")
            return
        for result in evaluate_discovery(val_split, params):
            logger.info(
                f"Validation after stage {stage} epoch {epoch + 1}: "
                f"{result.name} ROC-AUC {result.roc_auc:.4f}"
            )

    trainer = Trainer(train_split, cfg, log_path=log_path, evaluate=evaluate)
    encoders, log = trainer.train(encoders, start=start)
    logger.info(f"Checkpoint written to {cfg.checkpoint_path}")
    return encoders, log


def train(
    manifest: Annotated[
        Path | None,
        typer.Option("--manifest", "-m", help="Manifest of the corpus to train on."),
    ] = None,
    resume_from: Annotated[
        Path | None,
        typer.Option("--resume", help="Checkpoint to continue training from."),
    ] = None,
    mode: Annotated[
        str | None,
        typer.Option("--mode", help="Training mode, e.g. mc3, no_consensus, no_align."),
    ] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out_dir: OutDirOption = None,
    set_: SetOption = None,
) -> None:
    """Train the encoders with the two-stage align-refine schedule."""
    with exit_on_error():
        run = load_run_config(
            config,
            seed,
            out_dir,
            set_,
            manifest=None if manifest is None else str(manifest),
            mode=mode,
        )
        if run.manifest is None:
            raise InvalidConfig("No manifest given; pass --manifest or set manifest in the config")
        _, log = train_run(run, run.manifest, resume_from)

    frame = log.to_frame()
    if not frame.empty:
        final = frame.groupby(["stage", "epoch"], sort=True)["total"].mean().iloc[-1]
        logger.info(f"Training done after {len(frame)} steps, final epoch mean loss {final:.4f}")
