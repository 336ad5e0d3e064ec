import json
import logging
from enum import Enum
from pathlib import Path
from typing import Annotated, Any

import pandas as pd
import typer

from ..checkpoint import load_checkpoint
from ..clustering import agglomerative_cluster
from ..common import MODALITIES, InvalidConfig, ModalityId, Split
from ..corpus import Corpus, load_corpus
from ..discovery import embed_corpus, evaluate_discovery
from ..display import draw_frame
from ..encoders import EncoderParams
from ..files import atomic_write_text
from ..metrics import pr_curve, roc_curve
from ..probe import fine_tune_probe, linear_probe, probe_split
from ..retrieval import build_pools, chance_recall_at_k, recall_at_k
from .config import RunConfig
from .errors import exit_on_error
from .options import ConfigOption, OutDirOption, SeedOption, SetOption, load_run_config
from .train import check_dims

logger = logging.getLogger(__name__)

A, V, L = MODALITIES
RETRIEVAL_DIRECTIONS = ((V, A), (A, V), (L, A), (A, L))


class EvalTask(str, Enum):
    DISCOVERY = "discovery"
    RETRIEVAL = "retrieval"
    CLUSTER = "cluster"
    PROBE = "probe"


def write_json(data: dict[str, Any], path: Path) -> None:
    atomic_write_text(path, json.dumps(data, indent=2) + "\n")
    logger.info(f"Report written to {path}")


def run_discovery(corpus: Corpus, encoders: EncoderParams, out_dir: Path) -> dict[str, Any]:
    report: dict[str, Any] = {}
    for result in evaluate_discovery(corpus, encoders):
        report[result.name] = {"roc_auc": result.roc_auc, "pr_auc": result.pr_auc}
        out_dir.mkdir(parents=True, exist_ok=True)
        roc_curve(result.scored).to_csv(out_dir / f"roc_{result.name}.csv", index=False)
        pr_curve(result.scored).to_csv(out_dir / f"pr_{result.name}.csv", index=False)
    return report


def run_retrieval(
    corpus: Corpus, encoders: EncoderParams, run: RunConfig
) -> dict[str, Any]:
    pools = build_pools(corpus.records, embed_corpus(corpus, encoders), seed=run.seed)
    report: dict[str, Any] = {
        "query_pool": len(pools.query),
        "retrieval_pool": len(pools.retrieval),
        "chance": {str(k): r for k, r in chance_recall_at_k(pools, run.k_list).items()},
    }
    for query, target in RETRIEVAL_DIRECTIONS:
        recalls = recall_at_k(pools, query, target, run.k_list)
        report[f"{query.short}->{target.short}"] = {str(k): r for k, r in recalls.items()}
    return report


def run_cluster(
    corpus: Corpus, encoders: EncoderParams, run: RunConfig, modality: ModalityId
) -> dict[str, Any]:
    embeddings = embed_corpus(corpus, encoders)[modality]
    result = agglomerative_cluster(embeddings, run.n_clusters, run.n_exemplars)
    return {
        "modality": modality.key,
        "n_clusters": run.n_clusters,
        "sizes": result.sizes,
        "exemplars": [[corpus.records[i].id for i in members] for members in result.exemplars],
    }


def run_probe(
    corpus: Corpus,
    encoders: EncoderParams,
    run: RunConfig,
    modality: ModalityId,
    fine_tune: bool,
) -> dict[str, Any]:
    train_rows, test_rows, labels = probe_split(corpus)
    features = corpus.features(modality)
    train_labels = [labels[i] for i in train_rows]
    test_labels = [labels[i] for i in test_rows]
    embeddings = embed_corpus(corpus, encoders)[modality]
    report = {
        "modality": modality.key,
        "train": len(train_rows),
        "test": len(test_rows),
        "linear_probe": linear_probe(
            embeddings[train_rows], train_labels, embeddings[test_rows], test_labels,
            run.probe_config(),
        ).as_dict(),
    }  # fmt: skip
    if fine_tune:
        metrics, _ = fine_tune_probe(
            encoders, modality,
            features[train_rows], train_labels, features[test_rows], test_labels,
            run.probe_config(),
        )  # fmt: skip
        report["fine_tune"] = metrics.as_dict()
    return report


def _summary(task: EvalTask, report: dict[str, Any]) -> pd.DataFrame | None:
    match task:
        case EvalTask.DISCOVERY:
            return pd.DataFrame(
                [
                    {"Pair": name, "ROC-AUC": r["roc_auc"], "PR-AUC": r["pr_auc"]}
                    for name, r in report.items()
                ]
            )
        case EvalTask.RETRIEVAL:
            rows = []
            for name, recalls in report.items():
                if isinstance(recalls, dict):
                    rows.append({"Direction": name, **{f"R@{k}": v for k, v in recalls.items()}})
            return pd.DataFrame(rows)
        case EvalTask.CLUSTER:
            return pd.DataFrame({"Cluster": range(len(report["sizes"])), "Size": report["sizes"]})
        case EvalTask.PROBE:
            probes = [name for name in ("linear_probe", "fine_tune") if name in report]
            return pd.DataFrame([{"Probe": name, **report[name]} for name in probes])


def evaluate(
    checkpoint: Annotated[
        Path,
        typer.Option("--checkpoint", "-k", help="Checkpoint or weights file to evaluate."),
    ],
    task: Annotated[
        EvalTask,
        typer.Option("--task", "-t", help="Evaluation protocol to run."),
    ] = EvalTask.DISCOVERY,
    manifest: Annotated[
        Path | None,
        typer.Option("--manifest", "-m", help="Manifest of the corpus to evaluate on."),
    ] = None,
    split: Annotated[
        str,
        typer.Option("--split", help="Split to evaluate: train, val, test or all."),
    ] = Split.TEST.value,
    modality: Annotated[
        str,
        typer.Option("--modality", help="Modality for clustering and probes."),
    ] = ModalityId.AUDIO.key,
    fine_tune: Annotated[
        bool,
        typer.Option("--fine-tune", help="Also run the fine-tune probe."),
    ] = False,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out_dir: OutDirOption = None,
    set_: SetOption = None,
) -> None:
    """Evaluate trained encoders."""
    with exit_on_error():
        run = load_run_config(
            config, seed, out_dir, set_, manifest=None if manifest is None else str(manifest)
        )
        if run.manifest is None:
            raise InvalidConfig("No manifest given; pass --manifest or set manifest in the config")
        encoders = load_checkpoint(checkpoint).params
        corpus = load_corpus(run.manifest)
        check_dims(encoders, corpus)
        # Probes train on the train split and report on the test split
        if task is not EvalTask.PROBE and split != "all":
            try:
                corpus = corpus.subset(Split(split))
            except ValueError:
                raise InvalidConfig(f"Unknown split {split!r}")
        try:
            selected = ModalityId.parse(modality)
        except ValueError as e:
            raise InvalidConfig(f"Invalid --modality: {e}") from e

        match task:
            case EvalTask.DISCOVERY:
                report = run_discovery(corpus, encoders, run.out_dir)
            case EvalTask.RETRIEVAL:
                report = run_retrieval(corpus, encoders, run)
            case EvalTask.CLUSTER:
                report = run_cluster(corpus, encoders, run, selected)
            case EvalTask.PROBE:
                report = run_probe(corpus, encoders, run, selected, fine_tune)

        write_json(report, run.out_dir / f"eval_{task.value}.json")
        run.write_resolved()

    summary = _summary(task, report)
    if summary is not None:
        draw_frame(summary, title=f"{task.value} ({split})")
