import logging
import multiprocessing
import time
from dataclasses import dataclass, replace
from enum import Enum
from importlib.metadata import version
from pathlib import Path
from typing import Annotated, Any

import mdpd
import pandas as pd
import typer
from dotenv import load_dotenv

from ..common import MODALITIES, Split
from ..corpus import MANIFEST_FILENAME, load_corpus, write_corpus
from ..discovery import embed_corpus, evaluate_discovery
from ..retrieval import build_pools, recall_at_k
from ..synthetic import bank_filename, generate_synthetic
from ..trainer import TrainMode
from .config import RunConfig
from .errors import exit_on_error
from .options import ConfigOption, OutDirOption, SeedOption, SetOption, load_run_config
from .train import train_run

logger = logging.getLogger(__name__)

A, V, L = MODALITIES
ALPHA_VIDEO_VALUES = (0.1, 0.25, 0.5, 0.75, 1.0, 2.0)
RETRIEVAL_DIRECTIONS = ((V, A), (A, V), (L, A), (A, L))


class Study(str, Enum):
    MODES = "modes"
    ANCHOR = "anchor"
    ALPHA = "alpha"


def study_variants(study: Study, run: RunConfig) -> list[tuple[str, RunConfig]]:
    """Named run configs for every variant of a study, each with its own output dir."""
    base = run.out_dir / study.value
    match study:
        case Study.MODES:
            return [
                (mode.value, replace(run, mode=mode, out_dir=base / mode.value))
                for mode in TrainMode
            ]
        case Study.ANCHOR:
            return [
                (f"anchor={m.key}", replace(run, anchor=m, out_dir=base / m.key))
                for m in MODALITIES
            ]
        case Study.ALPHA:
            return [
                (
                    f"alpha_video={a:g}",
                    replace(run, alpha_video=a, alpha_language=1.0, out_dir=base / f"{a:g}"),
                )
                for a in ALPHA_VIDEO_VALUES
            ]


def run_experiment(run: RunConfig, manifest: Path) -> dict[str, float]:
    """Trains one variant and evaluates it on the test split."""
    encoders, _ = train_run(run, manifest)
    test = load_corpus(manifest).subset(Split.TEST)
    metrics: dict[str, float] = {}
    for result in evaluate_discovery(test, encoders):
        metrics[f"{result.name} ROC"] = result.roc_auc
        metrics[f"{result.name} PR"] = result.pr_auc

    k = max(run.k_list)
    pools = build_pools(test.records, embed_corpus(test, encoders), seed=run.seed)
    k = min(k, len(pools.retrieval))
    for query, target in RETRIEVAL_DIRECTIONS:
        metrics[f"{query.short}->{target.short} R@{k}"] = recall_at_k(pools, query, target, [k])[k]
    return metrics


def _experiment_in_process(run: RunConfig, manifest: Path, queue: multiprocessing.Queue) -> None:
    """Worker function that runs one experiment in a subprocess."""
    load_dotenv()
    try:
        queue.put(("success", run_experiment(run, manifest)))
    except Exception as e:
        queue.put(("error", f"{type(e).__name__}: {e}"))


def run_experiment_with_timeout(
    run: RunConfig, manifest: Path, timeout: float | None
) -> tuple[dict[str, float], float]:
    """Runs an experiment in a subprocess with optional timeout. Returns the metrics and
    the elapsed time."""
    queue: multiprocessing.Queue = multiprocessing.Queue()
    process = multiprocessing.Process(target=_experiment_in_process, args=(run, manifest, queue))

    start = time.perf_counter()
    process.start()
    process.join(timeout=timeout)
    elapsed = time.perf_counter() - start

    if process.is_alive():
        process.terminate()
        process.join()
        raise TimeoutError(f"Experiment timed out after {timeout}s")

    if queue.empty():
        raise RuntimeError("Experiment process ended without returning a result")

    status, result = queue.get()
    if status == "error":
        raise RuntimeError(result)
    return result, elapsed


KEY_COLUMNS = ["Study", "Variant"]


@dataclass
class AblationSummary:
    version: str
    num_runs: int
    num_completed: int
    total_time_seconds: float
    best: dict[str, str]
    """Best variant by AV ROC-AUC per study."""


def _extract_table_after_heading(content: str, heading: str) -> str | None:
    """Extract Markdown table content that follows a specific heading."""
    table_lines: list[str] = []
    in_section = False
    for line in content.split("\n"):
        if line.strip().startswith("#") and heading.lower() in line.lower():
            in_section = True
            continue
        if in_section and line.strip().startswith("#"):
            break
        if in_section:
            if line.strip().startswith("|"):
                table_lines.append(line)
            elif table_lines and line.strip():
                break
    return "\n".join(table_lines) if table_lines else None


def load_existing_results(report: Path) -> pd.DataFrame:
    """Loads existing results from the details section of the report file."""
    if not report.exists():
        return pd.DataFrame(columns=pd.Index(KEY_COLUMNS))
    try:
        table = _extract_table_after_heading(report.read_text(), "Details")
        if table is None:
            return pd.DataFrame(columns=pd.Index(KEY_COLUMNS))
        df = mdpd.from_md(table)
        df.columns = [str(c).strip() for c in df.columns]
        return df
    except Exception:
        return pd.DataFrame(columns=pd.Index(KEY_COLUMNS))


def merge_results(existing: pd.DataFrame, new: pd.DataFrame) -> pd.DataFrame:
    """Replaces rows of `existing` that were rerun in `new`."""
    if existing.empty:
        return new
    rerun = set(zip(new["Study"], new["Variant"]))
    keep = [(s, v) not in rerun for s, v in zip(existing["Study"], existing["Variant"])]
    return pd.concat([existing[keep], new], ignore_index=True)


def summarize(df: pd.DataFrame) -> AblationSummary:
    completed = df[df["Result"] == "OK"]
    best: dict[str, str] = {}
    if "AV ROC" in completed.columns:
        for study, rows in completed.groupby("Study", sort=True):
            scores = pd.to_numeric(rows["AV ROC"], errors="coerce")
            if scores.notna().any():
                best[str(study)] = str(rows.loc[scores.idxmax(), "Variant"])
    times = pd.to_numeric(df["Time (s)"].astype(str).str.lstrip(">"), errors="coerce")
    return AblationSummary(
        version=version("mc3"),
        num_runs=len(df),
        num_completed=len(completed),
        total_time_seconds=float(times.fillna(0.0).sum()),
        best=best,
    )


def save_results(df: pd.DataFrame, report: Path, summary: AblationSummary) -> None:
    """Saves results to a Markdown file."""
    report.parent.mkdir(parents=True, exist_ok=True)
    df = df.sort_values(KEY_COLUMNS, kind="stable").reset_index(drop=True)
    details_markdown = df.fillna("").to_markdown(index=False, floatfmt=".4f")
    assert details_markdown is not None

    metrics = ["Version", "Runs", "Completed", "Total Time (s)"]
    values = [
        summary.version,
        str(summary.num_runs),
        str(summary.num_completed),
        f"{summary.total_time_seconds:.1f}s",
    ]
    for study, variant in summary.best.items():
        metrics.append(f"Best AV ROC ({study})")
        values.append(variant)
    summary_markdown = pd.DataFrame({"Metric": metrics, "Value": values}).to_markdown(
        index=False, colalign=("left", "right")
    )
    assert summary_markdown is not None

    content = f"## Summary\n\n{summary_markdown}\n\n## Details\n\n{details_markdown}\n"
    report.write_text(content)


def prepare_corpus(run: RunConfig) -> Path:
    """Returns the study's manifest, generating the synthetic corpus if needed."""
    if run.manifest is not None:
        return run.manifest
    corpus_dir = run.out_dir / "corpus"
    manifest = corpus_dir / MANIFEST_FILENAME
    if manifest.exists():
        logger.info(f"Reusing synthetic corpus at {corpus_dir}")
        return manifest
    corpus = generate_synthetic(run.synth_config())
    banks = {bank_filename(m): bank for m, bank in corpus.banks.items()}
    write_corpus(corpus_dir, banks, corpus.records)
    run.write_resolved(corpus_dir)
    return manifest


def run_study(study: Study, run: RunConfig, timeout: float | None, report: Path) -> None:
    manifest = prepare_corpus(run)
    variants = study_variants(study, run)
    logger.info(f"Running {study.value} study with {len(variants)} variants")

    rows: list[dict[str, Any]] = []
    for name, variant in variants:
        logger.info(f"Starting {name}")
        row: dict[str, Any] = {"Study": study.value, "Variant": name}
        try:
            metrics, elapsed = run_experiment_with_timeout(variant, manifest, timeout)
            row.update({"Result": "OK", "Time (s)": f"{elapsed:.1f}", **metrics})
            logger.info(f"Result of {name}: AV ROC {metrics.get('AV ROC', float('nan')):.4f}")
        except TimeoutError:
            row.update({"Result": "TIMEOUT", "Time (s)": f">{timeout:.0f}" if timeout else ""})
            logger.info(f"Result of {name}: TIMEOUT")
        except Exception as e:
            row.update({"Result": "ERROR", "Time (s)": ""})
            logger.error(f"Result of {name}: ERROR ({e})")
        rows.append(row)

    merged = merge_results(load_existing_results(report), pd.DataFrame(rows))
    save_results(merged, report, summarize(merged))
    logger.info(f"Results saved to {report}")


def ablate(
    study: Annotated[
        Study,
        typer.Option("--study", help="Which variants to compare."),
    ] = Study.MODES,
    timeout: Annotated[
        float,
        typer.Option("--timeout", "-t", help="Timeout in seconds per run. Set to 0 to disable."),
    ] = 600,
    report: Annotated[
        Path,
        typer.Option(
            "--report",
            "-r",
            help="Report file to write results to in Markdown format.",
        ),
    ] = Path("results.md"),
    config: ConfigOption = None,
    seed: SeedOption = None,
    out_dir: OutDirOption = None,
    set_: SetOption = None,
) -> None:
    """Train and evaluate every variant of a study on one corpus."""
    with exit_on_error():
        run = load_run_config(config, seed, out_dir, set_)
        run_study(study, run, timeout if timeout > 0 else None, report)