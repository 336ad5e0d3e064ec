"""Finite-difference checks of every hand-written gradient."""

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .common import MODALITIES, GradCheckFailed, ModalityId
from .encoders import EncoderParams, encode_backward, encode_batch, init_params
from .losses import (
    BatchEmbeddings,
    ConsensusGradient,
    LossConfig,
    consensus_loss,
    consensus_scores,
    contrastive_total,
    infonce_pair,
    mc3_loss,
)
from .numerics import Array, finite_diff_check, make_rng, normalize_rows

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    instance: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _unit_batch(rng: np.random.Generator, batch: int, dim: int) -> dict[ModalityId, Array]:
    return {m: normalize_rows(rng.standard_normal((batch, dim)))[0] for m in MODALITIES}


def _embedding_checks(
    embeddings: dict[ModalityId, Array],
    loss_fn: Callable[[BatchEmbeddings], tuple[float, dict[ModalityId, Array]]],
    fault: float,
) -> float:
    """Checks the gradient of `loss_fn` w.r.t. each modality's embedding matrix."""
    _, grads = loss_fn(BatchEmbeddings(embeddings))
    worst = 0.0
    for modality in MODALITIES:

        def f(x: Array, modality: ModalityId = modality) -> float:
            return loss_fn(BatchEmbeddings({**embeddings, modality: x}))[0]

        error = finite_diff_check(f, embeddings[modality], fault * grads[modality])
        worst = max(worst, error)
    return worst


def _encoder_check(
    params: EncoderParams, x: Array, upstream: Array, modality: ModalityId, fault: float
) -> float:
    """Checks encoder backward for the linear functional sum(upstream * e)."""
    cache = encode_batch(params, modality, x)
    head_grads, dx = encode_backward(params, modality, cache, upstream)
    worst = 0.0
    for name, grad in head_grads.items():
        key = f"{modality.key}.{name}"

        def f(value: Array, key: str = key) -> float:
            e = encode_batch(params.with_flat({key: value}), modality, x).e
            return float(np.sum(upstream * e))

        worst = max(worst, finite_diff_check(f, params.flat()[key], fault * grad))

    def f_input(value: Array) -> float:
        return float(np.sum(upstream * encode_batch(params, modality, value).e))

    return max(worst, finite_diff_check(f_input, x, fault * dx))


def run_gradient_suite(
    seed: int = 0,
    batch: int = 8,
    dim: int = 16,
    instances: int = 20,
    inject_fault: bool = False,
) -> list[GradCheckResult]:
    """Runs every check on `instances` random problems. With `inject_fault` the analytic
    gradients are doubled, which must make the checks fail."""
    if not (1 <= batch and 1 <= dim and 1 <= instances):
        raise ValueError("batch, dim and instances must be >= 1")
    fault = 2.0 if inject_fault else 1.0
    cfg = LossConfig()
    full = replace(cfg, consensus_gradient=ConsensusGradient.FULL)
    results: list[GradCheckResult] = []

    for instance in range(instances):
        rng = make_rng(seed, instance)
        embeddings = _unit_batch(rng, batch, dim)
        batch_view = BatchEmbeddings(embeddings)
        target, _ = consensus_scores(batch_view.anchor_similarities(cfg.anchor), cfg)
        temperature = float(rng.uniform(0.05, 1.0))

        def infonce(b: BatchEmbeddings) -> tuple[float, dict[ModalityId, Array]]:
            a, v = MODALITIES[0], MODALITIES[1]
            loss, g_a, g_v = infonce_pair(b[a], b[v], temperature)
            grads = {m: np.zeros_like(b[m]) for m in MODALITIES}
            grads[a] += g_a
            grads[v] += g_v
            return loss, grads

        checks: dict[str, Callable[[BatchEmbeddings], tuple[float, dict[ModalityId, Array]]]] = {
            "infonce_pair": infonce,
            "contrastive_total": lambda b: contrastive_total(b, cfg),
            "consensus_detached": lambda b: consensus_loss(b, cfg, target),
            "consensus_full": lambda b: consensus_loss(b, full),
            "mc3_detached": lambda b: mc3_loss(b, cfg, target)[:2],
        }
        for name, loss_fn in checks.items():
            results.append(GradCheckResult(name, instance, _embedding_checks(embeddings, loss_fn, fault)))

        hidden = int(rng.integers(0, dim + 1))
        input_dims = {m: int(rng.integers(2, dim + 1)) for m in MODALITIES}
        params = init_params(input_dims, hidden, rng, latent_dim=dim)
        worst = 0.0
        for modality in MODALITIES:
            x = rng.standard_normal((batch, input_dims[modality]))
            upstream = rng.standard_normal((batch, dim))
            worst = max(worst, _encoder_check(params, x, upstream, modality, fault))
        results.append(GradCheckResult("encoder_backward", instance, worst))

    failed = [r for r in results if not r.passed]
    logger.info(f"Gradient suite: {len(results) - len(failed)}/{len(results)} checks passed")
    return results


def require_pass(results: list[GradCheckResult]) -> None:
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_error)
        raise GradCheckFailed(
            f"{len(failed)} gradient checks failed; worst {worst.name} "
            f"(instance {worst.instance}) with error {worst.max_error:.3e}"
        )
