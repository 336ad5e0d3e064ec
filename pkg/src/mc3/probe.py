"""Classification probes on top of the embeddings.

The linear probe trains one affine softmax layer on frozen embeddings. The fine-tune
probe also updates the modality's encoder head.
"""

import logging
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import log_softmax, softmax

from .common import DegenerateLabels, ModalityId, ShapeMismatch, Split
from .corpus import Corpus, make_batches
from .encoders import EncoderParams, encode_backward, encode_batch
from .metrics import ClassMetrics, class_metrics
from .numerics import AdamState, Array, Params, adam_step, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 1e-2
    fine_tune_lr: float = 1e-3
    batch_size: int = 128
    seed: int = 0


def encode_labels(
    train_labels: Sequence[Hashable], test_labels: Sequence[Hashable]
) -> tuple[list[Hashable], npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """Maps labels to class indices over the sorted union of both splits."""
    if len(set(train_labels)) < 2:
        raise DegenerateLabels("The probe needs at least two classes in the training split")
    classes = sorted(set(train_labels) | set(test_labels), key=str)
    index = {label: i for i, label in enumerate(classes)}
    return (
        classes,
        np.array([index[y] for y in train_labels], dtype=np.int64),
        np.array([index[y] for y in test_labels], dtype=np.int64),
    )


def probe_split(corpus: Corpus) -> tuple[list[int], list[int], list[str]]:
    """Train and test row indices of sounding records with an action group, and the
    group tag of every record (empty where absent)."""
    labels = [r.group or "" for r in corpus.records]
    usable = [i for i, r in enumerate(corpus.records) if r.sounding == 1 and r.group]
    train = [i for i in usable if corpus.records[i].split == Split.TRAIN]
    test = [i for i in usable if corpus.records[i].split == Split.TEST]
    return train, test, labels


def _softmax_step(
    x: Array, y: npt.NDArray[np.int64], w: Array, b: Array
) -> tuple[float, Array, Array, Array]:
    """Cross-entropy and its gradients w.r.t. w, b and x."""
    logits = x @ w + b
    n = x.shape[0]
    loss = -float(np.mean(log_softmax(logits, axis=1)[np.arange(n), y]))
    d_logits = softmax(logits, axis=1)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    return loss, x.T @ d_logits, d_logits.sum(axis=0), d_logits @ w.T


def _init_layer(dim: int, num_classes: int) -> Params:
    return {"probe.w": np.zeros((dim, num_classes)), "probe.b": np.zeros(num_classes)}


def linear_probe(
    train_x: Array,
    train_labels: Sequence[Hashable],
    test_x: Array,
    test_labels: Sequence[Hashable],
    cfg: ProbeConfig = ProbeConfig(),
) -> ClassMetrics:
    if train_x.shape[0] != len(train_labels) or test_x.shape[0] != len(test_labels):
        raise ShapeMismatch("Probe features and labels must have the same length")
    classes, y_train, y_test = encode_labels(train_labels, test_labels)
    params = _init_layer(train_x.shape[1], len(classes))
    optimizer = AdamState(lr=cfg.lr)

    loss = float("nan")
    for epoch in range(cfg.epochs):
        rng = make_rng(cfg.seed, epoch)
        for batch in make_batches(range(len(y_train)), cfg.batch_size, rng, drop_last=False):
            loss, dw, db, _ = _softmax_step(
                train_x[batch], y_train[batch], params["probe.w"], params["probe.b"]
            )
            params = adam_step(optimizer, params, {"probe.w": dw, "probe.b": db})
    logger.info(f"Linear probe over {len(classes)} classes: final batch loss {loss:.4f}")

    probabilities = softmax(test_x @ params["probe.w"] + params["probe.b"], axis=1)
    return class_metrics(probabilities, y_test)


def fine_tune_probe(
    encoders: EncoderParams,
    modality: ModalityId,
    train_features: Array,
    train_labels: Sequence[Hashable],
    test_features: Array,
    test_labels: Sequence[Hashable],
    cfg: ProbeConfig = ProbeConfig(),
) -> tuple[ClassMetrics, EncoderParams]:
    """Trains the classification layer jointly with the modality's encoder head.
    Returns the metrics and the tuned encoders; `encoders` is not modified."""
    if train_features.shape[0] != len(train_labels) or test_features.shape[0] != len(test_labels):
        raise ShapeMismatch("Probe features and labels must have the same length")
    classes, y_train, y_test = encode_labels(train_labels, test_labels)
    prefix = f"{modality.key}."
    params = _init_layer(encoders.latent_dim, len(classes))
    params.update({k: v for k, v in encoders.flat().items() if k.startswith(prefix)})
    optimizer = AdamState(lr=cfg.fine_tune_lr)

    def current_encoders() -> EncoderParams:
        return encoders.with_flat({k: v for k, v in params.items() if k.startswith(prefix)})

    loss = float("nan")
    for epoch in range(cfg.epochs):
        rng = make_rng(cfg.seed, epoch)
        for batch in make_batches(range(len(y_train)), cfg.batch_size, rng, drop_last=False):
            tuned = current_encoders()
            cache = encode_batch(tuned, modality, train_features[batch])
            loss, dw, db, de = _softmax_step(
                cache.e, y_train[batch], params["probe.w"], params["probe.b"]
            )
            head_grads, _ = encode_backward(tuned, modality, cache, de)
            grads = {"probe.w": dw, "probe.b": db}
            grads.update({prefix + name: g for name, g in head_grads.items()})
            params = adam_step(optimizer, params, grads)
    logger.info(f"Fine-tune probe over {len(classes)} classes: final batch loss {loss:.4f}")

    tuned = current_encoders()
    e = encode_batch(tuned, modality, test_features).e
    probabilities = softmax(e @ params["probe.w"] + params["probe.b"], axis=1)
    return class_metrics(probabilities, y_test), tuned
