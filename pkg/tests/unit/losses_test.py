from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mc3.common import MODALITIES, InvalidConfig, ModalityId, OutOfRange
from mc3.losses import (
    ALL_PAIRS,
    BatchEmbeddings,
    ConsensusGradient,
    LossConfig,
    consensus_loss,
    consensus_score,
    contrastive_total,
    infonce_pair,
    mc3_loss,
    scale,
    scale_inverse,
    symmetric_pairs,
)
from mc3.numerics import make_rng, normalize_rows

A, V, L = MODALITIES


def unit_batch(seed: int, n: int = 6, dim: int = 5) -> BatchEmbeddings:
    rng = make_rng(seed)
    return BatchEmbeddings({m: normalize_rows(rng.standard_normal((n, dim)))[0] for m in MODALITIES})


def test_infonce_single_sample_is_zero():
    e = normalize_rows(make_rng(0).standard_normal((1, 4)))[0]
    loss, grad_i, grad_j = infonce_pair(e, e, 0.07)
    assert abs(loss) < 1e-12
    assert np.allclose(grad_i, 0.0) and np.allclose(grad_j, 0.0)


def test_infonce_orthogonal_negatives_closed_form():
    """Two samples whose negatives are orthogonal: each term is log(1 + e^-1)."""
    e = np.eye(2)
    loss, _, _ = infonce_pair(e, e, 1.0)
    assert abs(loss - np.log(1 + np.exp(-1))) < 1e-9


def test_infonce_is_nonnegative_and_asymmetric():
    batch = unit_batch(1)
    forward, _, _ = infonce_pair(batch[A], batch[V], 0.1)
    backward, _, _ = infonce_pair(batch[V], batch[A], 0.1)
    assert forward >= 0 and backward >= 0
    assert forward != backward


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_infonce_is_invariant_to_batch_order(seed):
    batch = unit_batch(seed)
    order = make_rng(seed, 1).permutation(batch.size)
    loss, _, _ = infonce_pair(batch[A], batch[L], 0.07)
    permuted, _, _ = infonce_pair(batch[A][order], batch[L][order], 0.07)
    assert abs(loss - permuted) < 1e-10


def test_contrastive_total_sums_pairs():
    batch = unit_batch(2)
    cfg = LossConfig(pair_set=symmetric_pairs(A, V))
    total, grads = contrastive_total(batch, cfg)
    expected = infonce_pair(batch[A], batch[V], 0.07)[0] + infonce_pair(batch[V], batch[A], 0.07)[0]
    assert abs(total - expected) < 1e-12
    assert np.all(grads[L] == 0.0)


def test_default_pair_set_has_six_ordered_pairs():
    assert len(ALL_PAIRS) == 6
    assert len(set(ALL_PAIRS)) == 6


def test_scale_endpoints():
    assert scale(-1.0, 0.5) == 0.0
    assert scale(1.0, 0.5) == 1.0
    assert abs(scale_inverse(scale(0.3, 0.5), 0.5) - 0.3) < 1e-12


def test_scale_rejects_out_of_range():
    with pytest.raises(OutOfRange):
        scale(1.5, 1.0)
    with pytest.raises(OutOfRange):
        scale_inverse(-0.2, 1.0)


def test_scale_tolerates_rounding():
    assert scale(1.0 + 1e-12, 1.0) == 1.0


def test_consensus_score_with_equal_alpha_is_raw_minimum():
    cfg = LossConfig(alpha={A: 1.0, V: 1.0, L: 1.0})
    score, bottleneck = consensus_score({V: 0.42, L: -0.13}, cfg)
    assert score == -0.13
    assert bottleneck is L


def test_consensus_score_uses_scaled_space():
    """With alpha_v < 1 video scores are lifted, so language can be the bottleneck even
    when its raw similarity is higher."""
    cfg = LossConfig(alpha={A: 1.0, V: 0.5, L: 4.0})
    score, bottleneck = consensus_score({V: 0.0, L: 0.2}, cfg)
    assert bottleneck is L
    assert score == 0.2


def test_consensus_score_tie_goes_to_earlier_modality():
    cfg = LossConfig(alpha={A: 1.0, V: 1.0, L: 1.0})
    _, bottleneck = consensus_score({V: 0.5, L: 0.5}, cfg)
    assert bottleneck is V


def test_consensus_loss_is_zero_when_all_agree():
    rng = make_rng(3)
    anchor = normalize_rows(rng.standard_normal((4, 5)))[0]
    e = normalize_rows(rng.standard_normal((4, 5)))[0]
    batch = BatchEmbeddings({A: anchor, V: e, L: e.copy()})
    cfg = LossConfig(alpha={A: 1.0, V: 1.0, L: 1.0})
    loss, grads = consensus_loss(batch, cfg)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads.values())


@settings(max_examples=50)
@given(
    st.integers(0, 2**32 - 1),
    st.lists(st.floats(0.1, 4.0), min_size=3, max_size=3),
    st.sampled_from(MODALITIES),
)
def test_consensus_loss_is_nonnegative(seed, alphas, anchor):
    cfg = LossConfig(anchor=anchor, alpha=dict(zip(MODALITIES, alphas)))
    loss, _ = consensus_loss(unit_batch(seed), cfg)
    assert loss >= 0.0


def test_full_gradient_differs_from_detached():
    batch = unit_batch(4)
    detached = LossConfig()
    full = replace(detached, consensus_gradient=ConsensusGradient.FULL)
    loss_d, grads_d = consensus_loss(batch, detached)
    loss_f, grads_f = consensus_loss(batch, full)
    assert loss_d == loss_f
    assert not np.allclose(grads_d[A], grads_f[A])


def test_mc3_loss_combines_parts():
    batch = unit_batch(5)
    cfg = LossConfig(consensus_weight=0.5)
    total, _, parts = mc3_loss(batch, cfg)
    contrastive, _ = contrastive_total(batch, cfg)
    consensus, _ = consensus_loss(batch, cfg)
    assert parts.contrastive == contrastive
    assert abs(parts.consensus - 0.5 * consensus) < 1e-15
    assert abs(total - parts.total) < 1e-12


def test_loss_config_validation():
    with pytest.raises(InvalidConfig):
        LossConfig(temperature=0.0)
    with pytest.raises(InvalidConfig):
        LossConfig(pair_set=((A, A),))
    with pytest.raises(InvalidConfig):
        LossConfig(alpha={A: 1.0, V: 0.0, L: 1.0})
    assert LossConfig(anchor=ModalityId.VIDEO).non_anchor == (A, L)
