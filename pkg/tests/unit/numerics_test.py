import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mc3.common import DegenerateNorm, NonFiniteGradient, ShapeMismatch
from mc3.numerics import (
    AdamState,
    adam_step,
    clip_global_norm,
    finite_diff_check,
    make_rng,
    normalize_unit,
)

finite_vectors = arrays(
    np.float64,
    st.integers(1, 16),
    elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
).filter(lambda v: np.linalg.norm(v) > 1e-6)


def test_normalize_unit():
    assert np.allclose(normalize_unit(np.array([3.0, 4.0])), [0.6, 0.8])


@given(finite_vectors)
def test_normalize_unit_is_idempotent(v):
    """Normalizing an already unit vector changes it by at most rounding."""
    once = normalize_unit(v)
    assert abs(np.linalg.norm(once) - 1.0) < 1e-12
    assert np.allclose(normalize_unit(once), once, atol=1e-15)


def test_normalize_zero_vector():
    with pytest.raises(DegenerateNorm):
        normalize_unit(np.zeros(4))


def test_normalize_empty_vector():
    with pytest.raises(ShapeMismatch):
        normalize_unit(np.zeros(0))


def test_rng_streams_are_reproducible():
    assert np.array_equal(make_rng(3, 1, 2).random(5), make_rng(3, 1, 2).random(5))
    assert not np.array_equal(make_rng(3).random(5), make_rng(3, 1, 2).random(5))


def test_adam_first_step_moves_by_lr():
    """With bias correction, the first Adam step has magnitude lr (up to eps)."""
    state = AdamState(lr=0.1)
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 1e-3])}
    updated = adam_step(state, params, grads)
    assert np.allclose(updated["w"], params["w"] - 0.1 * np.sign(grads["w"]), atol=1e-5)
    assert state.step == 1


def test_adam_leaves_parameters_without_gradient():
    state = AdamState(lr=0.1)
    params = {"w": np.ones(2), "frozen": np.ones(3)}
    updated = adam_step(state, params, {"w": np.ones(2)})
    assert np.array_equal(updated["frozen"], params["frozen"])
    assert "frozen" not in state.m


@given(st.integers(0, 2**32 - 1))
def test_adam_with_zero_lr_keeps_parameters(seed):
    rng = make_rng(seed)
    params = {"w": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)}
    state = AdamState(lr=0.0)
    for _ in range(3):
        grads = {k: rng.standard_normal(v.shape) for k, v in params.items()}
        updated = adam_step(state, params, grads)
        for name in params:
            assert np.array_equal(updated[name], params[name])
    assert state.step == 3


def test_adam_zero_gradient_keeps_parameters_and_counts_the_step():
    state = AdamState(lr=0.1)
    params = {"w": np.array([1.0, -2.0])}
    updated = adam_step(state, params, {"w": np.zeros(2)})
    assert np.array_equal(updated["w"], params["w"])
    assert state.step == 1
    assert np.array_equal(state.m["w"], np.zeros(2))


def test_adam_rejects_nan_gradient():
    with pytest.raises(NonFiniteGradient):
        adam_step(AdamState(lr=0.1), {"w": np.ones(2)}, {"w": np.array([1.0, np.nan])})


def test_adam_rejects_wrong_shape():
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(lr=0.1), {"w": np.ones(2)}, {"w": np.ones(3)})


def test_adam_reset():
    state = AdamState(lr=0.1)
    adam_step(state, {"w": np.ones(2)}, {"w": np.ones(2)})
    state.reset()
    assert state.step == 0 and not state.m and not state.v


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == 5.0
    assert np.allclose(clipped["a"], [0.6]) and np.allclose(clipped["b"], [0.8])

    unchanged, _ = clip_global_norm(grads, 10.0)
    assert unchanged is grads


def test_finite_diff_check_on_a_quadratic():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.5])

    def f(v):
        return float(v @ a @ v)

    assert finite_diff_check(f, x, 2 * a @ x) < 1e-8
    assert finite_diff_check(f, x, 4 * a @ x) > 1e-2


def test_finite_diff_check_does_not_modify_input():
    x = np.array([1.0, 2.0])
    finite_diff_check(lambda v: float(np.sum(v**2)), x, 2 * x)
    assert np.array_equal(x, [1.0, 2.0])
