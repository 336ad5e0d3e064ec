import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import numpy.typing as npt

from .common import DegenerateNorm, NonFiniteGradient, NonFiniteValue, ShapeMismatch

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
Params = dict[str, Array]

EPS_NORM = 1e-12


def make_rng(*entropy: int) -> np.random.Generator:
    """Returns a PCG64 generator seeded from the given integers.

    `make_rng(seed)` and `make_rng(seed, stage, epoch)` give independent, reproducible
    streams."""
    return np.random.default_rng(list(entropy))


def check_shape(array: Array, shape: tuple[int, ...], name: str = "array") -> None:
    if array.shape != shape:
        raise ShapeMismatch(f"{name} has shape {array.shape}, expected {shape}")


def check_finite(array: Array, name: str = "array") -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")


def normalize_unit(v: Array, eps: float = EPS_NORM) -> Array:
    """Projects a vector onto the unit sphere."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeMismatch(f"Expected a non-empty vector, got shape {v.shape}")
    check_finite(v, "vector")
    norm = float(np.linalg.norm(v))
    if norm <= eps:
        raise DegenerateNorm(f"Cannot normalize vector with norm {norm:.3g}")
    return v / norm


def normalize_rows(m: Array, eps: float = EPS_NORM) -> tuple[Array, Array]:
    """Row-wise `normalize_unit`. Returns the normalized rows and the original norms."""
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= eps):
        row = int(np.argmin(norms))
        raise DegenerateNorm(f"Row {row} has norm {norms[row]:.3g}")
    return m / norms[:, None], norms


@dataclass
class AdamState:
    """Adam moments for a set of named parameters.

    Moments are created lazily on the first step so that they mirror whatever
    parameters are passed in."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def reset(self) -> None:
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(state: AdamState, params: Mapping[str, Array], grads: Mapping[str, Array]) -> Params:
    """Applies one bias-corrected Adam update and returns the new parameters.

    Parameters missing from `grads` are returned unchanged and keep their moments."""
    for name, grad in grads.items():
        if name not in params:
            raise ShapeMismatch(f"Gradient for unknown parameter {name!r}")
        check_shape(grad, params[name].shape, f"gradient of {name}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"Gradient of {name} contains NaN or Inf")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t

    updated: Params = dict(params)
    for name, grad in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = params[name] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


def clip_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    """Scales all gradients down so that their joint L2 norm is at most `max_norm`.

    Returns the (possibly) clipped gradients and the norm before clipping."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm <= 0 or total <= max_norm:
        return grads, total
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}, total


def finite_diff_check(
    f: Callable[[Array], float],
    x: Array,
    analytic_grad: Array,
    h: float = 1e-5,
) -> float:
    """Compares an analytic gradient of `f` at `x` against central differences.

    Returns max over coordinates of |numeric - analytic| / max(1, |analytic|)."""
    if h <= 0:
        raise ValueError(f"Step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    check_shape(analytic_grad, x.shape, "analytic gradient")

    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = f(x)
        flat[i] = original - h
        minus = f(x)
        flat[i] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NonFiniteValue(f"Function is not finite near coordinate {i}")

        numeric = (plus - minus) / (2.0 * h)
        analytic = float(analytic_grad.reshape(-1)[i])
        error = abs(numeric - analytic) / max(1.0, abs(analytic))
        worst = max(worst, error)
    return worst
