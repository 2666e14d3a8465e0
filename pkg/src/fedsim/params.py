"""Flat parameter-vector arithmetic used by every optimizer and aggregator.

Parameter vectors are 1-D float64 numpy arrays with value semantics: no
operation here mutates its inputs, and every result is a fresh array of the
same length. Mixing lengths is a programming error and raises; silent
broadcasting or truncation never happens.
"""

import numpy as np


class DimensionMismatchError(ValueError):
    """Operand vector lengths disagree."""


class NonFiniteError(ValueError):
    """NaN or infinity where a finite value is required."""


def as_vector(values) -> np.ndarray:
    """Coerce to a non-empty 1-D float64 array (copying if needed)."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("parameter vectors must be non-empty")
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinity")


def _check_same_len(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionMismatchError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return a*x + y without modifying the inputs."""
    if not np.isfinite(a):
        raise NonFiniteError("scalar a is not finite")
    _check_same_len(x, y)
    _check_finite("x", x)
    _check_finite("y", y)
    return a * x + y


def weighted_sum(vectors: list[np.ndarray], weights: list[float]) -> np.ndarray:
    """Return sum_k weights[k] * vectors[k], accumulated in ascending index order.

    The accumulation order is fixed so that repeated calls with identical
    inputs are bit-identical; floating-point addition is not associative.
    """
    if len(vectors) == 0 or len(weights) == 0:
        raise ValueError("weighted_sum requires non-empty inputs")
    if len(vectors) != len(weights):
        raise DimensionMismatchError(
            f"{len(vectors)} vectors but {len(weights)} weights"
        )
    w = np.asarray(weights, dtype=np.float64)
    _check_finite("weights", w)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    first = vectors[0]
    _check_finite("vectors[0]", first)
    acc = w[0] * first
    for k in range(1, len(vectors)):
        v = vectors[k]
        _check_same_len(first, v)
        _check_finite(f"vectors[{k}]", v)
        acc += w[k] * v
    return acc


def l2_norm(x: np.ndarray) -> float:
    _check_finite("x", x)
    return float(np.sqrt(np.dot(x, x)))


def elementwise_square(x: np.ndarray) -> np.ndarray:
    _check_finite("x", x)
    return x * x


def elementwise_div_add(num: np.ndarray, den: np.ndarray, tau: float) -> np.ndarray:
    """Return num[i] / (sqrt(den[i]) + tau) element-wise."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    _check_same_len(num, den)
    _check_finite("num", num)
    _check_finite("den", den)
    if np.any(den < 0):
        raise ValueError("den must be non-negative")
    return num / (np.sqrt(den) + tau)
