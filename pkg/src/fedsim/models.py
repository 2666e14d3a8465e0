"""Reference models with hand-written gradients.

Two differentiable predictors back the training loop: multinomial logistic
regression and a one-hidden-layer ReLU MLP. Both operate on a flat float64
parameter vector so the rest of the engine never needs to know their
internals. Loss is mean cross-entropy over the batch (per-example mean, so
duplicating samples leaves loss and gradient unchanged).

Parameter layout
----------------
logistic_regression: [W (C*d, row-major), b (C)]
mlp:                 [W1 (h*d), b1 (h), W2 (C*h), b2 (C)]

Weights initialize uniform in [-init_scale, init_scale] from ``init_seed``;
biases start at zero.
"""

from dataclasses import dataclass

import numpy as np

from .params import DimensionMismatchError

LOGISTIC_REGRESSION = "logistic_regression"
MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int | None = None
    init_seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.kind not in (LOGISTIC_REGRESSION, MLP):
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be >= 1")
        if self.kind == MLP and (self.hidden_dim is None or self.hidden_dim < 1):
            raise ValueError("mlp requires hidden_dim >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@dataclass(frozen=True)
class Batch:
    features: np.ndarray  # (b, d)
    labels: np.ndarray  # (b,) ints in [0, num_classes)

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be (b, d) and labels (b,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on batch size")
        if self.features.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")


def parameter_count(spec: ModelSpec) -> int:
    d, c = spec.input_dim, spec.num_classes
    if spec.kind == LOGISTIC_REGRESSION:
        return c * d + c
    h = spec.hidden_dim
    return h * d + h + c * h + c


def init_params(spec: ModelSpec) -> np.ndarray:
    """Deterministic initial parameter vector for ``spec``."""
    rng = np.random.default_rng(spec.init_seed)
    d, c, s = spec.input_dim, spec.num_classes, spec.init_scale
    if spec.kind == LOGISTIC_REGRESSION:
        blocks = [rng.uniform(-s, s, size=c * d), np.zeros(c)]
    else:
        h = spec.hidden_dim
        blocks = [
            rng.uniform(-s, s, size=h * d),
            np.zeros(h),
            rng.uniform(-s, s, size=c * h),
            np.zeros(c),
        ]
    return np.concatenate(blocks)


def _unpack(spec: ModelSpec, params: np.ndarray):
    if params.ndim != 1 or params.shape[0] != parameter_count(spec):
        raise DimensionMismatchError(
            f"params has length {params.shape[0] if params.ndim == 1 else params.shape}, "
            f"expected {parameter_count(spec)}"
        )
    d, c = spec.input_dim, spec.num_classes
    if spec.kind == LOGISTIC_REGRESSION:
        w = params[: c * d].reshape(c, d)
        b = params[c * d :]
        return w, b
    h = spec.hidden_dim
    i = 0
    w1 = params[i : i + h * d].reshape(h, d)
    i += h * d
    b1 = params[i : i + h]
    i += h
    w2 = params[i : i + c * h].reshape(c, h)
    i += c * h
    b2 = params[i:]
    return w1, b1, w2, b2


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    if batch.features.shape[1] != spec.input_dim:
        raise DimensionMismatchError(
            f"batch features have dim {batch.features.shape[1]}, expected {spec.input_dim}"
        )
    if np.any(batch.labels < 0) or np.any(batch.labels >= spec.num_classes):
        raise ValueError("label out of range")


def _forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Return (logits, hidden-cache) for a (b, d) feature matrix."""
    if spec.kind == LOGISTIC_REGRESSION:
        w, b = _unpack(spec, params)
        return x @ w.T + b, None
    w1, b1, w2, b2 = _unpack(spec, params)
    z1 = x @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    return a1 @ w2.T + b2, (z1, a1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy over the batch, stabilized by max-subtraction."""
    _check_batch(spec, batch)
    logits, _ = _forward(spec, params, batch.features)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(batch.labels.shape[0]), batch.labels]
    return float(np.mean(log_z - picked))


def grad(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Exact analytic gradient of ``loss`` with respect to ``params``."""
    _check_batch(spec, batch)
    x, y = batch.features, batch.labels
    b = x.shape[0]
    logits, cache = _forward(spec, params, x)
    g_logits = _softmax(logits)
    g_logits[np.arange(b), y] -= 1.0
    g_logits /= b
    if spec.kind == LOGISTIC_REGRESSION:
        gw = g_logits.T @ x
        gb = g_logits.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    z1, a1 = cache
    _, _, w2, _ = _unpack(spec, params)
    gw2 = g_logits.T @ a1
    gb2 = g_logits.sum(axis=0)
    g_a1 = g_logits @ w2
    g_z1 = g_a1 * (z1 > 0)
    gw1 = g_z1.T @ x
    gb1 = g_z1.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    mean_loss: float


def evaluate(spec: ModelSpec, params: np.ndarray, features: np.ndarray,
             labels: np.ndarray) -> EvalResult:
    """Accuracy (argmax, ties to the lowest class id) and mean loss."""
    batch = Batch(features=features, labels=labels)
    _check_batch(spec, batch)
    logits, _ = _forward(spec, params, features)
    predictions = np.argmax(logits, axis=1)  # argmax takes the first maximum
    accuracy = float(np.mean(predictions == labels))
    return EvalResult(accuracy=accuracy, mean_loss=loss(spec, params, batch))
