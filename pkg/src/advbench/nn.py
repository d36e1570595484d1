"""Small dense MLP with exact reverse-mode input gradients.

Everything here is pure and float64. Models are immutable after
construction, so they can be shared freely across workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateLogits, InvalidInput, UnsupportedLoss

ACTIVATIONS = ("relu", "identity")


class LossKind(str, Enum):
    NEG_CROSS_ENTROPY = "neg_cross_entropy"
    DIFFERENCE_OF_LOGITS = "difference_of_logits"
    DIFFERENCE_OF_LOGITS_RATIO = "difference_of_logits_ratio"


def as_vector(values) -> np.ndarray:
    """Validate and convert to a 1-D float64 vector. Rejects NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInput(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("vector contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray    # (out_dim,)
    activation: str     # "relu" | "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise InvalidInput("layer weight/bias shapes do not agree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidInput("layer parameters contain non-finite entries")
        if self.activation not in ACTIVATIONS:
            raise InvalidInput(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidInput("model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise InvalidInput("adjacent layer dimensions do not agree")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def class_count(self) -> int:
        return self.layers[-1].weight.shape[0]


def _forward_trace(model: MlpModel, x: np.ndarray):
    """Forward pass keeping per-layer pre-activations for backprop."""
    a = x
    pre = []
    for layer in model.layers:
        z = layer.weight @ a + layer.bias
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Evaluate the model, returning the C logits."""
    x = as_vector(x)
    if x.shape[0] != model.input_dim:
        raise InvalidInput(
            f"input has dim {x.shape[0]}, model expects {model.input_dim}")
    logits, _ = _forward_trace(model, x)
    return logits


def _runner_up_index(logits: np.ndarray, y: int) -> int:
    masked = logits.copy()
    masked[y] = -np.inf
    return int(np.argmax(masked))


def _check_label(logits: np.ndarray, y: int):
    if not 0 <= y < logits.shape[0]:
        raise InvalidInput(f"label {y} out of range for {logits.shape[0]} classes")


def _dlr_pieces(logits: np.ndarray, y: int):
    if logits.shape[0] < 4:
        raise UnsupportedLoss(
            "difference_of_logits_ratio needs at least 4 classes")
    order = np.argsort(logits, kind="stable")[::-1]
    top, third = int(order[0]), int(order[2])
    denom = logits[top] - logits[third]
    if denom == 0.0:
        raise DegenerateLogits("largest and third-largest logits coincide")
    return top, third, denom


def loss_value(logits, y: int, kind: LossKind) -> float:
    """Attack loss at the given logits.

    neg_cross_entropy: -log softmax_y (log-sum-exp stabilized)
    difference_of_logits: z_y - max_{j != y} z_j
    difference_of_logits_ratio: the above divided by z_(1) - z_(3)
    """
    z = as_vector(logits)
    _check_label(z, y)
    kind = LossKind(kind)
    if kind is LossKind.NEG_CROSS_ENTROPY:
        m = float(np.max(z))
        lse = m + float(np.log(np.sum(np.exp(z - m))))
        return lse - float(z[y])
    dl = float(z[y] - z[_runner_up_index(z, y)])
    if kind is LossKind.DIFFERENCE_OF_LOGITS:
        return dl
    _, _, denom = _dlr_pieces(z, y)
    return dl / float(denom)


def loss_gradient_logits(logits, y: int, kind: LossKind) -> np.ndarray:
    """d loss_value / d logits, matching loss_value exactly."""
    z = as_vector(logits)
    _check_label(z, y)
    kind = LossKind(kind)
    if kind is LossKind.NEG_CROSS_ENTROPY:
        m = np.max(z)
        p = np.exp(z - m)
        p /= np.sum(p)
        g = p
        g[y] -= 1.0
        return g
    m = _runner_up_index(z, y)
    g = np.zeros_like(z)
    if kind is LossKind.DIFFERENCE_OF_LOGITS:
        g[y] += 1.0
        g[m] -= 1.0
        return g
    top, third, denom = _dlr_pieces(z, y)
    num = z[y] - z[m]
    g[y] += 1.0 / denom
    g[m] -= 1.0 / denom
    g[top] -= num / denom ** 2
    g[third] += num / denom ** 2
    return g


def input_gradient(model: MlpModel, x, y: int, kind: LossKind) -> np.ndarray:
    """Exact gradient of loss_value(forward(model, x), y, kind) w.r.t. x.

    ReLU subgradient at 0 is taken as 0.
    """
    x = as_vector(x)
    if x.shape[0] != model.input_dim:
        raise InvalidInput(
            f"input has dim {x.shape[0]}, model expects {model.input_dim}")
    logits, pre = _forward_trace(model, x)
    g = loss_gradient_logits(logits, y, kind)
    for layer, z in zip(reversed(model.layers), reversed(pre)):
        if layer.activation == "relu":
            g = g * (z > 0.0)
        g = layer.weight.T @ g
    return g


def gradient_check(model: MlpModel, x, y: int, kind: LossKind,
                   h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - fd| / max(1, |analytic|).
    """
    if h <= 0:
        raise InvalidInput("finite-difference step must be positive")
    x = as_vector(x)
    analytic = input_gradient(model, x, y, kind)
    worst = 0.0
    for i in range(x.shape[0]):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        lp = loss_value(forward(model, xp), y, kind)
        lm = loss_value(forward(model, xm), y, kind)
        fd = (lp - lm) / (2.0 * h)
        err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def near_activation_kink(model: MlpModel, x, tol: float = 1e-3) -> bool:
    """True if any ReLU pre-activation magnitude is below tol.

    Finite-difference checks should resample x when this holds, since
    central differences straddle the nondifferentiable point.
    """
    x = as_vector(x)
    _, pre = _forward_trace(model, x)
    for layer, z in zip(model.layers, pre):
        if layer.activation == "relu" and np.any(np.abs(z) < tol):
            return True
    return False
