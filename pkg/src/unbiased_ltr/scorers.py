"""Parameterized document scoring functions with analytic gradients.

Two scorer kinds: a linear function and a multi-layer perceptron with a
configurable activation (elu by default).  Parameters live in one flat
vector so that bandit-style algorithms can perturb and step in
parameter space without knowing the architecture.

Input feature lists are standardized per ranked list and per feature
(subtract the list mean, divide by the list std, std floored at 1e-6)
before scoring; ``norm="none"`` disables this.  The same statistics are
used at training and inference time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

ACTIVATIONS = ("elu", "relu", "sigmoid", "tanh")
NORMS = ("layer", "batch", "none")

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class ScorerSpec:
    """Architecture of a scoring function."""

    kind: str  # "linear" or "dnn"
    hidden_layer_sizes: tuple[int, ...] = ()
    activation: str = "elu"
    norm: str = "layer"

    def __post_init__(self):
        if self.kind not in ("linear", "dnn"):
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        object.__setattr__(self, "hidden_layer_sizes", tuple(self.hidden_layer_sizes))
        if self.kind == "linear" and self.hidden_layer_sizes:
            raise ValueError("linear scorer takes no hidden layers")
        if self.kind == "dnn" and not self.hidden_layer_sizes:
            raise ValueError("dnn scorer needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_layer_sizes):
            raise ValueError("hidden layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")

    def layer_dims(self, feature_size: int) -> list[int]:
        return [feature_size, *self.hidden_layer_sizes, 1]

    def param_count(self, feature_size: int) -> int:
        dims = self.layer_dims(feature_size)
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class ScorerParams:
    """A flat parameter vector plus its layer shape descriptor."""

    theta: np.ndarray
    layer_dims: tuple[int, ...]

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("scorer parameters must be finite")
        expected = sum(
            self.layer_dims[i] * self.layer_dims[i + 1] + self.layer_dims[i + 1]
            for i in range(len(self.layer_dims) - 1)
        )
        if self.theta.shape != (expected,):
            raise ValueError(
                f"theta length {self.theta.shape} inconsistent with dims {self.layer_dims}"
            )

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.theta.copy(), self.layer_dims)


@dataclass(frozen=True)
class ScoreGrad:
    """Scores plus a pullback mapping per-document upstream gradients to dtheta.

    ``pullback(u)`` returns d(u . scores)/dtheta for any upstream vector
    ``u`` shaped like the scores.
    """

    scores: np.ndarray
    pullback: Callable[[np.ndarray], np.ndarray]


def init(spec: ScorerSpec, feature_size: int, rng: np.random.Generator) -> ScorerParams:
    """Fresh parameters: fan-in scaled uniform weights, zero biases.

    Weight entries are uniform on [-sqrt(3/fan_in), sqrt(3/fan_in)],
    giving variance 1/fan_in.  Deterministic under a fixed generator.
    """
    if feature_size < 1:
        raise ValueError("feature_size must be >= 1")
    dims = spec.layer_dims(feature_size)
    chunks = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(3.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ScorerParams(np.concatenate(chunks), tuple(dims))


def _unflatten(params: ScorerParams) -> list[tuple[np.ndarray, np.ndarray]]:
    dims = params.layer_dims
    layers = []
    offset = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = params.theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params.theta[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z >= 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return np.tanh(z)


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z >= 0.0, 1.0, a + 1.0)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def normalize_lists(features: np.ndarray, mask: np.ndarray | None, norm: str) -> np.ndarray:
    """Standardize (n_lists, list_size, n_features) per list and feature.

    Masked (padded) slots are excluded from the statistics and zeroed in
    the output so they cannot leak into real documents' scores.
    """
    if norm == "none":
        if mask is None:
            return features
        return features * mask[:, :, None]
    if mask is None:
        mask = np.ones(features.shape[:2], dtype=bool)
    m = mask[:, :, None].astype(np.float64)
    count = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    mean = (features * m).sum(axis=1, keepdims=True) / count
    var = (((features - mean) ** 2) * m).sum(axis=1, keepdims=True) / count
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return ((features - mean) / std) * m


def forward_batch(
    params: ScorerParams,
    spec: ScorerSpec,
    features: np.ndarray,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Scores for a (n_lists, list_size, n_features) batch."""
    return forward_batch_with_grad(params, spec, features, mask).scores


def forward_batch_with_grad(
    params: ScorerParams,
    spec: ScorerSpec,
    features: np.ndarray,
    mask: np.ndarray | None = None,
) -> ScoreGrad:
    """Batched forward pass plus backprop pullback.

    The pullback accepts upstream gradients shaped (n_lists, list_size)
    and returns d(sum(u * scores))/dtheta as a flat vector.  Upstream
    entries at padded slots must be zero (losses guarantee this through
    their masks).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError("expected features of shape (n_lists, list_size, n_features)")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature value")
    n_lists, list_size, _ = features.shape
    x = normalize_lists(features, mask, spec.norm).reshape(n_lists * list_size, -1)

    layers = _unflatten(params)
    hs = [x]  # layer inputs
    zs = []  # pre-activations
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        zs.append(z)
        if i < len(layers) - 1:
            h = _activation(spec.activation, z)
        else:
            h = z
        hs.append(h)
    scores = hs[-1].reshape(n_lists, list_size)

    def pullback(upstream: np.ndarray) -> np.ndarray:
        delta = np.asarray(upstream, dtype=np.float64).reshape(n_lists * list_size, 1)
        grads: list[np.ndarray] = []
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads.append(delta.sum(axis=0))  # bias
            grads.append((hs[i].T @ delta).ravel())  # weights
            if i > 0:
                delta = (delta @ w.T) * _activation_grad(
                    spec.activation, zs[i - 1], hs[i]
                )
        return np.concatenate(grads[::-1])

    return ScoreGrad(scores=scores, pullback=pullback)


def forward(params: ScorerParams, spec: ScorerSpec, features: np.ndarray) -> np.ndarray:
    """Scores for a single ranked list of shape (n_docs, n_features)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("expected a non-empty (n_docs, n_features) list")
    return forward_batch(params, spec, features[None, :, :])[0]


def forward_with_grad(
    params: ScorerParams, spec: ScorerSpec, features: np.ndarray
) -> ScoreGrad:
    """Single-list forward pass; pullback takes a (n_docs,) upstream vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("expected a non-empty (n_docs, n_features) list")
    sg = forward_batch_with_grad(params, spec, features[None, :, :])
    return ScoreGrad(
        scores=sg.scores[0],
        pullback=lambda u: sg.pullback(np.asarray(u)[None, :]),
    )


def perturb(
    params: ScorerParams, delta: float, rng: np.random.Generator
) -> tuple[ScorerParams, np.ndarray]:
    """Step ``delta`` along a uniform random unit direction in parameter space."""
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    direction = rng.standard_normal(params.theta.shape[0])
    direction /= np.linalg.norm(direction)
    perturbed = ScorerParams(params.theta + delta * direction, params.layer_dims)
    return perturbed, direction


def update_toward(
    params: ScorerParams, direction: np.ndarray, alpha: float
) -> ScorerParams:
    """Move ``alpha`` along a unit direction; dimensions must match."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != params.theta.shape:
        raise ValueError("direction dimension mismatch")
    norm = np.linalg.norm(direction)
    if alpha != 0.0 and abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, got norm {norm}")
    return ScorerParams(params.theta + alpha * direction, params.layer_dims)


def spec_to_dict(spec: ScorerSpec) -> dict:
    return {
        "kind": spec.kind,
        "hidden_layer_sizes": list(spec.hidden_layer_sizes),
        "activation": spec.activation,
        "norm": spec.norm,
    }


def spec_from_dict(obj: dict) -> ScorerSpec:
    return ScorerSpec(
        kind=obj["kind"],
        hidden_layer_sizes=tuple(obj["hidden_layer_sizes"]),
        activation=obj["activation"],
        norm=obj["norm"],
    )


def params_to_dict(params: ScorerParams) -> dict:
    return {"layer_dims": list(params.layer_dims), "theta": params.theta.tolist()}


def params_from_dict(obj: dict) -> ScorerParams:
    return ScorerParams(
        np.asarray(obj["theta"], dtype=np.float64), tuple(obj["layer_dims"])
    )
