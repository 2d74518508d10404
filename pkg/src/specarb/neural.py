"""Minimal multilayer perceptron used as the Q-function approximator.

Hidden layers use a rectifier, the output layer is linear. Everything is
float64. Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of
row vectors maps as ``x @ W + b``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

CHECKPOINT_FORMAT = "specarb.mlp"
CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        sizes = self.layer_sizes
        if len(sizes) < 2 or any(int(n) < 1 for n in sizes):
            raise ValidationError(f"invalid layer sizes {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValidationError("need one weight matrix and bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValidationError(f"layer {i}: shapes {w.shape}/{b.shape} do not match sizes {sizes}")

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        try:
            sizes = [int(n) for n in data["layer_sizes"]]
            weights = [np.array(w, dtype=float).reshape(sizes[i], sizes[i + 1]) for i, w in enumerate(data["weights"])]
            biases = [np.array(b, dtype=float).reshape(sizes[i + 1]) for i, b in enumerate(data["biases"])]
        except (KeyError, IndexError, ValueError) as exc:
            raise ValidationError(f"malformed network parameters: {exc}") from None
        net = cls(sizes, weights, biases)
        if not all(np.all(np.isfinite(p)) for p in net.parameters()):
            raise ValidationError("network parameters must be finite")
        return net


@dataclass
class GradientBuffer:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init_weights(layer_sizes: Sequence[int], seed: int) -> Mlp:
    """Uniform(+-sqrt(6 / fan_in)) weights and zero biases, determined by seed."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ValidationError(f"invalid layer sizes {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases)


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.d_in:
        raise ValidationError(f"input has shape {x.shape}, network expects length {net.d_in}")
    if not np.all(np.isfinite(xb)):
        raise ValidationError("input has non-finite entries")
    return xb, single


def _forward_cache(net: Mlp, xb: np.ndarray) -> list[np.ndarray]:
    # activations per layer, input first; pre-activations are recoverable
    # from the rectified values for the mask (a > 0 iff z > 0)
    acts = [xb]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts


def forward(net: Mlp, x) -> np.ndarray:
    """Q-values for one state (1-d input) or a batch of states (2-d input)."""
    xb, single = _as_batch(net, x)
    out = _forward_cache(net, xb)[-1]
    return out[0] if single else out


def mse_loss(predicted, target) -> float:
    predicted = np.asarray(predicted, dtype=float)
    target = np.asarray(target, dtype=float)
    if predicted.shape != target.shape or predicted.size == 0:
        raise ValidationError(f"shape mismatch {predicted.shape} vs {target.shape}")
    return float(np.mean((predicted - target) ** 2))


def backward(net: Mlp, x, upstream) -> GradientBuffer:
    """Gradient of a scalar loss given its gradient w.r.t. the network output.

    For a batch input, ``upstream`` has one row per sample and the returned
    gradients are summed over the batch.
    """
    xb, single = _as_batch(net, x)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if single and g.ndim == 1 else g
    if g.shape != (xb.shape[0], net.d_out):
        raise ValidationError(f"upstream has shape {np.shape(upstream)}, expected {(xb.shape[0], net.d_out)}")
    acts = _forward_cache(net, xb)
    n_layers = len(net.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.weights[i].T) * (acts[i] > 0.0)
    return GradientBuffer(gw, gb)


def sgd_step(net: Mlp, grads: GradientBuffer, lr: float) -> Mlp:
    """Return ``theta - lr * grad`` as a new network."""
    if lr < 0:
        raise ValidationError(f"learning rate must be non-negative, got {lr}")
    if len(grads.weights) != len(net.weights) or any(
        gw.shape != w.shape or gb.shape != b.shape
        for gw, w, gb, b in zip(grads.weights, net.weights, grads.biases, net.biases)
    ):
        raise ValidationError("gradient shapes do not match the network")
    return Mlp(
        list(net.layer_sizes),
        [w - lr * gw for w, gw in zip(net.weights, grads.weights)],
        [b - lr * gb for b, gb in zip(net.biases, grads.biases)],
    )


def save_checkpoint(net: Mlp, path: str | Path, step_count: int = 0, extra: dict | None = None) -> None:
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "step_count": int(step_count)}
    payload.update(net.to_dict())
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[Mlp, dict]:
    """Load a network and return it with the full decoded payload."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    return Mlp.from_dict(payload), payload
