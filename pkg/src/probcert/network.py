"""Feed-forward classifiers: representation, JSON I/O and exact evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed networks or model files."""


class TiedPredictionError(ValueError):
    """Raised when the top logit at the anchor input is not unique."""


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    ARCTAN = "arctan"
    IDENTITY = "identity"


def _sigmoid(z):
    # scipy.special.expit is stable for large |z|
    from scipy.special import expit

    return expit(z)


def activate(kind: Activation, z):
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.SIGMOID:
        return _sigmoid(z)
    if kind is Activation.ARCTAN:
        return np.arctan(z)
    return z


def activate_derivative(kind: Activation, z):
    if kind is Activation.RELU:
        return (np.asarray(z) > 0).astype(float)
    if kind is Activation.TANH:
        return 1.0 - np.tanh(z) ** 2
    if kind is Activation.SIGMOID:
        s = _sigmoid(z)
        return s * (1.0 - s)
    if kind is Activation.ARCTAN:
        return 1.0 / (1.0 + np.asarray(z) ** 2)
    return np.ones_like(np.asarray(z, dtype=float))


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Network:
    """A dense classifier ``x -> f(x)`` with ``K = output_dim`` logits.

    Layers are applied in order as ``z = W a + b``, ``a = act(z)``. The
    arrays are copied and made read-only on construction.
    """

    layers: tuple[Layer, ...]
    input_dim: int = field(init=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise NetworkError("network must have at least one layer")
        frozen = []
        prev = None
        for k, layer in enumerate(layers):
            w = np.array(layer.weights, dtype=np.float64)
            b = np.array(layer.bias, dtype=np.float64)
            if w.ndim != 2:
                raise NetworkError(f"layer {k}: weights must be a matrix")
            if b.shape != (w.shape[0],):
                raise NetworkError(
                    f"layer {k}: bias has length {b.size}, expected {w.shape[0]}"
                )
            if prev is not None and w.shape[1] != prev:
                raise NetworkError(
                    f"layer {k}: dimension mismatch, weights have {w.shape[1]} "
                    f"columns but layer {k - 1} has {prev} outputs"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetworkError(f"layer {k}: non-finite weight or bias")
            w.flags.writeable = False
            b.flags.writeable = False
            frozen.append(Layer(w, b, Activation(layer.activation)))
            prev = w.shape[0]
        if prev < 2:
            raise NetworkError("classifier needs at least two output classes")
        object.__setattr__(self, "layers", tuple(frozen))
        object.__setattr__(self, "input_dim", frozen[0].in_dim)

    @classmethod
    def from_arrays(
        cls,
        weights: Sequence,
        biases: Sequence,
        activations: Iterable[str | Activation],
    ) -> "Network":
        acts = list(activations)
        if not (len(weights) == len(biases) == len(acts)):
            raise NetworkError("weights, biases and activations differ in length")
        return cls(
            tuple(Layer(w, b, Activation(a)) for w, b, a in zip(weights, biases, acts))
        )

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def forward(self, x) -> np.ndarray:
        return forward(self, x)

    def predict(self, x0) -> int:
        return predicted_class(self, x0)


def forward(net: Network, x) -> np.ndarray:
    """Exact logits for one input (shape ``[n0]``) or a batch (``[N, n0]``)."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != net.input_dim:
        raise NetworkError(f"input has length {a.shape[-1]}, expected {net.input_dim}")
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = activate(layer.activation, z)
    return a


def margin(net: Network, x, c: int, t: int):
    """``f_c(x) - f_t(x)``; vectorized over a leading batch axis."""
    k = net.output_dim
    if not (0 <= c < k and 0 <= t < k):
        raise ValueError(f"class indices ({c}, {t}) outside 0..{k - 1}")
    if c == t:
        raise ValueError("margin needs two distinct classes")
    logits = forward(net, x)
    return logits[..., c] - logits[..., t]


def predicted_class(net: Network, x0) -> int:
    """Strict argmax of the logits at ``x0``; ties are rejected."""
    logits = forward(net, x0)
    c = int(np.argmax(logits))
    if np.count_nonzero(logits == logits[c]) > 1:
        raise TiedPredictionError(f"top logit {logits[c]!r} is tied at the anchor input")
    return c


@dataclass(frozen=True)
class InputSpec:
    """Anchor point, ball radius and norm, with the predicted class derived from the network."""

    x0: np.ndarray
    epsilon: float
    p: float
    c: int
    targets: tuple[int, ...]

    @classmethod
    def build(cls, net: Network, x0, epsilon: float = 0.0, p=np.inf, targets=None):
        x0 = np.array(x0, dtype=np.float64)
        if x0.shape != (net.input_dim,):
            raise NetworkError(f"x0 has shape {x0.shape}, expected ({net.input_dim},)")
        if not np.all(np.isfinite(x0)):
            raise NetworkError("x0 must be finite")
        if epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        p = parse_norm(p)
        c = predicted_class(net, x0)
        if targets is None or len(targets) == 0:
            tgt = tuple(t for t in range(net.output_dim) if t != c)
        else:
            tgt = tuple(sorted({int(t) for t in targets}))
            bad = [t for t in tgt if t == c or not 0 <= t < net.output_dim]
            if bad:
                raise ValueError(f"invalid target classes {bad} for predicted class {c}")
        x0.flags.writeable = False
        return cls(x0, float(epsilon), p, c, tgt)

    def with_epsilon(self, epsilon: float) -> "InputSpec":
        if epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        return InputSpec(self.x0, float(epsilon), self.p, self.c, self.targets)


def parse_norm(p) -> float:
    if isinstance(p, str):
        p = p.strip().lower()
        if p in ("inf", "linf", "infinity"):
            return math.inf
        p = float(p)
    p = float(p)
    if p not in (1.0, 2.0, math.inf):
        raise ValueError(f"unsupported norm p={p}; expected 1, 2 or inf")
    return p


def dual_norm(p: float) -> float:
    return {1.0: math.inf, 2.0: 2.0, math.inf: 1.0}[parse_norm(p)]


# ---------------------------------------------------------------- file I/O


def network_to_dict(net: Network) -> dict:
    return {
        "input_dim": net.input_dim,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation.value,
            }
            for layer in net.layers
        ],
    }


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict) or "layers" not in data:
        raise NetworkError("model must be an object with a 'layers' list")
    layers = []
    for k, raw in enumerate(data["layers"]):
        try:
            kind = Activation(raw["activation"])
        except ValueError:
            raise NetworkError(
                f"layer {k}: unknown activation {raw['activation']!r}"
            ) from None
        except KeyError as exc:
            raise NetworkError(f"layer {k}: missing field {exc}") from None
        try:
            w = np.array(raw["weights"], dtype=np.float64)
            b = np.array(raw["bias"], dtype=np.float64)
        except KeyError as exc:
            raise NetworkError(f"layer {k}: missing field {exc}") from None
        except ValueError:
            raise NetworkError(f"layer {k}: ragged or non-numeric weights") from None
        layers.append(Layer(w, b, kind))
    net = Network(tuple(layers))
    declared = data.get("input_dim")
    if declared is not None and int(declared) != net.input_dim:
        raise NetworkError(
            f"layer 0: dimension mismatch, input_dim={declared} but weights have "
            f"{net.input_dim} columns"
        )
    return net


def _load_json(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise NetworkError(f"{path}: parse error at byte {offset}: {exc.msg}") from None


def load_network(path) -> Network:
    return network_from_dict(_load_json(path))


def save_network(net: Network, path) -> None:
    # repr-based float output round-trips exactly
    Path(path).write_text(json.dumps(network_to_dict(net)), encoding="utf-8")


def load_input(path) -> tuple[np.ndarray, int | None]:
    """Read ``{"x0": [...], "label": optional int}``."""
    data = _load_json(path)
    if "x0" not in data:
        raise NetworkError(f"{path}: input file has no 'x0'")
    label = data.get("label")
    return np.array(data["x0"], dtype=np.float64), (None if label is None else int(label))


def save_input(x0, path, label: int | None = None) -> None:
    data = {"x0": np.asarray(x0, dtype=np.float64).tolist()}
    if label is not None:
        data["label"] = int(label)
    Path(path).write_text(json.dumps(data), encoding="utf-8")
