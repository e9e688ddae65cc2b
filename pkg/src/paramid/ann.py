"""Layered feed-forward networks with bias neurons.

Weights are stored as one flat vector in a fixed canonical order: layer by
layer (``l = 1 .. L-1``), then target neuron ``j`` of that layer, then source
index ``i`` of the preceding layer with ``i = 0`` the bias neuron. Layer
``l`` therefore contributes a row-major ``N_l x (N_{l-1} + 1)`` block.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, ShapeError

FORMAT_TAG = "paramid.network/1"
ACTIVATIONS = ("sigmoid", "reciprocal")


@dataclass(frozen=True)
class Topology:
    layer_sizes: tuple[int, ...]
    gain: float = 0.5
    activation: str = "sigmoid"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"invalid layer sizes {self.layer_sizes}")
        if self.gain <= 0:
            raise ConfigError("gain must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def parse(cls, layout: str, **kw) -> "Topology":
        """``"3-2-1"`` -> ``Topology((3, 2, 1))``."""
        try:
            return cls(tuple(int(p) for p in layout.replace(" ", "").split("-")), **kw)
        except ValueError as exc:
            raise ConfigError(f"bad layout {layout!r}") from exc

    @property
    def layout(self) -> str:
        return "-".join(map(str, self.layer_sizes))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def weight_count(self) -> int:
        s = self.layer_sizes
        return sum((s[l - 1] + 1) * s[l] for l in range(1, len(s)))

    def layer_slices(self) -> list[tuple[slice, tuple[int, int]]]:
        out, start = [], 0
        s = self.layer_sizes
        for l in range(1, len(s)):
            shape = (s[l], s[l - 1] + 1)
            out.append((slice(start, start + shape[0] * shape[1]), shape))
            start += shape[0] * shape[1]
        return out


@dataclass(frozen=True, eq=False)
class Network:
    topology: Topology
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size != self.topology.weight_count:
            raise ShapeError(
                f"{self.topology.layout} needs {self.topology.weight_count} weights, got {w.size}"
            )
        if not np.all(np.isfinite(w)):
            raise DataError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def layer_matrices(self) -> list[np.ndarray]:
        return [self.weights[sl].reshape(shape) for sl, shape in self.topology.layer_slices()]

    def __call__(self, x):
        return propagate(self, x)

    def to_dict(self) -> dict:
        t = self.topology
        return {
            "format": FORMAT_TAG,
            "layer_sizes": list(t.layer_sizes),
            "gain": t.gain,
            "activation": t.activation,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "Network":
        if data.get("format") != FORMAT_TAG:
            raise ConfigError(f"unsupported network format {data.get('format')!r}")
        topo = Topology(tuple(data["layer_sizes"]), data["gain"], data["activation"])
        return cls(topo, np.array(data["weights"], dtype=float))


@dataclass(frozen=True)
class Pattern:
    input: np.ndarray
    target: np.ndarray


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n")


def load_network(path) -> Network:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read network {path}: {exc}") from exc
    return Network.from_dict(data)


def activation(s, gain: float = 0.5, kind: str = "sigmoid"):
    """Logistic activation ``1 / (1 + exp(-gain * s))``.

    ``kind="reciprocal"`` evaluates ``1 / (1 + exp(-gain / s))`` instead,
    with ``s = 0`` mapped to 0.5.
    """
    s = np.asarray(s, dtype=float)
    if kind == "sigmoid":
        out = expit(gain * s)
    elif kind == "reciprocal":
        with np.errstate(divide="ignore"):
            out = np.where(s == 0.0, 0.5, expit(gain / np.where(s == 0.0, 1.0, s)))
    else:
        raise ConfigError(f"unknown activation {kind!r}")
    return float(out) if out.ndim == 0 else out


def propagate(net: Network, x) -> np.ndarray:
    """Output layer activations for one input vector (or a batch of rows)."""
    x = np.asarray(x, dtype=float)
    t = net.topology
    if x.shape[-1] != t.n_inputs:
        raise ShapeError(f"expected {t.n_inputs} inputs, got {x.shape[-1]}")
    o = x
    for W in net.layer_matrices():
        o = activation(o @ W[:, 1:].T + W[:, 0], t.gain, t.activation)
    return np.asarray(o)


def propagate_population(topology: Topology, weights: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Outputs of ``k`` networks sharing one topology.

    ``weights`` is ``(k, weight_count)``, ``X`` is ``(p, N_0)``; the result
    has shape ``(k, p, N_{L-1})``.
    """
    W = np.asarray(weights, dtype=float)
    k = W.shape[0]
    o = np.broadcast_to(np.asarray(X, dtype=float), (k,) + np.shape(X))
    for sl, (rows, cols) in topology.layer_slices():
        M = W[:, sl].reshape(k, rows, cols)
        s = np.matmul(o, M[:, :, 1:].transpose(0, 2, 1)) + M[:, None, :, 0]
        o = activation(s, topology.gain, topology.activation)
    return o


def pattern_error(target, output) -> float:
    t = np.asarray(target, dtype=float)
    o = np.asarray(output, dtype=float)
    if t.shape != o.shape:
        raise ShapeError(f"target {t.shape} and output {o.shape} differ")
    return float(np.sqrt(np.sum((t - o) ** 2)))


def dataset_error(net: Network, patterns: Sequence[Pattern]) -> float:
    """Mean per-pattern Euclidean error."""
    if not patterns:
        raise DataError("empty pattern set")
    return float(np.mean([pattern_error(p.target, propagate(net, p.input)) for p in patterns]))


def population_error(topology: Topology, weights: np.ndarray, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """:func:`dataset_error` for each row of ``weights`` at once."""
    out = propagate_population(topology, weights, X)
    return np.sqrt(np.sum((out - T[None, :, :]) ** 2, axis=2)).mean(axis=1)


def weights_to_vector(net: Network) -> np.ndarray:
    return net.weights.copy()


def vector_to_weights(topology: Topology, vec) -> Network:
    return Network(topology, np.asarray(vec, dtype=float))


def stack_patterns(patterns: Sequence[Pattern]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([p.input for p in patterns], dtype=float)
    T = np.array([p.target for p in patterns], dtype=float)
    return X, T
