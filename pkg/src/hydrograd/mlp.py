"""Minimal multilayer perceptron whose weights can live on a tape as leaves.

The network is a stack of affine layers with an elementwise activation on
every hidden layer and a linear output layer; squashing into physical ranges
happens downstream via :func:`bound`, which keeps gradients alive at the
range limits (hard clipping would zero them).

Weights are canonical ``numpy`` arrays (:class:`MLPWeights`); the forward
pass operates on a nested *handle* structure produced by
:func:`layer_handles` or :func:`layers_from_flat`, so the same code runs
traced (handles are tape node indices) or untraced (handles are floats).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .tape import FLOATS, Tape

ACTIVATIONS = ("tanh", "sigmoid", "relu")


@dataclass
class MLPConfig:
    """Architecture spec: layer sizes (input first, output last), activation, seed."""

    layer_sizes: tuple
    hidden_activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer size")
        if any(s <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")


@dataclass
class MLPWeights:
    """Per-layer weight matrices (out x in) and bias vectors."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    hidden_activation: str = "tanh"

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MLPWeights":
        return MLPWeights(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
        )


def init(config: MLPConfig) -> MLPWeights:
    """Glorot-uniform weights in [-s, s], s = sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes, config.layer_sizes[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPWeights(weights, biases, config.hidden_activation)


def flatten(w: MLPWeights) -> np.ndarray:
    """Layer-by-layer flat view: weight rows first (row-major), then biases."""
    parts = []
    for W, b in zip(w.weights, w.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(template: MLPWeights, flat: np.ndarray) -> MLPWeights:
    out = template.copy()
    pos = 0
    for ly, (W, b) in enumerate(zip(out.weights, out.biases)):
        n = W.size
        out.weights[ly] = flat[pos : pos + n].reshape(W.shape).copy()
        pos += n
        n = b.size
        out.biases[ly] = flat[pos : pos + n].copy()
        pos += n
    if pos != flat.size:
        raise ValueError(f"flat vector length {flat.size} does not match network ({pos})")
    return out


def layer_handles(w: MLPWeights, bk=FLOATS, leaf_key_start=None):
    """Nested handle structure [(W_rows, b), ...] for :func:`forward`.

    With a Tape backend, weights become leaves keyed ``leaf_key_start..`` in
    flatten() order when a start key is given, otherwise constants.
    """
    if isinstance(bk, Tape) and leaf_key_start is not None:
        k = leaf_key_start
        layers = []
        for W, b in zip(w.weights, w.biases):
            rows = []
            for i in range(W.shape[0]):
                row = []
                for j in range(W.shape[1]):
                    row.append(bk.leaf(float(W[i, j]), k))
                    k += 1
                rows.append(row)
            bias = []
            for i in range(b.size):
                bias.append(bk.leaf(float(b[i]), k))
                k += 1
            layers.append((rows, bias))
        return layers
    mk = bk.const
    return [
        ([[mk(float(x)) for x in row] for row in W], [mk(float(x)) for x in b])
        for W, b in zip(w.weights, w.biases)
    ]


def layers_from_flat(template: MLPWeights, handles):
    """Arrange pre-created flat handles (flatten() order) into layer structure."""
    layers = []
    pos = 0
    for W, b in zip(template.weights, template.biases):
        rows = []
        for i in range(W.shape[0]):
            rows.append(list(handles[pos : pos + W.shape[1]]))
            pos += W.shape[1]
        bias = list(handles[pos : pos + b.size])
        pos += b.size
        layers.append((rows, bias))
    return layers


def forward(bk, layers, inputs, activation: str = "tanh"):
    """Affine + activation per hidden layer, linear final layer.

    ``inputs`` are handles on the same backend; length must equal the first
    layer's fan-in.
    """
    if len(inputs) != len(layers[0][0][0]):
        raise ValueError(
            f"input length {len(inputs)} != network input dim {len(layers[0][0][0])}"
        )
    act = getattr(bk, activation)
    h = inputs
    last = len(layers) - 1
    for ly, (rows, bias) in enumerate(layers):
        out = []
        for i, row in enumerate(rows):
            acc = bias[i]
            for j, wij in enumerate(row):
                acc = bk.add(acc, bk.mul(wij, h[j]))
            out.append(acc if ly == last else act(acc))
        h = out
    return h


def bound(bk, raw, lo, hi):
    """Map raw outputs into (lo_i, hi_i) via lo + (hi-lo)*sigmoid(raw).

    Strictly inside the open interval and differentiable everywhere; in
    double precision the logistic saturates for |raw| beyond ~37, where the
    output reaches the limit exactly (and its gradient underflows to zero,
    so training never drives raw values there).
    """
    if not (len(raw) == len(lo) == len(hi)):
        raise ValueError("raw/lo/hi lengths differ")
    out = []
    for r, lo_i, hi_i in zip(raw, lo, hi):
        if not lo_i < hi_i:
            raise ValueError(f"bound needs lo < hi, got [{lo_i}, {hi_i}]")
        out.append(bk.addc(bk.mulc(bk.sigmoid(r), hi_i - lo_i), lo_i))
    return out


def run(w: MLPWeights, inputs) -> list:
    """Plain-float forward pass of a weight set."""
    return forward(FLOATS, layer_handles(w), [float(x) for x in inputs], w.hidden_activation)


def save_weights(w: MLPWeights, path) -> None:
    """Weight snapshot as flat CSV rows (layer,row,col,value); col -1 is the bias.

    Values are written with shortest round-trip formatting, so load_weights
    restores them exactly.  The activation is not part of the snapshot; it
    travels with the experiment configuration.
    """
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["layer", "row", "col", "value"])
        for ly, (W, b) in enumerate(zip(w.weights, w.biases)):
            for i in range(W.shape[0]):
                for j in range(W.shape[1]):
                    out.writerow([ly, i, j, repr(float(W[i, j]))])
            for i in range(b.size):
                out.writerow([ly, i, -1, repr(float(b[i]))])


def load_weights(path, hidden_activation: str = "tanh") -> MLPWeights:
    entries = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["layer", "row", "col", "value"]:
            raise ValueError(f"{path}: bad weight snapshot header {header}")
        for line in rd:
            ly, i, j = int(line[0]), int(line[1]), int(line[2])
            entries[(ly, i, j)] = float(line[3])
    n_layers = max(k[0] for k in entries) + 1
    weights, biases = [], []
    for ly in range(n_layers):
        n_out = max(k[1] for k in entries if k[0] == ly) + 1
        n_in = max(k[2] for k in entries if k[0] == ly) + 1
        W = np.empty((n_out, n_in))
        b = np.empty(n_out)
        for i in range(n_out):
            b[i] = entries[(ly, i, -1)]
            for j in range(n_in):
                W[i, j] = entries[(ly, i, j)]
        weights.append(W)
        biases.append(b)
    return MLPWeights(weights, biases, hidden_activation)
