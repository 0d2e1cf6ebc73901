"""Small dense feedforward networks with hand-written backpropagation.

Weights are stored as ``(n_out, n_in)`` matrices. Inputs may be a single
vector or a ``(batch, n_in)`` matrix; gradients are summed over the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

HEADS = ("softmax", "linear")


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class GradientBundle:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def global_norm(self) -> float:
        sq = sum(float(np.sum(w * w)) for w in self.weights)
        sq += sum(float(np.sum(b * b)) for b in self.biases)
        return float(np.sqrt(sq))

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle([c * w for w in self.weights], [c * b for b in self.biases])

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle([a + b for a, b in zip(self.weights, other.weights)],
                              [a + b for a, b in zip(self.biases, other.biases)])

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)


class DenseNet:
    """Affine layers with Leaky-ReLU between them and a softmax or linear head.

    Args:
        layer_sizes: ``[n_in, h1, ..., n_out]``; two entries give a single
            affine map with no hidden activation.
        head: ``"softmax"`` or ``"linear"``.
        slope: negative slope of the Leaky-ReLU.
        seed: seed for Glorot-uniform initialization.
        zero_last: start the output layer at zero (uniform softmax / zero output).
    """

    def __init__(self, layer_sizes: Sequence[int], head: str = "linear", slope: float = 0.01,
                 seed: Optional[int] = None, zero_last: bool = False):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if len(layer_sizes) < 2 or any(int(n) < 1 for n in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.head = head
        self.slope = float(slope)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (n_in + n_out))
            self.weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
            self.biases.append(np.zeros(n_out))
        if zero_last:
            self.weights[-1][:] = 0.0

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def parameter_count(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in or x.ndim > 2:
            raise ValueError(f"expected input of length {self.n_in}, got shape {x.shape}")
        return x

    def _run(self, x):
        pre, acts = [], [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = z if i == last else leaky_relu(z, self.slope)
            acts.append(h)
        out = softmax(h) if self.head == "softmax" else h
        return pre, acts, out

    def forward(self, x):
        """Network output for one input vector or a batch of rows."""
        x = self._check_input(x)
        return self._run(x)[2]

    def logits(self, x):
        x = self._check_input(x)
        return self._run(x)[1][-1]

    def backward(self, x, grad, wrt: str = "output") -> GradientBundle:
        """Parameter gradients given the upstream gradient of a scalar loss.

        ``grad`` is ``dL/d(output)`` (``wrt="output"``) or, for softmax heads,
        ``dL/d(logits)`` (``wrt="logits"``). Shapes follow the input: one
        vector, or one row per batch row.
        """
        x = self._check_input(x)
        grad = np.asarray(grad, dtype=float)
        if grad.shape != x.shape[:-1] + (self.n_out,):
            raise ValueError(f"upstream gradient shape {grad.shape} does not match output")
        single = x.ndim == 1
        if single:
            x, grad = x[None, :], grad[None, :]
        pre, acts, out = self._run(x)
        if wrt == "output" and self.head == "softmax":
            g = out * (grad - np.sum(grad * out, axis=1, keepdims=True))
        elif wrt in ("output", "logits"):
            g = grad
        else:
            raise ValueError(f"unknown gradient target {wrt!r}")
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = g.T @ acts[i]
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i]) * np.where(pre[i - 1] > 0, 1.0, self.slope)
        return GradientBundle(gw, gb)

    def parameters(self):
        return GradientBundle(self.weights, self.biases)

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.layer_sizes = list(self.layer_sizes)
        other.head = self.head
        other.slope = self.slope
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def to_dict(self):
        return {
            "layer_sizes": self.layer_sizes,
            "head": self.head,
            "slope": self.slope,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "DenseNet":
        net = cls(d["layer_sizes"], head=d["head"], slope=d.get("slope", 0.01), seed=0)
        net.weights = [np.array(w, dtype=float).reshape(n_out, n_in) for w, n_in, n_out
                       in zip(d["weights"], net.layer_sizes[:-1], net.layer_sizes[1:])]
        net.biases = [np.array(b, dtype=float) for b in d["biases"]]
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DenseNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sgd_step(net: DenseNet, grads: GradientBundle, lr: float, clip: Optional[float] = None) -> DenseNet:
    """In-place descent ``p <- p - lr * g``, with optional global-norm clipping."""
    scale = lr
    if clip is not None:
        norm = grads.global_norm()
        if norm > clip:
            scale = lr * clip / norm
    for w, gw in zip(net.weights, grads.weights):
        if w.shape != gw.shape:
            raise ValueError("gradient bundle does not match network shapes")
        w -= scale * gw
    for b, gb in zip(net.biases, grads.biases):
        b -= scale * gb
    return net


def numerical_gradient(net: DenseNet, loss, h: float = 1e-5) -> GradientBundle:
    """Central finite-difference gradient of ``loss(net)`` w.r.t. every parameter."""
    def fd(arrays):
        out = []
        for p in arrays:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss(net)
                p[idx] = old - h
                down = loss(net)
                p[idx] = old
                g[idx] = (up - down) / (2 * h)
            out.append(g)
        return out
    return GradientBundle(fd(net.weights), fd(net.biases))
