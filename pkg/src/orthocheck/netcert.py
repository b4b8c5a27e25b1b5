"""1-Lipschitz network components, Lipschitz bookkeeping and margin certificates.

Networks are described by a JSON document (``schema: 1``)::

    {
      "schema": 1,
      "input_shape": [3, 32, 32],
      "layers": [
        {"kind": "cayley_conv", "weights": "conv1.oct", "gain": 1.0},
        {"kind": "maxmin"},
        {"kind": "invertible_downsample"},
        {"kind": "convex_residual", "alpha_raw": 0.0,
         "inner": [{"kind": "cayley_conv", "weights": "conv2.oct"}, {"kind": "maxmin"}]},
        {"kind": "rko_conv", "weights": "conv3.oct", "method": "bjorck"},
        {"kind": "linear_cayley", "weights": "fc.oct"},
        {"kind": "scale", "c": 0.9}
      ]
    }

Weight paths are OCT1 files resolved relative to the JSON file.  Conv
weights are ``c_out x c_in x k x k``; ``linear_cayley`` weights are
``out x in`` and act on the flattened input.  ``gain`` defaults to the
Frobenius norm of the stored weights, so the file holds the effective
weights.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .cayley import CayleyConvParams, cayley_conv, cayley_semi
from .conv import conv_fft
from .errors import ShapeError
from .fourier import kernel_to_blocks
from .kernel import ConvKernel
from .lipschitz import rko
from .tensor_io import read_tensor

SQRT2 = math.sqrt(2.0)


def maxmin(x: np.ndarray) -> np.ndarray:
    """Sort consecutive channel pairs (0, 1), (2, 3), ... into (max, min)."""
    x = np.asarray(x)
    if x.ndim < 3 or x.shape[-3] % 2:
        raise ShapeError(f"maxmin needs an even channel count, got shape {x.shape}")
    a, b = x[..., 0::2, :, :], x[..., 1::2, :, :]
    out = np.empty_like(x)
    out[..., 0::2, :, :] = np.maximum(a, b)
    out[..., 1::2, :, :] = np.minimum(a, b)
    return out


def invertible_downsample(x: np.ndarray) -> np.ndarray:
    """``c x 2h x 2w -> 4c x h x w``, i.e. ``c (h k1) (w k2) -> (c k1 k2) h w``."""
    x = np.asarray(x)
    if x.ndim < 3 or x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ShapeError(f"invertible_downsample needs even spatial dims, got {x.shape}")
    *lead, c, h2, w2 = x.shape
    h, w = h2 // 2, w2 // 2
    y = x.reshape(*lead, c, h, 2, w, 2)
    nd = y.ndim
    y = y.transpose(*range(nd - 5), nd - 5, nd - 3, nd - 1, nd - 4, nd - 2)  # c k1 k2 h w
    return np.ascontiguousarray(y.reshape(*lead, 4 * c, h, w))


def invertible_upsample(y: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`invertible_downsample`."""
    y = np.asarray(y)
    if y.ndim < 3 or y.shape[-3] % 4:
        raise ShapeError(f"invertible_upsample needs channels divisible by 4, got {y.shape}")
    *lead, c4, h, w = y.shape
    x = y.reshape(*lead, c4 // 4, 2, 2, h, w)
    nd = x.ndim
    x = x.transpose(*range(nd - 5), nd - 5, nd - 2, nd - 4, nd - 1, nd - 3)  # c h k1 w k2
    return np.ascontiguousarray(x.reshape(*lead, c4 // 4, 2 * h, 2 * w))


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def convex_residual(f_out: np.ndarray, x: np.ndarray, alpha_raw: float) -> np.ndarray:
    """``alpha f(x) + (1 - alpha) x`` with ``alpha = sigmoid(alpha_raw)``."""
    f_out, x = np.asarray(f_out), np.asarray(x)
    if f_out.shape != x.shape:
        raise ShapeError(f"residual shapes differ: {f_out.shape} vs {x.shape}")
    alpha = sigmoid(alpha_raw)
    return alpha * f_out + (1.0 - alpha) * x


# --------------------------------------------------------------------------
# Layers and networks
# --------------------------------------------------------------------------


@dataclass
class CayleyConvLayer:
    params: CayleyConvParams
    kind = "cayley_conv"
    weighted = True

    def out_shape(self, shape):
        c, n, n2 = shape
        if c != self.params.c_in or n != self.params.n or n2 != n:
            raise ShapeError(f"cayley_conv expects {(self.params.c_in, self.params.n, self.params.n)}, got {shape}")
        return (self.params.c_out, n, n)

    def __call__(self, x):
        return cayley_conv(self.params, x)

    def bound(self) -> float:
        return 1.0


@dataclass
class RKOConvLayer:
    kernel: ConvKernel
    method: str = "bjorck"
    kind = "rko_conv"
    weighted = True

    def __post_init__(self):
        self.kernel = rko(self.kernel, self.method)
        self._blocks = kernel_to_blocks(self.kernel)

    def out_shape(self, shape):
        if shape != (self.kernel.c_in, self.kernel.n, self.kernel.n):
            raise ShapeError(f"rko_conv expects {(self.kernel.c_in, self.kernel.n, self.kernel.n)}, got {shape}")
        return (self.kernel.c_out, self.kernel.n, self.kernel.n)

    def __call__(self, x):
        return conv_fft(self._blocks, x)

    def bound(self) -> float:
        return 1.0


@dataclass
class LinearCayleyLayer:
    """Fully connected layer whose weight is replaced by its semi-orthogonal Cayley transform."""

    weight: np.ndarray
    kind = "linear_cayley"
    weighted = True

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 2:
            raise ShapeError("linear_cayley weights must be a matrix")
        self.q = cayley_semi(self.weight)

    def out_shape(self, shape):
        if int(np.prod(shape)) != self.weight.shape[1]:
            raise ShapeError(f"linear_cayley expects {self.weight.shape[1]} features, got {shape}")
        return (self.weight.shape[0],)

    def __call__(self, x):
        x = np.asarray(x)
        features = self.weight.shape[1]
        if x.size == features:
            return x.reshape(features) @ self.q.T
        return x.reshape(-1, features) @ self.q.T

    def bound(self) -> float:
        return 1.0


@dataclass
class MaxMinLayer:
    kind = "maxmin"
    weighted = False

    def out_shape(self, shape):
        if len(shape) != 3 or shape[0] % 2:
            raise ShapeError(f"maxmin needs an even channel count, got {shape}")
        return shape

    def __call__(self, x):
        return maxmin(x)

    def bound(self) -> float:
        return 1.0


@dataclass
class DownsampleLayer:
    kind = "invertible_downsample"
    weighted = False

    def out_shape(self, shape):
        c, h, w = shape
        if h % 2 or w % 2:
            raise ShapeError(f"invertible_downsample needs even spatial dims, got {shape}")
        return (4 * c, h // 2, w // 2)

    def __call__(self, x):
        return invertible_downsample(x)

    def bound(self) -> float:
        return 1.0


@dataclass
class ScaleLayer:
    c: float
    kind = "scale"
    weighted = False

    def out_shape(self, shape):
        return shape

    def __call__(self, x):
        return self.c * np.asarray(x)

    def bound(self) -> float:
        return abs(self.c)


@dataclass
class ConvexResidualLayer:
    inner: list
    alpha_raw: float = 0.0
    kind = "convex_residual"
    weighted = True

    @property
    def alpha(self) -> float:
        return sigmoid(self.alpha_raw)

    def out_shape(self, shape):
        out = chain_shapes(self.inner, shape)
        if out != tuple(shape):
            raise ShapeError(f"residual branch maps {shape} to {out}")
        return out

    def __call__(self, x):
        return convex_residual(forward(self.inner, x), x, self.alpha_raw)

    def bound(self) -> float:
        inner = math.prod(layer.bound() for layer in self.inner)
        return self.alpha * inner + (1.0 - self.alpha)


def chain_shapes(layers, shape) -> tuple:
    shape = tuple(shape)
    for layer in layers:
        shape = tuple(layer.out_shape(shape))
    return shape


def forward(layers, x):
    for layer in layers:
        x = layer(x)
    return x


@dataclass
class LipschitzLedger:
    per_layer_bounds: list[float] = field(default_factory=list)

    @property
    def network_bound(self) -> float:
        return math.prod(self.per_layer_bounds)


def scale_to_target(layers, target_L: float) -> list:
    """Follow each of the m weighted layers with ``scale(L ** (1/m))``."""
    if target_L <= 0:
        raise ValueError("target Lipschitz constant must be positive")
    m = sum(1 for layer in layers if layer.weighted)
    if m == 0:
        return list(layers)
    c = target_L ** (1.0 / m)
    out = []
    for layer in layers:
        out.append(layer)
        if layer.weighted:
            out.append(ScaleLayer(c))
    return out


def ledger(layers, target_L: float | None = None) -> LipschitzLedger:
    if target_L is not None:
        layers = scale_to_target(layers, target_L)
    return LipschitzLedger([float(layer.bound()) for layer in layers])


def apply_network(layers, x, target_L: float | None = None, input_shape=None):
    """Forward pass; the shape chain is checked first when ``input_shape`` is given."""
    if target_L is not None:
        layers = scale_to_target(layers, target_L)
    if input_shape is not None:
        chain_shapes(layers, input_shape)
    return forward(layers, x)


# --------------------------------------------------------------------------
# JSON network description
# --------------------------------------------------------------------------


def _layer_from_dict(d: dict, base: str, shape):
    kind = d.get("kind")

    def weights():
        return read_tensor(os.path.join(base, d["weights"]))

    if kind == "cayley_conv":
        w = weights()
        gain = d.get("gain", float(np.linalg.norm(w)))
        return CayleyConvLayer(CayleyConvParams(w, gain=gain, n=int(d.get("n", shape[-1]))))
    if kind == "rko_conv":
        return RKOConvLayer(ConvKernel(weights(), int(d.get("n", shape[-1]))), d.get("method", "bjorck"))
    if kind == "linear_cayley":
        return LinearCayleyLayer(weights())
    if kind == "maxmin":
        return MaxMinLayer()
    if kind == "invertible_downsample":
        return DownsampleLayer()
    if kind == "scale":
        return ScaleLayer(float(d["c"]))
    if kind == "convex_residual":
        inner = _layers_from_list(d.get("inner", []), base, shape)
        return ConvexResidualLayer(inner, float(d.get("alpha_raw", 0.0)))
    raise ShapeError(f"unknown layer kind {kind!r}")


def _layers_from_list(items, base, shape):
    layers = []
    for item in items:
        layer = _layer_from_dict(item, base, shape)
        shape = layer.out_shape(tuple(shape))
        layers.append(layer)
    return layers


def load_network(path: str | os.PathLike):
    """Parse a network JSON file; returns ``(layers, input_shape)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != 1:
        raise ShapeError(f"unsupported network schema {doc.get('schema')!r}")
    shape = tuple(doc["input_shape"])
    layers = _layers_from_list(doc["layers"], os.path.dirname(os.path.abspath(path)), shape)
    return layers, shape


# --------------------------------------------------------------------------
# Certification
# --------------------------------------------------------------------------


def margin(logits, t: int) -> float:
    """Gap between the true-class logit and the largest other logit, clamped at 0."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if logits.size < 2:
        raise ShapeError("margin needs at least two classes")
    if not 0 <= t < logits.size:
        raise IndexError(f"label {t} out of range for {logits.size} classes")
    others = np.delete(logits, t)
    return max(0.0, float(logits[t] - others.max()))


@dataclass(frozen=True)
class Certificate:
    certified: bool
    margin: float
    threshold: float


def certify(logits, t: int, L: float, eps: float) -> Certificate:
    """Certified iff the margin strictly exceeds ``sqrt(2) * L * eps``."""
    if L < 0 or eps < 0:
        raise ValueError("Lipschitz constant and eps must be non-negative")
    threshold = SQRT2 * L * eps
    m = margin(logits, t)
    return Certificate(m > threshold, m, threshold)
