"""Baseline Lipschitz-constrained convolutions and the norm-preservation check.

Covers exact convolution singular values, one-sided spectral normalization
(OSSN), singular value clipping with kernel-support projection (SVCM),
Bjorck orthogonalization, and reshaped kernel orthogonalization (RKO/CRKO).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cayley import CayleyConvParams, cayley_conv, cayley_semi
from .conv import conv_fft, conv_transpose
from .errors import DivergenceError, NumericError, ShapeError
from .fourier import FourierPlan, blocks_to_kernel, kernel_to_blocks
from .kernel import ConvKernel
from .tensor_io import SplitMix64, derive_seed, real_dtype

log = logging.getLogger(__name__)

METHODS = ("cayley", "rko", "crko", "ossn", "svcm")


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray
    n: int
    c_out: int
    c_in: int
    k: int

    @property
    def sigma_max(self) -> float:
        return float(self.singular_values[0])

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1])

    def gap(self) -> float:
        """Distance from sigma_max to the next distinct singular value (0 if none)."""
        sv = self.singular_values
        below = sv[sv < sv[0] * (1 - 1e-12)]
        return float(sv[0] - below[0]) if below.size else 0.0


def conv_singular_values(w: ConvKernel) -> SpectrumReport:
    """All singular values of the convolution, via one small SVD per frequency."""
    blocks = kernel_to_blocks(w)
    sv = np.linalg.svd(blocks.data, compute_uv=False).ravel()
    return SpectrumReport(np.sort(sv)[::-1].copy(), w.n, w.c_out, w.c_in, w.k)


def ossn_sigma_max(w: ConvKernel, iters: int = 100, seed: int = 0) -> float:
    """Power iteration for the largest singular value of the convolution."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    fwd = kernel_to_blocks(w)
    bwd = kernel_to_blocks(conv_transpose(w))
    s = SplitMix64(seed).normal((w.c_in, w.n, w.n)).astype(w.taps.dtype)
    s /= np.linalg.norm(s)
    sigma = 0.0
    for _ in range(iters):
        t = conv_fft(fwd, s)
        sigma = float(np.linalg.norm(t))
        if sigma == 0.0:
            return 0.0
        s = conv_fft(bwd, t)
        s /= np.linalg.norm(s)
    return float(np.linalg.norm(conv_fft(fwd, s)))


def ossn_normalize(w: ConvKernel, iters: int = 100, seed: int = 0) -> ConvKernel:
    sigma = ossn_sigma_max(w, iters, seed)
    if sigma < 1e-12:
        raise NumericError(f"spectral norm estimate {sigma:.3g} too small to normalize")
    return ConvKernel((w.taps / sigma).astype(w.taps.dtype), w.n)


@dataclass
class ClipResult:
    """``deviations`` holds max |sigma - 1| per iteration; ``distances`` holds
    the Frobenius distance sqrt(sum (sigma - 1)^2) to the orthogonal set."""

    kernel: ConvKernel
    deviations: list[float] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)


def svcm_clip(w: ConvKernel, iters: int = 50) -> ClipResult:
    """Alternate singular-value clipping per frequency with k x k truncation.

    ``deviations[i]`` is ``max |sigma - 1|`` over the spectrum of the kernel
    after iteration ``i + 1``.  Only the Frobenius distance is guaranteed to
    be non-increasing; the max deviation can move either way.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    kernel = w
    deviations, distances = [], []
    for _ in range(iters):
        blocks = kernel_to_blocks(kernel)
        u, _, vh = np.linalg.svd(blocks.data, full_matrices=False)
        kernel = blocks_to_kernel(blocks.map(lambda _d: u @ vh), w.k)
        sv = conv_singular_values(kernel).singular_values
        deviations.append(float(np.max(np.abs(sv - 1.0))))
        distances.append(float(np.linalg.norm(sv - 1.0)))
    return ClipResult(kernel, deviations, distances)


def _power_sigma(m: np.ndarray, iters: int = 50) -> float:
    v = np.ones(m.shape[1], dtype=m.dtype)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = m.T @ (m @ v)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
    return float(np.linalg.norm(m @ v))


def bjorck_orthogonalize(
    m: np.ndarray, iters: int = 30, beta: float = 0.5, tol: float = 1e-15
) -> np.ndarray:
    """First-order Bjorck iteration ``A <- A (I + beta (I - A^T A))``.

    Wide matrices are handled through their transpose.  Inputs whose
    estimated spectral norm exceeds 1 are pre-scaled so the iteration stays
    inside its convergence region.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError("bjorck_orthogonalize needs a matrix")
    if m.shape[0] < m.shape[1]:
        return bjorck_orthogonalize(m.T, iters, beta, tol).T
    a = m.copy()
    sigma = _power_sigma(a)
    if sigma > 1.0:
        a = a / sigma
    eye = np.eye(a.shape[1], dtype=a.dtype)
    prev = np.max(np.abs(a.T @ a - eye))
    growth = 0
    for _ in range(iters):
        if prev <= tol:
            break
        a = a @ (eye + beta * (eye - a.T @ a))
        err = np.max(np.abs(a.T @ a - eye))
        growth = growth + 1 if err > prev else 0
        if growth >= 3 or not np.isfinite(err):
            raise DivergenceError(f"Bjorck iteration diverging (error {err:.3g})")
        prev = err
    return a


def rko(w: ConvKernel, method: str = "bjorck") -> ConvKernel:
    """Orthogonalize the ``c_out x k^2 c_in`` reshaped kernel matrix.

    The result is scaled by ``1/k`` so the convolution's spectral norm,
    which is at most ``k`` times that of the reshaped matrix, stays <= 1.
    """
    mat = w.taps.reshape(w.c_out, -1).astype(np.float64)
    if method == "bjorck":
        q = bjorck_orthogonalize(mat)
    elif method == "cayley":
        q = cayley_semi(mat)
    else:
        raise ValueError(f"unknown RKO method {method!r}")
    taps = (q.reshape(w.taps.shape) / w.k).astype(w.taps.dtype)
    return ConvKernel(taps, w.n)


# --------------------------------------------------------------------------
# Norm preservation check
# --------------------------------------------------------------------------


@dataclass
class NormReport:
    method: str
    c_in: int
    c_out: int
    n: int
    k: int
    precision: str
    trials: int
    seed: int
    ratios: np.ndarray
    extra: dict = field(default_factory=dict)
    bins: int = 20

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min())

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def mean(self) -> float:
        return float(self.ratios.mean())

    def histogram(self) -> dict:
        lo, hi = self.min_ratio, self.max_ratio
        pad = 1e-12 * max(1.0, abs(hi))
        if hi - lo < pad:
            lo, hi = lo - pad, hi + pad
        counts, edges = np.histogram(self.ratios, bins=self.bins, range=(lo, hi))
        return {"counts": counts.tolist(), "edges": edges.tolist()}

    def metrics(self) -> dict:
        out = {
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "mean_ratio": self.mean,
        }
        out.update(self.extra)
        return out


def random_raw_weights(rng: SplitMix64, c_out, c_in, k, precision="f64") -> np.ndarray:
    """Uniform(-b, b) weights with ``b = 1/sqrt(c_in k^2)``, the usual conv init."""
    bound = 1.0 / np.sqrt(c_in * k * k)
    return rng.uniform((c_out, c_in, k, k), -bound, bound).astype(real_dtype(precision))


def build_layer(method, raw, n, precision, svcm_iters=50, ossn_iters=100, seed=0):
    """Return ``(apply_fn, extra_metrics)`` for one random layer of ``method``."""
    if method == "cayley":
        params = CayleyConvParams(raw, gain=float(np.linalg.norm(raw)), n=n)
        return (lambda x: cayley_conv(params, x)), {}
    kernel = ConvKernel(raw, n)
    extra = {}
    if method == "rko":
        kernel = rko(kernel, "bjorck")
    elif method == "crko":
        kernel = rko(kernel, "cayley")
    elif method == "ossn":
        kernel = ossn_normalize(kernel, ossn_iters, seed)
    elif method == "svcm":
        res = svcm_clip(kernel, svcm_iters)
        kernel = res.kernel
        extra = {f"d{svcm_iters}": res.deviations[-1], "deviations": res.deviations}
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    blocks = kernel_to_blocks(kernel, FourierPlan(n, precision))
    return (lambda x: conv_fft(blocks, x)), extra


def verify_norm_preservation(
    method: str = "cayley",
    c_in: int = 16,
    c_out: int = 16,
    n: int = 8,
    k: int = 3,
    trials: int = 1000,
    seed: int = 0,
    precision: str = "f32",
    inputs_per_layer: int = 100,
    svcm_iters: int = 50,
    ossn_iters: int = 100,
    bins: int = 20,
) -> NormReport:
    """Measure ``||layer(x)|| / ||x||`` on random unit inputs.

    A fresh random layer is drawn every ``inputs_per_layer`` trials; group
    ``g`` uses the child seed ``derive_seed(seed, g)`` so results do not
    depend on how the groups are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ratios = []
    extra: dict = {}
    groups = -(-trials // inputs_per_layer)
    for g in range(groups):
        rng = SplitMix64(derive_seed(seed, g))
        m = min(inputs_per_layer, trials - g * inputs_per_layer)
        raw = random_raw_weights(rng, c_out, c_in, k, precision)
        layer, extra_g = build_layer(method, raw, n, precision, svcm_iters, ossn_iters, seed)
        if g == 0:
            extra = extra_g
        x = rng.normal((m, c_in, n, n))
        x /= np.linalg.norm(x.reshape(m, -1), axis=1)[:, None, None, None]
        x = x.astype(real_dtype(precision))
        y = layer(x)
        num = np.linalg.norm(y.reshape(m, -1).astype(np.float64), axis=1)
        den = np.linalg.norm(x.reshape(m, -1).astype(np.float64), axis=1)
        ratios.append(num / den)
    report = NormReport(
        method, c_in, c_out, n, k, precision, trials, seed, np.concatenate(ratios), extra, bins
    )
    log.debug("verify %s %d->%d: [%g, %g]", method, c_in, c_out, report.min_ratio, report.max_ratio)
    return report
