"""Circular multi-channel 2D convolution: spatial, Fourier, transpose, inverse, dense.

Dense matrices use channel-major then row-major spatial ``vec`` ordering:
entry ``(c, i, j)`` of a ``c x n x n`` tensor lives at ``c*n*n + i*n + j``,
which is exactly ``x.reshape(-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OracleSizeError, ShapeError, SingularConvolutionError
from .fourier import FourierBlocks, fft2_batch, ifft2_batch
from .kernel import ConvKernel
from .tensor_io import eps

ORACLE_LIMIT = 4096


@dataclass(frozen=True)
class DenseConvMatrix:
    matrix: np.ndarray
    n: int
    c_out: int
    c_in: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        lead = x.shape[:-3]
        flat = x.reshape(lead + (-1,))
        y = flat @ self.matrix.T
        return y.reshape(lead + (self.c_out, self.n, self.n))


def _check_input(x: np.ndarray, c_in: int, n: int) -> None:
    if x.ndim < 3 or x.shape[-3:] != (c_in, n, n):
        raise ShapeError(f"input shape {x.shape} incompatible with c_in={c_in}, n={n}")


def conv_spatial(w: ConvKernel, x: np.ndarray) -> np.ndarray:
    """Reference cross-correlation with circular wrap-around.

    ``y[c, i, j] = sum_{d,a,b} taps[c, d, a, b] * x[d, (i+a-s) % n, (j+b-s) % n]``
    with ``s = (k - 1) // 2``.  Leading axes of ``x`` are batch axes.
    """
    x = np.asarray(x)
    _check_input(x, w.c_in, w.n)
    s = w.shift
    y = np.zeros(x.shape[:-3] + (w.c_out, w.n, w.n), dtype=np.result_type(x, w.taps))
    for a in range(w.k):
        for b in range(w.k):
            shifted = np.roll(x, (s - a, s - b), axis=(-2, -1))
            y += np.einsum("cd,...dij->...cij", w.taps[:, :, a, b], shifted)
    return y


def _to_freq_major(xt: np.ndarray, c: int) -> tuple[np.ndarray, tuple]:
    """(..., c, rows, cols) -> (P, c, B) plus what is needed to undo it."""
    lead = xt.shape[:-3]
    rows, cols = xt.shape[-2:]
    flat = xt.reshape((-1, c, rows * cols))
    return np.ascontiguousarray(flat.transpose(2, 1, 0)), (lead, rows, cols)


def _from_freq_major(yt: np.ndarray, layout: tuple) -> np.ndarray:
    lead, rows, cols = layout
    c = yt.shape[1]
    return yt.transpose(2, 1, 0).reshape(lead + (c, rows, cols))


def apply_in_fourier(blocks: FourierBlocks, x: np.ndarray, fn) -> np.ndarray:
    """FFT ``x``, hand ``fn`` the (P, c_in, B) spectrum, inverse-FFT the (P, c_out, B) result.

    Returns the raw inverse transform: complex for a full-spectrum plan,
    real for a half-spectrum plan.
    """
    x = np.asarray(x)
    plan = blocks.plan
    xt = fft2_batch(x, plan)
    xf, layout = _to_freq_major(xt, x.shape[-3])
    yf = fn(xf)
    return ifft2_batch(_from_freq_major(yf, layout), plan)


def _real_part(y: np.ndarray, return_imag: bool):
    if np.iscomplexobj(y):
        imag = float(np.max(np.abs(y.imag))) if y.size else 0.0
        out = np.ascontiguousarray(y.real)
    else:
        imag, out = 0.0, y
    return (out, imag) if return_imag else out


def conv_fft(blocks: FourierBlocks, x: np.ndarray, return_imag: bool = False):
    """Convolution as one matvec per frequency.

    With ``return_imag`` the max-abs imaginary residue of the inverse FFT
    (discarded from the output) is returned alongside.
    """
    x = np.asarray(x)
    _check_input(x, blocks.c_in, blocks.n)
    y = apply_in_fourier(blocks, x, lambda xf: blocks.data @ xf)
    return _real_part(y, return_imag)


def conv_transpose(w: ConvKernel) -> ConvKernel:
    """Kernel of the adjoint convolution: swap channels, flip both spatial axes."""
    taps = w.taps.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    return ConvKernel(np.ascontiguousarray(taps), w.n)


def block_condition(data: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(data, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s[:, -1] > 0, s[:, 0] / s[:, -1], np.inf)


def conv_inverse_apply(blocks: FourierBlocks, y: np.ndarray) -> np.ndarray:
    """Invert a square convolution by one linear solve per frequency."""
    if blocks.c_in != blocks.c_out:
        raise ShapeError("inverse needs c_in == c_out")
    y = np.asarray(y)
    _check_input(y, blocks.c_out, blocks.n)
    cond = block_condition(blocks.data)
    bad = np.flatnonzero(~(cond <= 1.0 / eps(blocks.precision)))
    if bad.size:
        raise SingularConvolutionError(int(bad[0]), float(cond[bad[0]]))
    x = apply_in_fourier(blocks, y, lambda yf: np.linalg.solve(blocks.data, yf))
    return _real_part(x, False)


def _shift_permutation(n: int, di: int, dj: int) -> np.ndarray:
    """P with ``(P @ vec(x))[i*n+j] = x[(i+di) % n, (j+dj) % n]``."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cols = ((i + di) % n) * n + (j + dj) % n
    p = np.zeros((n * n, n * n))
    p[np.arange(n * n), cols.ravel()] = 1.0
    return p


def dense_conv_matrix(w: ConvKernel) -> DenseConvMatrix:
    """Explicit doubly block-circulant matrix of the convolution."""
    n = w.n
    if n * n * max(w.c_in, w.c_out) > ORACLE_LIMIT:
        raise OracleSizeError(
            f"oracle size limit: n^2 * max(c_in, c_out) = {n * n * max(w.c_in, w.c_out)} > {ORACLE_LIMIT}"
        )
    s = w.shift
    c = np.zeros((w.c_out * n * n, w.c_in * n * n), dtype=w.taps.dtype)
    for a in range(w.k):
        for b in range(w.k):
            c += np.kron(w.taps[:, :, a, b], _shift_permutation(n, a - s, b - s)).astype(c.dtype)
    return DenseConvMatrix(c, n, w.c_out, w.c_in)
