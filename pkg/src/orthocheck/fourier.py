"""Batched 2D DFTs and the per-frequency block representation of a convolution.

Conventions
-----------
* The forward transform is unnormalized and the inverse carries 1/n^2, as
  in ``numpy.fft``.  A circular convolution is then exactly diagonalized:
  its dense matrix equals ``F* diag(D_p) F`` with the unitary 2D DFT ``F``
  and the blocks ``D_p`` stored here, so no extra scale factors appear in
  either the matvec or the Cayley transform.
* Layers compute cross-correlation, so the blocks are the complex
  conjugate of the DFT of the centered kernel.
* The half spectrum keeps columns ``0 .. n//2`` of every row; the missing
  blocks follow from ``D(-i, -j) = conj(D(i, j))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ShapeError
from .kernel import ConvKernel, check_kernel_size
from .tensor_io import complex_dtype, precision_of, real_dtype

_AXES = (-2, -1)


@dataclass(frozen=True)
class FourierPlan:
    n: int
    precision: str = "f64"
    half: bool = False

    @property
    def grid(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1) if self.half else (self.n, self.n)

    @property
    def n_freq(self) -> int:
        rows, cols = self.grid
        return rows * cols


@dataclass(frozen=True)
class FourierBlocks:
    """Per-frequency ``c_out x c_in`` matrices, stored as ``data[p, o, i]``.

    Frequencies ``p`` are ordered row-major over the (i, j) grid of the plan.
    """

    data: np.ndarray
    n: int
    half: bool = False

    def __post_init__(self):
        expected = FourierPlan(self.n, half=self.half).n_freq
        if self.data.ndim != 3 or self.data.shape[0] != expected:
            raise ShapeError(
                f"expected {expected} blocks of rank 2, got array of shape {self.data.shape}"
            )

    @property
    def c_out(self) -> int:
        return self.data.shape[1]

    @property
    def c_in(self) -> int:
        return self.data.shape[2]

    @property
    def precision(self) -> str:
        return precision_of(self.data)

    @property
    def plan(self) -> FourierPlan:
        return FourierPlan(self.n, self.precision, self.half)

    def grid_view(self) -> np.ndarray:
        """The blocks as ``(rows, cols, c_out, c_in)``."""
        rows, cols = self.plan.grid
        return self.data.reshape(rows, cols, self.c_out, self.c_in)

    def full(self) -> "FourierBlocks":
        """Expand a half spectrum to all n^2 frequencies via conjugate symmetry."""
        if not self.half:
            return self
        n = self.n
        h = self.grid_view()
        out = np.empty((n, n, self.c_out, self.c_in), dtype=self.data.dtype)
        out[:, : n // 2 + 1] = h
        j = np.arange(n // 2 + 1, n)
        i = np.arange(n)
        out[:, j] = np.conj(h[(-i[:, None]) % n, (n - j)[None, :]])
        return FourierBlocks(out.reshape(n * n, self.c_out, self.c_in), n, half=False)

    def map(self, fn) -> "FourierBlocks":
        return FourierBlocks(fn(self.data), self.n, self.half)


def _check_spatial(t: np.ndarray, n: int, cols: int | None = None) -> None:
    cols = n if cols is None else cols
    if t.ndim < 2 or t.shape[-2:] != (n, cols):
        raise ShapeError(f"last two dims {t.shape[-2:]} do not match plan ({n}, {cols})")


def fft2_batch(t: np.ndarray, plan: FourierPlan) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes; leading axes are batch axes."""
    t = np.asarray(t)
    _check_spatial(t, plan.n)
    if plan.half:
        if np.iscomplexobj(t):
            raise ShapeError("half-spectrum transform needs real input")
        return scipy.fft.rfft2(t, axes=_AXES)
    return scipy.fft.fft2(t, axes=_AXES)


def ifft2_batch(t: np.ndarray, plan: FourierPlan) -> np.ndarray:
    """Inverse of :func:`fft2_batch`.

    In half-spectrum mode the result is real (the Hermitian-symmetric
    completion is implied); otherwise it is complex.
    """
    t = np.asarray(t)
    rows, cols = plan.grid
    _check_spatial(t, rows, cols)
    if plan.half:
        return scipy.fft.irfft2(t, s=(plan.n, plan.n), axes=_AXES)
    return scipy.fft.ifft2(t, axes=_AXES)


def shift_phase(n: int, shift: int, cols: int | None = None) -> np.ndarray:
    """``exp(2 pi i * shift * (i + j) / n)`` on the frequency grid."""
    cols = n if cols is None else cols
    idx = np.add.outer(np.arange(n), np.arange(cols))
    return np.exp(2j * np.pi * shift * idx / n)


def kernel_to_blocks(kernel: ConvKernel, plan: FourierPlan | None = None) -> FourierBlocks:
    """Block-diagonalize a convolution.

    The k x k taps are zero-padded to n x n, the FFT is multiplied by the
    phase that moves the center tap to offset (0, 0), conjugated for
    cross-correlation, and regrouped so ``data[p] = D_p``.
    """
    if plan is None:
        plan = FourierPlan(kernel.n, kernel.precision)
    if plan.n != kernel.n:
        raise ShapeError(f"plan size {plan.n} differs from kernel target size {kernel.n}")
    rows, cols = plan.grid
    k = kernel.k
    padded = np.zeros((kernel.c_out, kernel.c_in, plan.n, plan.n), dtype=real_dtype(plan.precision))
    padded[:, :, :k, :k] = kernel.taps
    spec = fft2_batch(padded, plan)
    phase = shift_phase(plan.n, kernel.shift, cols).astype(complex_dtype(plan.precision))
    spec = np.conj(spec * phase)
    data = spec.reshape(kernel.c_out, kernel.c_in, rows * cols).transpose(2, 0, 1)
    return FourierBlocks(np.ascontiguousarray(data), plan.n, plan.half)


def blocks_to_response(blocks: FourierBlocks) -> np.ndarray:
    """Full n x n spatial response ``taps[o, i, u, v]`` at circular offsets (u, v)."""
    rows, cols = blocks.plan.grid
    spec = np.conj(blocks.data.transpose(1, 2, 0).reshape(blocks.c_out, blocks.c_in, rows, cols))
    resp = ifft2_batch(spec, blocks.plan)
    return np.ascontiguousarray(resp.real) if np.iscomplexobj(resp) else resp


def blocks_to_kernel(blocks: FourierBlocks, k: int) -> ConvKernel:
    """Project blocks onto k x k kernels: keep only the centered k x k taps."""
    check_kernel_size(k, blocks.n)
    s = (k - 1) // 2
    resp = blocks_to_response(blocks)
    taps = np.roll(resp, (s, s), axis=_AXES)[:, :, :k, :k]
    return ConvKernel(np.ascontiguousarray(taps), blocks.n)
