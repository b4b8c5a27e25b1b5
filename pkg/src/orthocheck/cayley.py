"""Cayley transforms and the orthogonal convolution layer built on them.

For a skew-Hermitian ``A`` the Cayley transform ``(I - A)(I + A)^-1`` is
unitary, and ``I + A`` is always invertible because the eigenvalues of
``A`` are purely imaginary.  Applying this per frequency to the blocks of
``W - W^T`` yields an orthogonal convolution whose output is real.  The
unnormalized FFT convention does not matter here: ``I + A`` is formed from
the blocks themselves, and those are the exact eigen-blocks of the dense
convolution matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import DenseConvMatrix, _check_input, _real_part, apply_in_fourier, dense_conv_matrix
from .errors import DegenerateWeightError, ShapeError
from .fourier import FourierBlocks, FourierPlan, kernel_to_blocks
from .kernel import ConvKernel
from .tensor_io import frobenius_norm, precision_of


def _h(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def _eye_like(m: np.ndarray, size: int) -> np.ndarray:
    return np.broadcast_to(np.eye(size, dtype=m.dtype), m.shape[:-2] + (size, size))


def cayley_square(b: np.ndarray) -> np.ndarray:
    """Cayley transform of the skew-Hermitian part ``A = B - B*`` of square ``B``.

    Accepts a stack of matrices; the last two axes are the matrix axes.
    """
    b = np.asarray(b)
    if b.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cayley_square needs square matrices, got {b.shape[-2:]}")
    a = b - _h(b)
    eye = _eye_like(a, a.shape[-1])
    return np.linalg.solve(eye + a, eye - a)


def cayley_semi(w: np.ndarray) -> np.ndarray:
    """Semi-orthogonal Cayley transform of a (stack of) rectangular matrices.

    For ``c_out >= c_in`` with ``W = [U; V]`` (``U`` square) this is
    ``[(I - U + U* - V*V) M^-1; -2 V M^-1]`` with ``M = I + U - U* + V*V``,
    the first ``c_in`` columns of the Cayley transform of ``[W 0]``.  Wide
    inputs go through the transpose.
    """
    w = np.asarray(w)
    c_out, c_in = w.shape[-2:]
    if c_in > c_out:
        return np.swapaxes(cayley_semi(np.swapaxes(w, -1, -2)), -1, -2)
    u, v = w[..., :c_in, :], w[..., c_in:, :]
    a = u - _h(u)
    if c_out > c_in:
        a = a + _h(v) @ v
    eye = _eye_like(a, c_in)
    # (I + A)^-1 and (I - A) commute, so one solve gives (I - A)(I + A)^-1.
    top = np.linalg.solve(eye + a, eye - a)
    if c_out == c_in:
        return top
    inv = np.linalg.solve(eye + a, eye)
    return np.concatenate([top, -2.0 * (v @ inv)], axis=-2)


@dataclass(frozen=True)
class CayleyConvParams:
    """Free parameters of a Cayley convolution.

    The effective weights are ``gain * raw / ||raw||_F``.  ``signs`` is an
    optional fixed +-1 vector scaling the output channels.
    """

    raw: np.ndarray
    gain: float = 1.0
    n: int = 8
    signs: np.ndarray | None = field(default=None)

    def __post_init__(self):
        raw = np.asarray(self.raw)
        if raw.dtype not in (np.float32, np.float64):
            raw = raw.astype(np.float64)
        if raw.ndim != 4:
            raise ShapeError(f"raw weights must be c_out x c_in x k x k, got {raw.shape}")
        object.__setattr__(self, "raw", raw)
        if self.signs is not None:
            signs = np.asarray(self.signs, dtype=raw.dtype)
            if signs.shape != (raw.shape[0],) or not np.all(np.abs(signs) == 1):
                raise ShapeError("signs must be a +-1 vector of length c_out")
            object.__setattr__(self, "signs", signs)

    @property
    def c_out(self) -> int:
        return self.raw.shape[0]

    @property
    def c_in(self) -> int:
        return self.raw.shape[1]

    @property
    def k(self) -> int:
        return self.raw.shape[2]

    @property
    def precision(self) -> str:
        return precision_of(self.raw)

    def weights(self) -> np.ndarray:
        norm = frobenius_norm(self.raw)
        if norm == 0.0:
            raise DegenerateWeightError("degenerate weight norm")
        return (self.gain / norm * self.raw).astype(self.raw.dtype)

    def kernel(self) -> ConvKernel:
        return ConvKernel(self.weights(), self.n)


def cayley_blocks(params: CayleyConvParams, half: bool = False) -> FourierBlocks:
    """Explicit per-frequency (semi-)unitary matrices ``Q_p`` of the layer."""
    plan = FourierPlan(params.n, params.precision, half)
    blocks = kernel_to_blocks(params.kernel(), plan)
    q = cayley_semi(blocks.data)
    if params.signs is not None:
        q = params.signs[:, None] * q
    return FourierBlocks(q, params.n, half)


def cayley_conv(
    params: CayleyConvParams,
    x: np.ndarray,
    half: bool = False,
    explicit: bool = False,
    return_imag: bool = False,
):
    """Apply the orthogonal convolution parameterized by ``params`` to ``x``.

    Square layers follow the solve-then-subtract order: ``Y = (I + A)^-1 X``
    and ``Z = Y - A Y`` per frequency.  Rectangular layers (or
    ``explicit=True``) multiply by the explicit ``Q_p`` instead.
    """
    x = np.asarray(x)
    _check_input(x, params.c_in, params.n)
    if explicit or params.c_in != params.c_out:
        q = cayley_blocks(params, half)
        y = apply_in_fourier(q, x, lambda xf: q.data @ xf)
        return _real_part(y, return_imag)

    plan = FourierPlan(params.n, params.precision, half)
    d = kernel_to_blocks(params.kernel(), plan).data
    a = d - _h(d)
    eye = _eye_like(a, a.shape[-1])
    signs = params.signs

    def step(xf):
        yf = np.linalg.solve(eye + a, xf)
        zf = yf - a @ yf
        if signs is not None:
            zf = signs[:, None] * zf
        return zf

    y = apply_in_fourier(FourierBlocks(d, params.n, half), x, step)
    return _real_part(y, return_imag)


def _dense_cayley(c: np.ndarray) -> np.ndarray:
    a = c - c.T
    eye = np.eye(a.shape[0], dtype=a.dtype)
    return np.linalg.solve(eye + a, eye - a)


def dense_cayley_matrix(params: CayleyConvParams) -> DenseConvMatrix:
    """Real dense matrix of the Cayley convolution, built without any FFT.

    Rectangular layers pad the dense convolution matrix with zero column
    blocks, transform, and keep the leading columns; wide layers do this for
    the transpose and transpose back.
    """
    dense = dense_conv_matrix(params.kernel())
    c = dense.matrix
    n2 = params.n * params.n
    if params.c_out >= params.c_in:
        padded = np.zeros((c.shape[0], c.shape[0]), dtype=c.dtype)
        padded[:, : c.shape[1]] = c
        q = _dense_cayley(padded)[:, : c.shape[1]]
    else:
        ct = c.T
        padded = np.zeros((ct.shape[0], ct.shape[0]), dtype=c.dtype)
        padded[:, : ct.shape[1]] = ct
        q = _dense_cayley(padded)[:, : ct.shape[1]].T
    if params.signs is not None:
        q = np.repeat(params.signs, n2)[:, None] * q
    return DenseConvMatrix(np.ascontiguousarray(q), params.n, params.c_out, params.c_in)


def dense_cayley_oracle(params: CayleyConvParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    _check_input(x, params.c_in, params.n)
    return dense_cayley_matrix(params).apply(x)
