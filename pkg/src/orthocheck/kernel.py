from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor_io import precision_of


@dataclass(frozen=True)
class ConvKernel:
    """Weights ``taps[c_out, c_in, k, k]`` of a circular convolution on n x n images.

    ``k`` must be odd and at most ``n``; the center tap sits at offset (0, 0).
    """

    taps: np.ndarray
    n: int

    def __post_init__(self):
        taps = np.asarray(self.taps)
        if taps.dtype not in (np.float32, np.float64):
            taps = taps.astype(np.float64)
        if taps.ndim != 4 or taps.shape[2] != taps.shape[3]:
            raise ShapeError(f"kernel taps must be c_out x c_in x k x k, got {taps.shape}")
        k = taps.shape[2]
        check_kernel_size(k, self.n)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "n", int(self.n))

    @property
    def c_out(self) -> int:
        return self.taps.shape[0]

    @property
    def c_in(self) -> int:
        return self.taps.shape[1]

    @property
    def k(self) -> int:
        return self.taps.shape[2]

    @property
    def shift(self) -> int:
        return (self.k - 1) // 2

    @property
    def precision(self) -> str:
        return precision_of(self.taps)


def check_kernel_size(k: int, n: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ShapeError("kernel size must be odd")
    if k > n:
        raise ShapeError(f"kernel size {k} exceeds spatial size {n}")
