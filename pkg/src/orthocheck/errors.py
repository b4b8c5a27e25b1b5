"""Exception hierarchy shared by the library and the ``orthocheck`` CLI.

Each class carries the process exit code the CLI uses for it.
"""


class OrthoError(Exception):
    exit_code = 1


class TensorIOError(OrthoError):
    exit_code = 2


class BadMagicError(TensorIOError):
    pass


class UnsupportedDtypeError(TensorIOError):
    pass


class RankError(TensorIOError):
    pass


class TruncatedPayloadError(TensorIOError):
    pass


class TrailingDataError(TensorIOError):
    pass


class ShapeError(OrthoError, ValueError):
    exit_code = 3


class OracleSizeError(ShapeError):
    pass


class NumericError(OrthoError, ArithmeticError):
    exit_code = 4


class SingularConvolutionError(NumericError):
    def __init__(self, frequency, cond):
        self.frequency = frequency
        self.cond = cond
        super().__init__(
            f"non-invertible convolution at frequency index {frequency} "
            f"(condition estimate {cond:.3g})"
        )


class DegenerateWeightError(NumericError):
    pass


class DivergenceError(NumericError):
    pass
