"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: usage problems exit 1, bad input
data exits 2 and numeric failures exit 3.
"""


class VarianceTTSError(Exception):
    exit_code = 2


class ShapeError(VarianceTTSError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(VarianceTTSError, ValueError):
    """A configuration value is outside its allowed range."""

    exit_code = 1


class DataError(VarianceTTSError, ValueError):
    """Input data (audio, alignment, manifest, cache) is malformed."""


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnvoicedError(DataError):
    """The utterance has no voiced frame, so no pitch statistics exist."""


class NumericError(VarianceTTSError, ArithmeticError):
    """NaN/Inf appeared, or an operation left its numeric domain."""

    exit_code = 3


class TapeError(VarianceTTSError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, double backward)."""

    exit_code = 3


class ChecksumError(DataError):
    pass


class VersionError(DataError):
    pass
