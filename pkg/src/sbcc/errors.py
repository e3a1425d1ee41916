"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the command line
front end can print one greppable line per failure.
"""


class SBCCError(Exception):
    code = "E_SBCC"


class InvalidInputError(SBCCError, ValueError):
    code = "E_INPUT"


class ParameterError(SBCCError, ValueError):
    code = "E_PARAM"


class DimensionError(SBCCError, ValueError):
    code = "E_DIM"


class DegenerateDenominatorError(SBCCError, ArithmeticError):
    """A frequency bin has a zero denominator (or a singular per-bin system)."""

    code = "E_DEGENERATE"

    def __init__(self, message, bin_index=None):
        if bin_index is not None:
            message = f"{message} at bin {tuple(int(i) for i in bin_index)}"
        super().__init__(message)
        self.bin_index = bin_index


class NoPeakError(SBCCError, ValueError):
    code = "E_NOPEAK"


class ContextUnavailableError(SBCCError, ValueError):
    code = "E_CONTEXT"


class UsageError(SBCCError, ValueError):
    """Bad command-line flags or configuration keys."""

    code = "E_USAGE"
