"""Exception types raised across the package."""


class FracSpecError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(FracSpecError, ValueError):
    pass


class ZeroPivot(FracSpecError, ArithmeticError):
    """Raised when an LDL^T pivot vanishes (the shift sits on an eigenvalue)."""

    def __init__(self, row, shift=None):
        self.row = row
        self.shift = shift
        super().__init__(f"zero pivot at row {row} (shift={shift!r})")


class SingularFactor(FracSpecError, ArithmeticError):
    pass


class MassNotSPD(FracSpecError, ArithmeticError):
    pass


class EmptySpectrum(FracSpecError, ValueError):
    pass


class SliceIncomplete(FracSpecError, RuntimeError):
    """A slice solve found fewer eigenpairs than its inertia count promised."""

    def __init__(self, found, expected, interval=None):
        self.found = found
        self.expected = expected
        self.interval = interval
        super().__init__(
            f"slice {interval} found {found} of {expected} expected eigenpairs")


class RankDeficientCluster(FracSpecError, ArithmeticError):
    pass


class NonpositiveEigenvalue(FracSpecError, ValueError):
    pass


class NeumannNonzeroMean(FracSpecError, ValueError):
    pass


class BasisMismatch(FracSpecError, ValueError):
    pass


class MeshError(FracSpecError, ValueError):
    pass
