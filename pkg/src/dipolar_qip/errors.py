"""Exception hierarchy shared by all modules."""


class DipolarQipError(Exception):
    """Base class for every error raised by the package."""


class NonHermitian(DipolarQipError, ValueError):
    pass


class NoConvergence(DipolarQipError, RuntimeError):
    pass


class DimensionTooLarge(DipolarQipError, ValueError):
    pass


class DimensionMismatch(DipolarQipError, ValueError):
    pass


class AmbiguousLabeling(DipolarQipError, ValueError):
    """Two eigenstates share the same dominant Zeeman component."""


class AssignmentUnstable(DipolarQipError, RuntimeError):
    """Line assignments kept changing at the end of a spectral fit."""


class OutOfRange(DipolarQipError, ValueError):
    pass


class ZeroRange(DipolarQipError, ValueError):
    pass


class NonIntegerImage(DipolarQipError, ValueError):
    """s*f(x) is not an integer, so the oracle is not a permutation."""


class Degenerate(DipolarQipError, ValueError):
    """The two largest readout marginals cannot be told apart."""


class ZeroState(DipolarQipError, ValueError):
    pass


class ForbiddenTransition(DipolarQipError, ValueError):
    pass


class SingularDesign(DipolarQipError, ValueError):
    pass


class ZeroDiagonal(DipolarQipError, ValueError):
    pass


class ValidationError(DipolarQipError, ValueError):
    """Malformed input file or argument."""
