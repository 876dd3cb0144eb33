"""Named error types.

Every error carries an ``exit_code`` used by the command-line front end:
1 for a failed check, 2 for invalid input, 3 for a numerical failure.
"""


class GeomFilterError(Exception):
    exit_code = 3


class ValidationError(GeomFilterError):
    """Invalid user input (bad scenario keys, wrong shapes, bad parameters)."""

    exit_code = 2


class CheckFailed(GeomFilterError):
    exit_code = 1


class NumericalError(GeomFilterError):
    exit_code = 3


class NumericalDomainError(NumericalError):
    """A field returned non-finite values near the evaluation point."""


class VNotInE(ValidationError):
    """Vector to be lifted does not lie in the image of the base symbol."""


class FactorizationMismatch(ValidationError):
    """Lifted fields are not related to the base fields by the projection."""


class NotCohesive(CheckFailed):
    pass


class NotIntertwined(CheckFailed):
    pass


class NotAboveStart(ValidationError):
    """Starting point of a lift does not project to the start of the path."""


class PathLeavesE(ValidationError):
    pass


class DriftDefectNotInE(CheckFailed):
    pass


class DegenerateSplit(NumericalError):
    """Horizontal and vertical subspaces are (numerically) not transversal."""


class AlphaNotPSD(ValidationError):
    pass


class BadSymmetry(ValidationError):
    pass


class NotScalar(CheckFailed):
    pass


class NotPSD(ValidationError):
    pass


class Explosion(NumericalError):
    pass


class BsharpMismatch(ValidationError):
    pass


class DegenerateWeights(NumericalError):
    pass


class NoBridgeSampler(ValidationError):
    pass


class NewtonDiverged(NumericalError):
    pass


class UnknownSystem(ValidationError):
    pass


class RankDrop(NumericalError):
    pass
