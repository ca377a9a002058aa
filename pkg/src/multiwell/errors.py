"""Exception hierarchy.

Two families matter to callers: ``InputError`` (bad files, flags, parameters)
and ``NumericalError`` (the math refused). The CLI maps them to exit codes 1
and 2.
"""


class MultiwellError(Exception):
    pass


class InputError(MultiwellError, ValueError):
    pass


class NumericalError(MultiwellError, ArithmeticError):
    pass


class BadParams(InputError):
    pass


class EmptyFamily(InputError):
    pass


class NonSymmetric(NumericalError):
    pass


class SingularWell(NumericalError):
    pass


class NonPositiveWell(NumericalError):
    pass


class NotConnected(NumericalError):
    pass


class DegenerateSpectrum(NumericalError):
    pass


class NotGeneric(NumericalError):
    pass


class MarginNonPositive(NumericalError):
    pass


class NoConstantsFound(NumericalError):
    pass


class DegenerateSimplex(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class NoMajority(NumericalError):
    pass


class EmptyGoodSet(NumericalError):
    pass


class BoundaryTooClose(NumericalError):
    pass


class HypothesisViolated(NumericalError):
    pass


class NoGoodSimplex(NumericalError):
    pass
