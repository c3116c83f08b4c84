"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit code 2), numerical
failures from :class:`NumericalError` (exit code 3).
"""


class VminError(Exception):
    exit_code = 1


class InputError(VminError, ValueError):
    exit_code = 2


class NumericalError(VminError, ArithmeticError):
    exit_code = 3


class ShapeMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class NonFinite(InputError):
    pass


class ZeroVariance(InputError):
    pass


class ZeroVarianceColumn(ZeroVariance):
    pass


class EmptySubset(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class SchemaMismatch(InputError):
    pass


class EmptyFile(InputError):
    pass


class DuplicateWafer(InputError):
    pass


class MissingProbe(InputError):
    pass


class MissingCoordinates(InputError):
    pass


class TooFewDies(InputError):
    pass


class GroupTooSmall(InputError):
    pass


class TooFewSamples(InputError):
    pass


class TooFewWafers(InputError):
    pass


class UnknownGroup(InputError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownWafer(UnknownGroup):
    pass


class NoInterBiasSource(InputError):
    pass


class InvalidConfig(InputError):
    pass


class RankDeficient(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class ConvergenceWarning(UserWarning):
    """Raised as a warning when RBA hits ``max_iter`` before converging."""
