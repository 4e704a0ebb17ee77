"""Exception hierarchy shared by the numerical modules and the CLI.

Each exception class carries in ``exit_code`` the process exit status
the CLI returns for it.
"""


class VecSojournError(Exception):
    exit_code = 1


class ValidationError(VecSojournError, ValueError):
    exit_code = 2


class ParseError(ValidationError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NotSPD(ValidationError):
    pass


class AllNonpositive(ValidationError):
    pass


class SavageViolated(ValidationError):
    pass


class ScaleMismatch(ValidationError):
    pass


class MismatchedConfig(ValidationError):
    pass


class WindowExceedsGrid(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class DimUnsupported(ValidationError):
    pass


class NumericalError(VecSojournError, ArithmeticError):
    exit_code = 3


class Degenerate(NumericalError):
    pass


class NotFactorizable(NumericalError):
    pass


class TruncationInsufficient(NumericalError):
    pass


class AssumptionB2ResidualTooLarge(NumericalError):
    pass


class RareEventInfeasible(VecSojournError):
    exit_code = 4
