"""Exception hierarchy.

Every error raised by the library derives from :class:`AuditError`. The four
intermediate classes map onto the CLI exit codes (config, data, numerical,
resource).
"""


class AuditError(Exception):
    exit_code = 1


class ConfigError(AuditError, ValueError):
    exit_code = 2


class DataError(AuditError, ValueError):
    exit_code = 3


class NumericalError(AuditError, ArithmeticError):
    exit_code = 4


class ResourceError(AuditError, MemoryError):
    exit_code = 5


# -- data / shape problems ---------------------------------------------------

class DimensionMismatch(DataError):
    pass


class NonSquareInput(DataError):
    pass


class InvalidPartition(DataError):
    pass


class EmptyBucket(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} at row {row}, column {column!r}")


class EmptyCategoryAfterFiltering(DataError):
    pass


class InvalidSpec(DataError):
    pass


class DegenerateUnfixable(DataError):
    pass


class IoFailure(DataError, OSError):
    """Reading an input or writing a report failed."""


# -- configuration problems --------------------------------------------------

class ZeroDirection(ConfigError):
    pass


class DirectionTouchesDummies(ConfigError):
    pass


class UnitMismatch(ConfigError):
    pass


class BudgetExceedsTotal(ConfigError):
    pass


# -- numerical failures ------------------------------------------------------

class RankDeficient(NumericalError):
    pass


class EigenFailure(NumericalError):
    pass


class SingularAfterRemoval(NumericalError):
    pass


# -- resource limits ---------------------------------------------------------

class CombinatorialBudgetExceeded(ResourceError):
    pass


class MemoryGuardExceeded(ResourceError):
    pass
