"""Exception hierarchy shared by the fitting, serialization and pooling code."""


class MetaGamError(Exception):
    """Base class for all errors raised by metagam."""


class EmptyInput(MetaGamError, ValueError):
    pass


class TooFewDistinctValues(MetaGamError, ValueError):
    pass


class NonFiniteInput(MetaGamError, ValueError):
    pass


class NonFiniteData(NonFiniteInput):
    pass


class LengthMismatch(MetaGamError, ValueError):
    pass


class FormulaError(MetaGamError, ValueError):
    pass


class MissingColumn(MetaGamError, KeyError):
    def __init__(self, column):
        super().__init__(column)
        self.column = column

    def __str__(self):
        return f"column {self.column!r} not found in data"


class RankDeficientDesign(MetaGamError):
    """The unpenalized design does not identify every coefficient.

    ``columns`` lists the coefficient labels that could not be determined.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class SingleGroup(MetaGamError, ValueError):
    pass


class UnknownTerm(MetaGamError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown term"


class SchemaViolation(MetaGamError, ValueError):
    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class VersionMismatch(MetaGamError, ValueError):
    pass


class PrivacyViolation(MetaGamError):
    pass


class GridMismatch(MetaGamError, ValueError):
    pass


class TooFewCohorts(MetaGamError, ValueError):
    pass


class BadAlpha(MetaGamError, ValueError):
    pass


class OutOfRangeP(MetaGamError, ValueError):
    pass


class ReplicationError(MetaGamError):
    def __init__(self, replication, cause):
        super().__init__(f"replication {replication} failed: {cause}")
        self.replication = replication
        self.cause = cause
