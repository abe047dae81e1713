"""Exception hierarchy shared by every stage of the pipeline."""


class AgeVelocityError(Exception):
    """Base class; the CLI turns any of these into a nonzero exit."""


class SchemaError(AgeVelocityError):
    pass


class ParseError(AgeVelocityError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DuplicationError(AgeVelocityError):
    pass


class EmptyCohortError(AgeVelocityError):
    pass


class ChronologyError(AgeVelocityError):
    pass


class ConfigError(AgeVelocityError):
    pass


class UnimputableColumnError(AgeVelocityError):
    pass


class AlignmentError(AgeVelocityError):
    pass


class FitError(AgeVelocityError):
    pass


class InputValidationError(AgeVelocityError):
    """NaN or non-finite values handed to a model."""


class DegenerateError(AgeVelocityError):
    pass


class ModelIntegrityError(AgeVelocityError):
    pass


class InsufficientGroupError(AgeVelocityError):
    pass


class UndefinedStatisticError(AgeVelocityError):
    pass
