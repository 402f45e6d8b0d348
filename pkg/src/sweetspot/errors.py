"""Exception hierarchy shared by every stage of the pipeline."""


class SweetSpotError(Exception):
    """Base class for input/contract problems the user can fix."""


class SchemaError(SweetSpotError):
    pass


class ParseError(SweetSpotError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(SweetSpotError):
    pass


class DegenerateFitError(SweetSpotError):
    pass


class InfeasibleMatchError(SweetSpotError):
    def __init__(self, message, deficit=0):
        super().__init__(message)
        self.deficit = deficit


class IntegrityError(SweetSpotError):
    pass


class ConstraintError(SweetSpotError):
    pass


class StageError(SweetSpotError):
    """Wraps an error raised inside one named stage of ``analyze``."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class EmptyExperimentError(SweetSpotError):
    pass
