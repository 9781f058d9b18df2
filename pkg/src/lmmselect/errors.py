"""Exception hierarchy shared by every module."""


class LmmSelectError(Exception):
    """Base class for all package errors."""


class DataValidationError(LmmSelectError, ValueError):
    """Input data violates a structural requirement."""


class MissingColumnError(DataValidationError):
    pass


class NonNumericFieldError(DataValidationError):
    pass


class SubjectGroupConflictError(DataValidationError):
    pass


class EmptyGroupError(DataValidationError):
    pass


class UnknownControlGroupError(DataValidationError):
    pass


class IdentifiabilityError(LmmSelectError, ValueError):
    """A fractional-prior Gram matrix is singular for some group."""

    def __init__(self, group, active=None, detail=""):
        self.group = group
        self.active = None if active is None else tuple(int(a) for a in active)
        msg = f"identifiability failure in group {group!r}"
        if self.active is not None:
            msg += f" for active columns {self.active}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NumericalError(LmmSelectError, ArithmeticError):
    """Factorization or parameter update failed numerically."""


class DomainError(LmmSelectError, ValueError):
    """A parameter lies outside the support of its distribution."""


class TraceParseError(LmmSelectError, ValueError):
    def __init__(self, path, line, detail):
        self.path = path
        self.line = line
        super().__init__(f"{path}, line {line}: {detail}")
