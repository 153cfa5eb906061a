"""Custom exceptions for the droplet control toolkit."""


class DropletControlException(Exception):
    """Base exception for all droplet control errors."""

    def __init__(self, message: str, detail: str = None):
        self.message = message
        self.detail = detail
        super().__init__(self.message)


class ConfigurationError(DropletControlException):
    """Raised when the run configuration or process settings are invalid."""

    pass


class ValidationError(DropletControlException):
    """Raised when arguments to a library operation are invalid."""

    pass


class KernelError(DropletControlException):
    """Raised when the dipolar kernel cannot be built or does not match the grid."""

    pass


class NumericFaultError(DropletControlException):
    """Raised when a NaN or Inf appears during time stepping."""

    def __init__(self, message: str, detail: str = None, substep: str = None):
        self.substep = substep
        super().__init__(message, detail)


class ConvergenceError(DropletControlException):
    """Raised when imaginary-time propagation does not converge."""

    def __init__(self, message: str, detail: str = None, energy_history=None):
        self.energy_history = list(energy_history) if energy_history is not None else []
        super().__init__(message, detail)


class CollapseError(ConvergenceError):
    """Raised when imaginary-time propagation collapses to a point."""

    pass


class RefinementError(DropletControlException):
    """Raised when a B-spline curve cannot be refined onto the target knots."""

    pass


class StorageError(DropletControlException):
    """Raised when run files are missing or malformed."""

    pass


class BudgetExhaustedError(DropletControlException):
    """Raised when the cost evaluation budget is used up."""

    pass
