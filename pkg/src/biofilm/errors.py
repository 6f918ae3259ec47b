"""Exception hierarchy shared by all modules."""


class BiofilmError(Exception):
    """Base class for every error raised by this package."""


class DecompositionError(BiofilmError):
    pass


class ContractError(BiofilmError):
    """A caller broke an operation's precondition (ghost widths, policies, layouts)."""


class CoefficientError(BiofilmError):
    pass


class DomainError(BiofilmError):
    """A field left its physically admissible range."""


class AssemblyError(BiofilmError):
    pass


class PreconditionerError(BiofilmError):
    pass


class NotConverged(BiofilmError):
    """Raised when an iterative solve exhausts its iteration budget."""

    def __init__(self, report, x=None, system=""):
        self.report = report
        self.x = x
        self.system = system
        label = f"{system} solve" if system else "solve"
        super().__init__(
            f"{label} did not converge: {report.iterations} iterations, "
            f"residual {report.residual:.3e}"
        )


class StepError(BiofilmError):
    """A time step could not be completed; carries the failing solve report."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class ConfigError(BiofilmError):
    pass
