"""Exception hierarchy shared by the toolkit and mapped to CLI exit codes."""


class BoxGasError(Exception):
    exit_code = 1


class PreconditionError(BoxGasError, ValueError):
    """An input violates an operation's precondition."""

    exit_code = 2


class EnumerationLimitError(PreconditionError):
    """Exhaustive enumeration refused because the state space is too large."""

    def __init__(self, estimate, ceiling):
        self.estimate = estimate
        self.ceiling = ceiling
        super().__init__(
            f"enumeration refused: estimated {estimate:.3g} partial nodes exceeds ceiling {ceiling:.3g}"
        )


class ConvergenceError(BoxGasError, RuntimeError):
    """An iterative solver did not converge."""

    exit_code = 3

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConsistencyError(BoxGasError, ValueError):
    """A free-energy curve cannot be the free energy of a model."""

    exit_code = 4

    def __init__(self, message, inequality=None):
        super().__init__(message)
        self.inequality = inequality
