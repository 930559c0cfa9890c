"""Exception types shared across the package."""


class VdlabError(Exception):
    """Base class for library errors."""


class InvalidArgument(VdlabError, ValueError):
    pass


class DivergenceError(VdlabError, ArithmeticError):
    """An integral or iteration that cannot converge for the given arguments."""


class NumericalFailure(VdlabError, ArithmeticError):
    """Non-finite values, overflow or a violated stability bound during a run.

    ``t`` is the last time at which the state was still good.
    """

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (last good time t={t:.6g})")
        self.t = t


class BlowupError(NumericalFailure):
    """A Volterra solution exceeded the blowup threshold (linear instability)."""


class InsufficientData(VdlabError, ValueError):
    pass
