"""Exception hierarchy shared by all modules."""


class QFilterError(Exception):
    """Base class for library errors."""


class DimensionError(QFilterError, ValueError):
    """Operands with incompatible shapes."""


class ConfigError(QFilterError, ValueError):
    """Invalid parameters or scenario configuration."""


class NumericError(QFilterError, ArithmeticError):
    """A numerical integration broke down.

    Parameters
    ----------
    message : str
    step : int, optional
        Index of the step at which the failure was detected.
    trajectory : int, optional
        Index of the trajectory, for ensemble runs.
    """

    def __init__(self, message, step=None, trajectory=None):
        self.base_message = message
        self.step = step
        self.trajectory = trajectory
        where = []
        if trajectory is not None:
            where.append(f"trajectory {trajectory}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
