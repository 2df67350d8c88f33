class FairSSLError(Exception):
    """Base error. `iteration` is set when the error escapes an outer training iteration."""

    iteration = None

    def __str__(self):
        message = super().__str__()
        if self.iteration is not None:
            return f"outer iteration {self.iteration}: {message}"
        return message


class DataError(FairSSLError, ValueError):
    def __init__(self, message, row=None, column=None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyConditioningError(DataError):
    def __init__(self, group, condition):
        super().__init__(f"no rows in group z={group} satisfy {condition}")
        self.group = group
        self.condition = condition


class ConfigError(FairSSLError, ValueError):
    pass


class SolverConvergenceError(FairSSLError, RuntimeError):
    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (last residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class InfeasibleConstraintError(SolverConvergenceError):
    def __init__(self, threshold, slack):
        super().__init__(f"infeasible at c={threshold:g}: slack stayed above tolerance", residual=slack)
        self.threshold = threshold


class SingularSystemError(SolverConvergenceError):
    pass


class ReportWriteError(FairSSLError, OSError):
    pass
