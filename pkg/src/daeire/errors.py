"""Exception hierarchy shared by every stage of the pipeline."""


class DaeError(Exception):
    """Base class; ``stage`` names the pipeline step that failed."""

    stage = "dae"


class ExpressionError(DaeError):
    stage = "expression"


class UnassignedVariableError(ExpressionError):
    pass


class EvaluationDivisionError(ExpressionError):
    pass


class NonPolynomialError(ExpressionError):
    pass


class ModelSyntaxError(DaeError):
    stage = "parse"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class NonSquareError(DaeError):
    stage = "validate"

    def __init__(self, n_equations, n_variables):
        self.n_equations = n_equations
        self.n_variables = n_variables
        if n_equations == 0 and n_variables == 0:
            msg = "empty system: no equations and no variables"
        else:
            msg = (f"system is not square: {n_equations} equations "
                   f"for {n_variables} variables")
        super().__init__(msg)


class NoPerfectMatchingError(DaeError):
    stage = "structural analysis"

    def __init__(self, message="the DAE does not admit a perfect matching"):
        super().__init__(message)


class SingularMatrixError(DaeError):
    stage = "linear algebra"


class VerificationError(DaeError):
    stage = "sorting"


class ConvergenceError(DaeError):
    stage = "newton"


class EmptyWitnessError(DaeError):
    stage = "witness"


class NoSolutionError(DaeError):
    stage = "index reduction"


class MaxPassesError(DaeError):
    stage = "index reduction"


class IntegrationError(DaeError):
    stage = "integration"

    def __init__(self, message, t=None):
        self.t = t
        super().__init__(message if t is None else f"{message} at t={t:.15g}")
