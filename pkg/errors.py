# -*- coding: utf-8 -*-
"""
Pipeline errors - one exception type per failure class, each with its CLI exit code
(1 numeric failure, 2 usage or parse problem)
"""

from typing import Optional


class PipelineError(Exception):
    """Base class for all pipeline failures"""

    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage


class ReturnsParseError(PipelineError, ValueError):
    """Malformed returns or matrix CSV (names the offending row/column)"""

    exit_code = 2

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None,
                 stage: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message, stage=stage)
        self.row = row
        self.column = column


class ContractViolation(PipelineError, ValueError):
    """A documented precondition was not met"""

    exit_code = 2


class UsageError(PipelineError, ValueError):
    """Invalid command-line usage or configuration value"""

    exit_code = 2


class IntegrationError(PipelineError, ArithmeticError):
    """Hopfield integration produced a non-finite state"""

    def __init__(self, message: str, step: int, stage: Optional[str] = None):
        super().__init__(f"{message} at step {step}", stage=stage)
        self.step = step


class InstabilityError(PipelineError, ArithmeticError):
    """Equilibrium-propagation relaxation diverged"""

    def __init__(self, message: str, phase: str, stage: Optional[str] = None):
        super().__init__(f"{message} during {phase} phase", stage=stage)
        self.phase = phase


class StepSizeError(PipelineError, ArithmeticError):
    """Gradient-descent training diverged; the learning rate is too large"""


class NumericError(PipelineError, ArithmeticError):
    """Linear-algebra failure (eigen-solver, rank deficiency)"""


class SpectralWarning(RuntimeWarning):
    """The linear steady-state map did not settle within the horizon"""
