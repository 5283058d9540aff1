"""Exception hierarchy; each failure class maps onto a CLI exit code"""


class SpinShellError(Exception):
    """Base class for all spinshell failures"""
    exit_code = 1


class ConfigError(SpinShellError, ValueError):
    """Scenario file or runtime setting is invalid"""
    exit_code = 2


class DomainError(SpinShellError, ValueError):
    """Argument outside the domain of an operation"""
    exit_code = 2


class LatticeGenerationError(DomainError):
    """Spin placement could not satisfy the lattice constraints"""

    def __init__(self, constraint: str, message: str):
        super().__init__(message)
        self.constraint = constraint


class ResampleRequiredError(DomainError):
    """Series must be resampled onto a uniform grid first"""


class NoCrossingError(SpinShellError):
    """Effective potential has no sign change in the scanned interval"""
    exit_code = 3


class EngineError(SpinShellError, RuntimeError):
    """Numerical engine failed"""
    exit_code = 3

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ComparisonError(SpinShellError):
    """Two bundles disagree beyond tolerance or have mismatched schemas"""
    exit_code = 4
