"""Exception taxonomy shared across the package.

Input problems (bad files, bad configuration, bad arguments) raise
:class:`InputError`; the command line maps those to exit code 1.
Non-convergence of a fit is not an exception, it is flagged on the
result object and mapped to exit code 2 by the CLI.
"""


class JointvarError(Exception):
    """Base class for all errors raised by this package."""


class InputError(JointvarError):
    """Invalid user input: data, configuration, or arguments."""


class ConfigurationError(InputError):
    """A setting outside the supported range (e.g. QMC dimension too large)."""


class DomainError(JointvarError):
    """A quantity was requested outside its mathematical domain."""


class InternalError(JointvarError):
    """Inconsistent internal state; indicates a bug, not a user mistake."""


class OptimizerFailure(JointvarError):
    """No acceptable step found after exhausting damping escalations."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NoPosteriorMass(JointvarError):
    """Every integration draw underflowed; try more draws."""
