"""Joint modeling of a longitudinal marker with subject-specific residual
variability and competing time-to-event risks."""

__version__ = "0.1.0"
