"""HTTP service exposing the estimation, simulation, and prediction API."""

from .app import create_app

__all__ = ["create_app"]
