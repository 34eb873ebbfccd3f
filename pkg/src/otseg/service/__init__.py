"""HTTP service exposing the scoring, evaluation, and generator pipelines."""

from .app import create_app

__all__ = ["create_app"]
