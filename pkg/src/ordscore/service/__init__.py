"""HTTP service exposing the pipeline verbs and checkpoint scoring."""
from .api import app, create_app

__all__ = ["app", "create_app"]
