"""HTTP front end: the Bartender API and transfer URLs over FastAPI."""

from .app import IDENTITY_HEADER, build_deployment, create_app

__all__ = ["IDENTITY_HEADER", "build_deployment", "create_app"]
