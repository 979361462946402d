"""HTTP face of the package: FastAPI app, request/response schemas, jobs."""

from .app import create_app

__all__ = ["create_app"]
