"""HTTP annotation service: session management, batch dispatch, label intake,
agreement reporting, and round advancement over an append-only event log."""

from .app import create_app
from .config import ServiceConfig

__all__ = ["create_app", "ServiceConfig"]
