"""HTTP advisor service exposing the titration engine for interactive use."""

from basalkit.service.app import create_app

__all__ = ["create_app"]
