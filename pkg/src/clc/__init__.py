"""Executable box/permission object-capability calculi (levels 1-3)."""

from __future__ import annotations

from .syntax import Mode

__version__ = "0.1.0"
__all__ = ["Mode", "__version__"]
