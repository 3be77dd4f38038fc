"""Deliberate rule mutations for checking that the test suite has teeth.

Each mutation weakens one typing or reduction rule.  They are global
switches read by the checker and the machine; enable them only through
:func:`enabled`.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

MUTATIONS: dict[str, str] = {
    "capture-keeps-permission": "E-Capture keeps p' in the permission set",
    "send-keeps-permission": "E-Send keeps p' in the permission set",
    "open-without-permission": "E-Open no longer requires p in P",
    "tnew-skips-ocap": "T-New no longer requires ocap(C) under the ocap effect",
    "keep-stack-after-box": "E-Box keeps the caller's frame stack",
}

_active: set[str] = set()


def active(name: str) -> bool:
    return name in _active


@contextmanager
def enabled(*names: str) -> Iterator[None]:
    unknown = set(names) - MUTATIONS.keys()
    if unknown:
        raise KeyError(f"unknown mutation(s): {sorted(unknown)}")
    saved = set(_active)
    _active.update(names)
    try:
        yield
    finally:
        _active.clear()
        _active.update(saved)
