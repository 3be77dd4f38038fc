from __future__ import annotations

import re
from pathlib import Path

import pytest

from clc.parser import parse_program
from clc.syntax import Mode
from clc.typecheck import check_program

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
MODE_DIRS = {"clc1": Mode.CLC1, "clc2": Mode.CLC2, "clc3": Mode.CLC3}


def header(text: str, key: str) -> str | None:
    m = re.search(rf"^// {key}: (.*)$", text, re.M)
    return m.group(1).strip() if m else None


def mode_of(path: Path) -> Mode:
    """Positive corpus files take their mode from their directory, others from a header."""
    if path.parent.name in MODE_DIRS:
        return MODE_DIRS[path.parent.name]
    return Mode[header(path.read_text(), "mode").upper()]


def positive_files() -> list[Path]:
    return sorted(p for d in MODE_DIRS for p in (CORPUS / d).glob("*.clc"))


def negative_files() -> list[Path]:
    return sorted((CORPUS / "negative").glob("*.clc"))


def dynperm_files() -> list[Path]:
    return sorted((CORPUS / "dynperm").glob("*.clc"))


def all_corpus_files() -> list[Path]:
    return sorted(CORPUS.rglob("*.clc"))


def load(path: Path):
    return parse_program(path.read_text(), mode_of(path), str(path.relative_to(ROOT)))


def checked(src: str, mode: Mode = Mode.CLC2):
    p = parse_program(src, mode)
    return p, check_program(p)


@pytest.fixture
def in_root(monkeypatch):
    monkeypatch.chdir(ROOT)
    return ROOT


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
