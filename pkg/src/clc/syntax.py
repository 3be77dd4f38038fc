"""Abstract syntax shared by the three calculus levels.

Programs are in A-normal form: every object-level subexpression is a
variable, and compound results are named by ``let``.  One AST covers all
three levels; :class:`Mode` gates which productions are legal.

Every node carries an optional :class:`Span`.  Spans never take part in
equality, so ``parse(print(p)) == p`` compares structure only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Union


class Mode(enum.IntEnum):
    CLC1 = 1
    CLC2 = 2
    CLC3 = 3

    @classmethod
    def parse(cls, text: str) -> Mode:
        return cls[text.strip().upper()]

    def __str__(self) -> str:
        return self.name.lower()


ANYREF = "AnyRef"
GLOBAL = "global"
THIS = "this"
RESERVED_NAMES = frozenset({GLOBAL, THIS})
# Synthetic class holding the globals; '$' keeps it out of the surface syntax.
GLOBAL_CLASS = "$Global"


@dataclass(frozen=True)
class Span:
    file: str
    line: int
    col: int
    end_line: int
    end_col: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


def _span() -> Span | None:
    return field(default=None, compare=False, repr=False)  # type: ignore[return-value]


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class ClassT:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class BoxT:
    cls: str

    def __str__(self) -> str:
        return f"Box[{self.cls}]"


@dataclass(frozen=True)
class NullT:
    def __str__(self) -> str:
        return "Null"


@dataclass(frozen=True)
class BotT:
    def __str__(self) -> str:
        return "⊥"


@dataclass(frozen=True)
class GuardedT:
    """``Q ▷ Box[C]``; only ever produced by the typechecker."""

    q: int
    cls: str

    def __str__(self) -> str:
        return f"Q{self.q} ▷ Box[{self.cls}]"


@dataclass(frozen=True)
class ProcT:
    cls: str

    def __str__(self) -> str:
        return f"Proc[{self.cls}]"


TypeRepr = Union[ClassT, BoxT, NullT, BotT, GuardedT, ProcT]
SURFACE_TYPES = (ClassT, BoxT, NullT, ProcT)

NULL_T = NullT()
BOT_T = BotT()


def class_of(t: TypeRepr) -> str | None:
    """Class component of a type, if it has one."""
    if isinstance(t, ClassT):
        return t.name
    if isinstance(t, (BoxT, GuardedT, ProcT)):
        return t.cls
    return None


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Var:
    name: str
    span: Span | None = _span()


@dataclass(frozen=True)
class Let:
    name: str
    expr: Expr
    body: Term
    span: Span | None = _span()
    # Set on terms the machine builds by rewriting (E-Assign); points at
    # the source node so monitors can find its static typing.
    origin: Term | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BoxCont:
    """``box[C] { x => t }``"""

    cls: str
    var: str
    body: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Capture:
    """``capture(x.f, y) { z => t }``"""

    target: str
    field: str
    source: str
    var: str
    body: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Swap:
    """``swap(x.f, y) { z => t }``"""

    target: str
    field: str
    source: str
    var: str
    body: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Send:
    """``send(x, y) { z => t }``"""

    proc: str
    msg: str
    var: str
    body: Term
    span: Span | None = _span()


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Null:
    span: Span | None = _span()


@dataclass(frozen=True)
class Select:
    target: str
    field: str
    span: Span | None = _span()


@dataclass(frozen=True)
class Assign:
    target: str
    field: str
    source: str
    span: Span | None = _span()


@dataclass(frozen=True)
class New:
    cls: str
    span: Span | None = _span()


@dataclass(frozen=True)
class Invoke:
    target: str
    method: str
    arg: str
    span: Span | None = _span()


@dataclass(frozen=True)
class BoxExpr:
    """CLC1 ``box[C]``."""

    cls: str
    span: Span | None = _span()


@dataclass(frozen=True)
class Open:
    """``x.open { y => t }``"""

    target: str
    var: str
    body: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class Proc:
    """``proc { (x: Box[C]) => t }``"""

    var: str
    cls: str
    body: Term
    span: Span | None = _span()


ContTerm = Union[BoxCont, Capture, Swap, Send]
Term = Union[Var, Let, BoxCont, Capture, Swap, Send]
# Let appears here only so non-ANF input can be represented and reported.
Expr = Union[Null, Var, Select, Assign, New, Invoke, BoxExpr, Open, Proc, Let, BoxCont, Capture, Swap, Send]

CONT_TERMS = (BoxCont, Capture, Swap, Send)
TERM_NODES = (Var, Let) + CONT_TERMS


# ---------------------------------------------------------------- declarations


@dataclass(frozen=True)
class MethodDef:
    name: str
    param: str
    param_type: TypeRepr
    ret: TypeRepr
    body: Term
    span: Span | None = _span()


@dataclass(frozen=True)
class ClassDef:
    name: str
    superclass: str
    fields: tuple[tuple[str, TypeRepr], ...] = ()
    methods: tuple[MethodDef, ...] = ()
    span: Span | None = _span()

    def method(self, name: str) -> MethodDef | None:
        for m in self.methods:
            if m.name == name:
                return m
        return None


@dataclass(frozen=True)
class Program:
    classes: tuple[ClassDef, ...]
    globals: tuple[tuple[str, str], ...]
    main: Term
    mode: Mode = Mode.CLC3

    def class_def(self, name: str) -> ClassDef | None:
        for c in self.classes:
            if c.name == name:
                return c
        return None


# ---------------------------------------------------------------- traversal


def binders(t: Term | Expr) -> tuple[str, ...]:
    """Names a node introduces for its body/continuation."""
    if isinstance(t, Let):
        return (t.name,)
    if isinstance(t, (BoxCont, Capture, Swap, Send, Open, Proc)):
        return (t.var,)
    return ()


def used_names(e: Term | Expr) -> tuple[str, ...]:
    """Variables a node reads directly (not through a nested body)."""
    if isinstance(e, Var):
        return (e.name,)
    if isinstance(e, (Select, Open)):
        return (e.target,)
    if isinstance(e, Assign):
        return (e.target, e.source)
    if isinstance(e, Invoke):
        return (e.target, e.arg)
    if isinstance(e, (Capture, Swap)):
        return (e.target, e.source)
    if isinstance(e, Send):
        return (e.proc, e.msg)
    return ()


def free_vars(t: Term | Expr) -> frozenset[str]:
    """Variables occurring free in ``t``.

    ``Open`` and ``Proc`` bodies count too: a free variable there is a
    typing error, but it is still free.
    """
    if isinstance(t, Let):
        return free_vars(t.expr) | (free_vars(t.body) - {t.name})
    if isinstance(t, (Open, Proc, BoxCont, Capture, Swap, Send)):
        return frozenset(used_names(t)) | (free_vars(t.body) - {t.var})
    return frozenset(used_names(t))


def subterms(t: Term | Expr) -> Iterator[Term | Expr]:
    """Pre-order walk over every term and expression node."""
    yield t
    if isinstance(t, Let):
        yield from subterms(t.expr)
        yield from subterms(t.body)
    elif isinstance(t, (Open, Proc, BoxCont, Capture, Swap, Send)):
        yield from subterms(t.body)


def node_count(p: Program | Term | Expr) -> int:
    if isinstance(p, Program):
        n = sum(node_count(m.body) + 1 for c in p.classes for m in c.methods)
        return n + len(p.classes) + len(p.globals) + node_count(p.main)
    return sum(1 for _ in subterms(p))


# ---------------------------------------------------------------- ANF validation


@dataclass(frozen=True)
class Violation:
    production: str
    message: str
    span: Span | None = None

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        return f"{where}[{self.production}] {self.message}"


def _mode_violation(node, mode: Mode) -> Violation | None:
    if isinstance(node, BoxExpr) and mode is not Mode.CLC1:
        return Violation("e ::= box[C]", "box expression form is CLC1 only; use box[C] { x => t }", node.span)
    if isinstance(node, (BoxCont, Capture, Swap)) and mode is Mode.CLC1:
        name = type(node).__name__.lower().replace("boxcont", "box")
        return Violation("t ::= t^c", f"continuation term '{name}' requires CLC2", node.span)
    if isinstance(node, (Send, Proc)) and mode is not Mode.CLC3:
        name = "send" if isinstance(node, Send) else "proc"
        return Violation("CLC3 extension", f"'{name}' requires CLC3", node.span)
    return None


def _check_binder(name: str, node, out: list[Violation]) -> None:
    if name in RESERVED_NAMES:
        out.append(Violation("binder", f"'{name}' is reserved and cannot be bound", node.span))


def validate_anf(t: Term, mode: Mode) -> list[Violation]:
    """Grammar conformance of ``t`` at calculus level ``mode``.

    Returns an empty list iff ``t`` is a well-formed ANF term.
    """
    out: list[Violation] = []
    _validate_term(t, mode, out)
    return out


def _validate_term(t, mode: Mode, out: list[Violation]) -> None:
    if not isinstance(t, TERM_NODES):
        out.append(Violation("t ::= x | let x = e in t | t^c", f"{type(t).__name__} is not a term", getattr(t, "span", None)))
        return
    v = _mode_violation(t, mode)
    if v:
        out.append(v)
    if isinstance(t, Var):
        return
    if isinstance(t, Let):
        _check_binder(t.name, t, out)
        _validate_expr(t.expr, mode, out)
        _validate_term(t.body, mode, out)
        return
    _check_binder(t.var, t, out)
    _validate_term(t.body, mode, out)


def _validate_expr(e, mode: Mode, out: list[Violation]) -> None:
    if isinstance(e, Let):
        out.append(Violation("e", "let used in expression position (ANF forbids nested let)", e.span))
        return
    if isinstance(e, CONT_TERMS):
        v = _mode_violation(e, mode)
        if v:
            out.append(v)
        out.append(Violation("e", "continuation term used in expression position", e.span))
        return
    v = _mode_violation(e, mode)
    if v:
        out.append(v)
    if isinstance(e, (Open, Proc)):
        _check_binder(e.var, e, out)
        _validate_term(e.body, mode, out)
