"""Class table: member lookup, subtyping, ocap judgement, well-formedness, census."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import TypingError, UnknownClass
from .syntax import (
    ANYREF,
    GLOBAL,
    GLOBAL_CLASS,
    BotT,
    BoxCont,
    BoxExpr,
    BoxT,
    ClassDef,
    ClassT,
    GuardedT,
    MethodDef,
    Mode,
    New,
    NullT,
    Proc,
    ProcT,
    Program,
    Span,
    Term,
    TypeRepr,
    free_vars,
    subterms,
)


class ClassTable:
    """Immutable view of a program's classes plus the synthetic global holder.

    Construction never raises; structural problems (unknown classes,
    inheritance cycles, shadowed fields) are collected in ``problems`` and
    reported by :func:`wf_program`.
    """

    def __init__(self, program: Program):
        self.program = program
        self.mode = program.mode
        self.defs: dict[str, ClassDef] = {}
        self.problems: list[TypingError] = []
        for c in program.classes:
            self.defs.setdefault(c.name, c)
        gfields = tuple((g, ClassT(cls)) for g, cls in program.globals)
        self.defs[GLOBAL_CLASS] = ClassDef(GLOBAL_CLASS, ANYREF, gfields, ())
        self._chain: dict[str, tuple[str, ...]] = {}
        self._fields: dict[str, tuple[tuple[str, TypeRepr], ...]] = {}
        self._ocap: frozenset[str] | None = None
        self._ocap_reason: dict[str, tuple[str, str, Span | None]] = {}
        self._check_structure()

    @classmethod
    def build(cls, program: Program) -> ClassTable:
        return cls(program)

    # ------------------------------------------------------------ structure

    def _check_structure(self) -> None:
        for c in self.program.classes:
            if c.superclass != ANYREF and c.superclass not in self.defs:
                self.problems.append(UnknownClass(c.superclass, c.span, rule="WF-Class"))
        for name in self.defs:
            self._ancestor_chain(name)
        for c in self.program.classes:
            for _, ft in c.fields:
                self._require_type(ft, c.span, "WF-Class")
            for m in c.methods:
                self._require_type(m.param_type, m.span, "WF-Method")
                self._require_type(m.ret, m.span, "WF-Method")
                self._require_body(m.body)
            if c.superclass in self.defs and c.superclass != c.name:
                inherited = {f for f, _ in self.fields(c.superclass)}
                for f, _ in c.fields:
                    if f in inherited:
                        self.problems.append(
                            TypingError("WF-Class", "FieldShadowing",
                                        f"field '{c.name}.{f}' shadows an inherited field", c.span)
                        )
        for g, cls in self.program.globals:
            if cls != ANYREF and cls not in self.defs:
                self.problems.append(UnknownClass(cls, None, rule="WF-Program"))
        self._require_body(self.program.main)

    def _require_type(self, t: TypeRepr, span: Span | None, rule: str) -> None:
        name = t.name if isinstance(t, ClassT) else getattr(t, "cls", None)
        if name is not None and name != ANYREF and name not in self.defs:
            self.problems.append(UnknownClass(name, span, rule=rule))

    def _require_body(self, t: Term) -> None:
        for node in subterms(t):
            if isinstance(node, (New, BoxExpr, BoxCont, Proc)):
                if node.cls != ANYREF and node.cls not in self.defs:
                    self.problems.append(UnknownClass(node.cls, node.span))

    def _ancestor_chain(self, name: str) -> tuple[str, ...]:
        """``name`` and its superclasses, nearest first, excluding AnyRef."""
        if name in self._chain:
            return self._chain[name]
        chain: list[str] = []
        seen: set[str] = set()
        cur = name
        while cur != ANYREF and cur in self.defs:
            if cur in seen:
                self.problems.append(
                    TypingError("WF-Class", "InheritanceCycle", f"inheritance cycle through '{cur}'",
                                self.defs[cur].span)
                )
                break
            seen.add(cur)
            chain.append(cur)
            cur = self.defs[cur].superclass
        self._chain[name] = tuple(chain)
        return self._chain[name]

    def has_cycles(self) -> bool:
        return any(p.kind == "InheritanceCycle" for p in self.problems)

    def resolve(self, name: str) -> None:
        if name != ANYREF and name not in self.defs:
            raise UnknownClass(name)

    def is_class(self, name: str) -> bool:
        return name == ANYREF or name in self.defs

    def user_classes(self) -> list[str]:
        return [c.name for c in self.program.classes]

    # ------------------------------------------------------------ lookups

    def ancestors(self, name: str) -> tuple[str, ...]:
        self.resolve(name)
        return self._ancestor_chain(name) if name != ANYREF else ()

    def fields(self, name: str) -> tuple[tuple[str, TypeRepr], ...]:
        """Superclass fields first, then declared ones."""
        self.resolve(name)
        if name in self._fields:
            return self._fields[name]
        out: list[tuple[str, TypeRepr]] = []
        for c in reversed(self.ancestors(name)):
            out.extend(self.defs[c].fields)
        self._fields[name] = tuple(out)
        return self._fields[name]

    def field_names(self, name: str) -> tuple[str, ...]:
        return tuple(f for f, _ in self.fields(name))

    def ftype(self, name: str, f: str) -> TypeRepr | None:
        for g, t in self.fields(name):
            if g == f:
                return t
        return None

    def method(self, name: str, m: str) -> tuple[str, MethodDef] | None:
        """Nearest definition of ``m``: (defining class, definition)."""
        for c in self.ancestors(name):
            md = self.defs[c].method(m)
            if md is not None:
                return c, md
        return None

    def mtype(self, name: str, m: str) -> tuple[TypeRepr, TypeRepr] | None:
        hit = self.method(name, m)
        return None if hit is None else (hit[1].param_type, hit[1].ret)

    def mbody(self, name: str, m: str) -> tuple[str, Term] | None:
        hit = self.method(name, m)
        return None if hit is None else (hit[1].param, hit[1].body)

    # ------------------------------------------------------------ subtyping

    def is_subclass(self, c: str, d: str) -> bool:
        self.resolve(c)
        self.resolve(d)
        if d == ANYREF or c == d:
            return True
        return d in self.ancestors(c)

    def subtype(self, a: TypeRepr, b: TypeRepr) -> bool:
        if isinstance(a, BotT):
            return True
        if isinstance(a, NullT):
            return isinstance(b, (ClassT, BoxT, NullT, ProcT))
        if isinstance(a, ClassT) and isinstance(b, ClassT):
            return self.is_subclass(a.name, b.name)
        if isinstance(a, BoxT) and isinstance(b, BoxT):
            return self.is_subclass(a.cls, b.cls)
        if isinstance(a, GuardedT) and isinstance(b, GuardedT):
            return a.q == b.q and self.is_subclass(a.cls, b.cls)
        if isinstance(a, ProcT) and isinstance(b, ProcT):
            self.resolve(a.cls)
            return a.cls == b.cls
        return False

    # ------------------------------------------------------------ ocap

    def ocap_classes(self) -> frozenset[str]:
        """Greatest set of classes satisfying the ocap class rules.

        Start from every class and strike out violators until stable, so
        benign cycles (A has a B field, B has an A field) stay ocap.
        """
        if self._ocap is not None:
            return self._ocap
        from .typecheck import ocap_method_error

        # The globals object is the ambient authority, never a capability.
        cand = set(self.defs) - {GLOBAL_CLASS}
        reasons: dict[str, tuple[str, str, Span | None]] = {
            GLOBAL_CLASS: ("Ocap-Class", "the globals object is ambient authority", None)}
        changed = True
        while changed:
            changed = False
            member: Callable[[str], bool] = lambda c: c == ANYREF or c in cand
            for name in sorted(cand):
                why = self._ocap_violation(name, member, ocap_method_error)
                if why is not None:
                    cand.discard(name)
                    reasons[name] = why
                    changed = True
        self._ocap = frozenset(cand)
        self._ocap_reason = reasons
        return self._ocap

    def _ocap_violation(self, name, member, method_check) -> tuple[str, str, Span | None] | None:
        c = self.defs[name]
        if not member(c.superclass):
            return ("Ocap-Class", f"superclass '{c.superclass}' is not ocap", c.span)
        for f, ft in c.fields:
            cls = ft.name if isinstance(ft, ClassT) else getattr(ft, "cls", None)
            if cls is not None and not member(cls):
                return ("Ocap-Class", f"field '{f}: {ft}' has a non-ocap class", c.span)
        for m in c.methods:
            err = method_check(self, name, m, member)
            if err is not None:
                return (err.rule, f"method '{m.name}': {err.message}", err.span or m.span)
        return None

    def is_ocap(self, name: str) -> bool:
        if name == ANYREF:
            return True
        self.resolve(name)
        return name in self.ocap_classes()

    def ocap_reason(self, name: str) -> tuple[str, str, Span | None] | None:
        self.ocap_classes()
        return self._ocap_reason.get(name)


# ---------------------------------------------------------------- free functions


def build_class_table(program: Program) -> ClassTable:
    return ClassTable(program)


def fields(ct: ClassTable, name: str):
    return ct.fields(name)


def ftype(ct: ClassTable, name: str, f: str):
    return ct.ftype(name, f)


def mtype(ct: ClassTable, name: str, m: str):
    return ct.mtype(name, m)


def mbody(ct: ClassTable, name: str, m: str):
    return ct.mbody(name, m)


def subtype(ct: ClassTable, a: TypeRepr, b: TypeRepr) -> bool:
    return ct.subtype(a, b)


def is_ocap(ct: ClassTable, name: str) -> bool:
    return ct.is_ocap(name)


# ---------------------------------------------------------------- well-formedness


@dataclass
class WFReport:
    errors: list[TypingError] = field(default_factory=list)
    main_type: TypeRepr | None = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def rules(self) -> list[str]:
        return [e.rule for e in self.errors]


def wf_program(ct: ClassTable, p: Program, checker=None) -> WFReport:
    """Every well-formedness violation of ``p``, in check order.

    Order: class-table structure, overriding, method bodies, main term.
    A checker may be passed in to keep its per-node typing records.
    """
    from .typecheck import Checker, check_method, Effect, TypeEnv

    report = WFReport(list(ct.problems))
    if ct.has_cycles():
        return report
    for c in p.classes:
        if c.superclass == ANYREF or c.superclass not in ct.defs:
            continue
        for m in c.methods:
            inherited = ct.mtype(c.superclass, m.name)
            if inherited is not None and inherited != (m.param_type, m.ret):
                report.errors.append(
                    TypingError(
                        "WF-Override", "BadOverride",
                        f"'{c.name}.{m.name}' changes the signature inherited from '{c.superclass}'",
                        m.span,
                        expected=inherited[0], actual=m.param_type,
                    )
                )
    if any(isinstance(e, UnknownClass) for e in report.errors):
        return report
    checker = checker or Checker(ct)
    for c in p.classes:
        for m in c.methods:
            try:
                check_method(checker, c.name, m, with_globals=True)
            except TypingError as e:
                report.errors.append(e)
    env = TypeEnv({GLOBAL: ClassT(GLOBAL_CLASS)}, frozenset(), Effect.EPS)
    try:
        report.main_type = checker.term(env, p.main)
    except TypingError as e:
        report.errors.append(e)
    return report


# ---------------------------------------------------------------- census


OCAP = "ocap"
DIRECT = "directly-insecure"
TRANSITIVE = "transitively-insecure"


@dataclass(frozen=True)
class CensusEntry:
    name: str
    verdict: str
    rule: str | None = None
    reason: str | None = None
    span: Span | None = None

    def to_record(self) -> dict:
        return {
            "class": self.name,
            "verdict": self.verdict,
            "rule": self.rule,
            "reason": self.reason,
            "span": str(self.span) if self.span else None,
        }


@dataclass(frozen=True)
class Census:
    entries: tuple[CensusEntry, ...]

    def count(self, verdict: str) -> int:
        return sum(1 for e in self.entries if e.verdict == verdict)

    @property
    def total(self) -> int:
        return len(self.entries)

    def percent(self, verdict: str) -> float:
        return 100.0 * self.count(verdict) / self.total if self.total else 0.0

    def verdicts(self) -> dict[str, str]:
        return {e.name: e.verdict for e in self.entries}

    def render_text(self) -> str:
        width = max([len("class")] + [len(e.name) for e in self.entries])
        lines = [f"{'class':<{width}}  verdict                reason"]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.verdict:<21}  {e.reason or ''}".rstrip())
        lines.append("")
        lines.append(f"{'#classes':<24}{self.total}")
        for v in (OCAP, DIRECT, TRANSITIVE):
            lines.append(f"{'#' + v:<24}{self.count(v)} ({self.percent(v):.1f}%)")
        return "\n".join(lines) + "\n"

    def render_jsonl(self) -> str:
        rows = [json.dumps(e.to_record(), sort_keys=True) for e in self.entries]
        summary = {"summary": True, "total": self.total}
        for v in (OCAP, DIRECT, TRANSITIVE):
            summary[v] = self.count(v)
        rows.append(json.dumps(summary, sort_keys=True))
        return "\n".join(rows) + "\n"


def uses_global(m: MethodDef) -> bool:
    return GLOBAL in free_vars(m.body)


def census(ct: ClassTable, classes: Iterable[str] | None = None) -> Census:
    """Classify each user class as ocap, directly or transitively insecure.

    A class is directly insecure when one of its own method bodies reaches
    for ``global``; every other ocap failure (superclass, field type,
    instantiating a non-ocap class) only inherits insecurity from elsewhere.
    """
    names = list(classes) if classes is not None else ct.user_classes()
    entries: list[CensusEntry] = []
    for name in names:
        if ct.is_ocap(name):
            entries.append(CensusEntry(name, OCAP))
            continue
        c = ct.defs[name]
        direct = [m for m in c.methods if uses_global(m)]
        if direct:
            m = direct[0]
            entries.append(CensusEntry(name, DIRECT, "Ocap-Method",
                                       f"method '{m.name}' accesses global state", m.span))
        else:
            rule, reason, span = ct.ocap_reason(name) or ("Ocap-Class", "depends on a non-ocap class", c.span)
            entries.append(CensusEntry(name, TRANSITIVE, rule, reason, span))
    return Census(tuple(entries))
