"""Syntax-directed typing for all three calculus levels.

Judgements have the shape ``Γ ; a ⊢ t : σ`` where Γ maps variables to
types and also carries the set of available static permissions, and the
effect ``a`` is either unrestricted or ``ocap``.  There is no general
subsumption: subtyping is consulted only where a rule asks for it.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Mapping

from . import mutations
from .classtable import ClassTable, wf_program
from .errors import ProgramRejected, TypingError, UnknownClass
from .syntax import (
    ANYREF,
    BOT_T,
    GLOBAL,
    GLOBAL_CLASS,
    NULL_T,
    THIS,
    Assign,
    BoxCont,
    BoxExpr,
    BoxT,
    Capture,
    ClassT,
    GuardedT,
    Invoke,
    Let,
    MethodDef,
    Mode,
    New,
    Null,
    Open,
    Proc,
    ProcT,
    Program,
    Select,
    Send,
    Swap,
    TypeRepr,
    Var,
)


class Effect(enum.Enum):
    EPS = "ε"
    OCAP = "ocap"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TypeEnv:
    """Γ: variable types, available static permissions ⟦Q⟧, and the effect."""

    vars: Mapping[str, TypeRepr]
    perms: frozenset[int] = frozenset()
    effect: Effect = Effect.EPS

    def __post_init__(self) -> None:
        if not isinstance(self.vars, MappingProxyType):
            object.__setattr__(self, "vars", MappingProxyType(dict(self.vars)))

    def lookup(self, x: str) -> TypeRepr | None:
        return self.vars.get(x)

    def bind(self, x: str, t: TypeRepr) -> TypeEnv:
        d = dict(self.vars)
        d[x] = t
        return TypeEnv(d, self.perms, self.effect)

    def with_perm(self, q: int) -> TypeEnv:
        return TypeEnv(self.vars, self.perms | {q}, self.effect)

    def without_perm(self, q: int) -> TypeEnv:
        return TypeEnv(self.vars, self.perms - {q}, self.effect)

    def __str__(self) -> str:
        vs = ", ".join(f"{k}: {v}" for k, v in self.vars.items())
        ps = ", ".join(f"⟦Q{q}⟧" for q in sorted(self.perms))
        return f"{{{vs}{'; ' if ps else ''}{ps}}} ; {self.effect}"


def empty_env(effect: Effect = Effect.EPS) -> TypeEnv:
    return TypeEnv({}, frozenset(), effect)


def global_env() -> TypeEnv:
    """Γ₀ = {global : C_g} under the unrestricted effect."""
    return TypeEnv({GLOBAL: ClassT(GLOBAL_CLASS)}, frozenset(), Effect.EPS)


class Checker:
    """One typing run: owns the fresh-Q supply and, optionally, per-node records.

    ``records`` maps ``id(term)`` to ``(term, [(Γ, σ), ...])`` for every
    term node typed during the run (a node shared between positions is typed
    once per position); the runtime monitors use it to recover the static
    environment of whatever term a frame is executing.
    """

    def __init__(self, ct: ClassTable, ocap: Callable[[str], bool] | None = None, record: bool = False):
        self.ct = ct
        self.mode = ct.mode
        self.ocap = ocap or ct.is_ocap
        self._fresh = itertools.count()
        self.records: dict[int, tuple[object, list[tuple[TypeEnv, TypeRepr]]]] | None = {} if record else None
        self.introduced: list[int] = []
        # Rules that put the current body under the ocap effect, innermost last.
        self.ocap_rules: list[str] = []

    def fresh_q(self) -> int:
        q = next(self._fresh)
        self.introduced.append(q)
        return q

    # ------------------------------------------------------------ helpers

    def _var(self, env: TypeEnv, x: str, node) -> TypeRepr:
        t = env.lookup(x)
        if t is None and x == GLOBAL and env.effect is Effect.OCAP:
            rule = self.ocap_rules[-1] if self.ocap_rules else "T-Var"
            raise TypingError(rule, "AmbientAuthority", "'global' is not accessible under the ocap effect", node.span)
        if t is None:
            raise TypingError("T-Var", "UnboundVariable", f"unbound variable '{x}'", node.span)
        return t

    def _class_var(self, env: TypeEnv, x: str, node, rule: str) -> str:
        t = self._var(env, x, node)
        if not isinstance(t, ClassT):
            raise TypingError(rule, "TypeMismatch", f"'{x}' must have a class type", node.span,
                              expected=ClassT("C"), actual=t)
        return t.name

    def _guarded_var(self, env: TypeEnv, x: str, node, rule: str) -> GuardedT:
        t = self._var(env, x, node)
        if not isinstance(t, GuardedT):
            raise TypingError(rule, "TypeMismatch", f"'{x}' must be a box with a guarded type", node.span,
                              expected=GuardedT(-1, "C"), actual=t)
        if t.q not in env.perms:
            raise TypingError(rule, "MissingPermission",
                              f"permission for box '{x}' is not available (consumed?)", node.span, actual=t)
        return t

    def _class_exists(self, name: str, node, rule: str) -> None:
        if not self.ct.is_class(name):
            raise UnknownClass(name, node.span, rule=rule)

    # ------------------------------------------------------------ terms

    def term(self, env: TypeEnv, t) -> TypeRepr:
        # Let chains are walked iteratively; every node in a chain has the
        # chain's final type.
        chain: list[tuple[object, TypeEnv]] = []
        while isinstance(t, Let):
            chain.append((t, env))
            tau = self.expr(env, t.expr)
            env = env.bind(t.name, tau)
            t = t.body
        sigma = self._tail(env, t)
        if self.records is not None:
            self._record(t, env, sigma)
            for node, e in chain:
                self._record(node, e, sigma)
        return sigma

    def _record(self, node, env: TypeEnv, sigma: TypeRepr) -> None:
        entry = self.records.setdefault(id(node), (node, []))
        entry[1].append((env, sigma))

    def _tail(self, env: TypeEnv, t) -> TypeRepr:
        if isinstance(t, Var):
            return self._var(env, t.name, t)
        if isinstance(t, BoxCont):
            return self._box_cont(env, t)
        if isinstance(t, Capture):
            return self._capture(env, t)
        if isinstance(t, Swap):
            return self._swap(env, t)
        if isinstance(t, Send):
            return self._send(env, t)
        raise TypingError("T-Let", "TypeMismatch", f"{type(t).__name__} is not a term", getattr(t, "span", None))

    def _box_cont(self, env: TypeEnv, t: BoxCont) -> TypeRepr:
        self._class_exists(t.cls, t, "T-Box")
        if not self.ocap(t.cls):
            raise TypingError("T-Box", "NonOcapBox", f"boxed class '{t.cls}' is not ocap", t.span)
        q = self.fresh_q()
        self.term(env.bind(t.var, GuardedT(q, t.cls)).with_perm(q), t.body)
        return BOT_T

    def _capture(self, env: TypeEnv, t: Capture) -> TypeRepr:
        gx = self._guarded_var(env, t.target, t, "T-Capture")
        gy = self._guarded_var(env, t.source, t, "T-Capture")
        ft = self.ct.ftype(gx.cls, t.field)
        if ft is None:
            raise TypingError("T-Capture", "UnknownMember", f"class '{gx.cls}' has no field '{t.field}'", t.span)
        if not self.ct.subtype(ClassT(gy.cls), ft):
            raise TypingError("T-Capture", "ArgTypeMismatch",
                              f"cannot capture a box of '{gy.cls}' into field '{t.field}'", t.span,
                              expected=ft, actual=ClassT(gy.cls))
        self.term(env.without_perm(gy.q).bind(t.var, gx), t.body)
        return BOT_T

    def _swap(self, env: TypeEnv, t: Swap) -> TypeRepr:
        gx = self._guarded_var(env, t.target, t, "T-Swap")
        gy = self._guarded_var(env, t.source, t, "T-Swap")
        ft = self.ct.ftype(gx.cls, t.field)
        if ft is None:
            raise TypingError("T-Swap", "UnknownMember", f"class '{gx.cls}' has no field '{t.field}'", t.span)
        if not isinstance(ft, BoxT):
            raise TypingError("T-Swap", "TypeMismatch", f"field '{gx.cls}.{t.field}' is not a unique field",
                              t.span, expected=BoxT("D"), actual=ft)
        if not self.ct.is_subclass(gy.cls, ft.cls):
            raise TypingError("T-Swap", "ArgTypeMismatch",
                              f"cannot swap a box of '{gy.cls}' into field '{t.field}: {ft}'", t.span,
                              expected=ClassT(ft.cls), actual=ClassT(gy.cls))
        r = self.fresh_q()
        self.term(env.without_perm(gy.q).bind(t.var, GuardedT(r, ft.cls)).with_perm(r), t.body)
        return BOT_T

    def _send(self, env: TypeEnv, t: Send) -> TypeRepr:
        pt = self._var(env, t.proc, t)
        if not isinstance(pt, ProcT):
            raise TypingError("T-Send", "TypeMismatch", f"'{t.proc}' is not a process", t.span,
                              expected=ProcT("C"), actual=pt)
        gy = self._guarded_var(env, t.msg, t, "T-Send")
        if not self.ct.is_subclass(gy.cls, pt.cls):
            raise TypingError("T-Send", "ArgTypeMismatch", f"process '{t.proc}' does not accept '{gy.cls}'",
                              t.span, expected=ClassT(pt.cls), actual=ClassT(gy.cls))
        self.term(env.without_perm(gy.q).bind(t.var, pt), t.body)
        return BOT_T

    # ------------------------------------------------------------ expressions

    def expr(self, env: TypeEnv, e) -> TypeRepr:
        if isinstance(e, Null):
            return NULL_T
        if isinstance(e, Var):
            return self._var(env, e.name, e)
        if isinstance(e, Select):
            c = self._class_var(env, e.target, e, "T-Select")
            ft = self.ct.ftype(c, e.field)
            if ft is None:
                raise TypingError("T-Select", "UnknownMember", f"class '{c}' has no field '{e.field}'", e.span)
            if not isinstance(ft, ClassT):
                raise TypingError("T-Select", "TypeMismatch",
                                  f"unique field '{c}.{e.field}' is only accessible through swap", e.span)
            return ft
        if isinstance(e, Assign):
            c = self._class_var(env, e.target, e, "T-Assign")
            ft = self.ct.ftype(c, e.field)
            if ft is None:
                raise TypingError("T-Assign", "UnknownMember", f"class '{c}' has no field '{e.field}'", e.span)
            if not isinstance(ft, ClassT):
                raise TypingError("T-Assign", "TypeMismatch",
                                  f"unique field '{c}.{e.field}' is only accessible through swap", e.span)
            yt = self._var(env, e.source, e)
            if not self.ct.subtype(yt, ft):
                raise TypingError("T-Assign", "ArgTypeMismatch", f"cannot assign '{e.source}' to '{c}.{e.field}'",
                                  e.span, expected=ft, actual=yt)
            return ft
        if isinstance(e, New):
            self._class_exists(e.cls, e, "T-New")
            if env.effect is Effect.OCAP and not mutations.active("tnew-skips-ocap") and not self.ocap(e.cls):
                raise TypingError("T-New", "NonOcapNew", f"class '{e.cls}' is not ocap", e.span)
            if self.mode is not Mode.CLC1:
                for f, ft in self.ct.fields(e.cls):
                    if isinstance(ft, BoxT):
                        raise TypingError("T-New", "BoxFieldInNew",
                                          f"class '{e.cls}' has unique field '{f}'; create it with box", e.span)
            return ClassT(e.cls)
        if isinstance(e, Invoke):
            return self._invoke(env, e)
        if isinstance(e, BoxExpr):
            self._class_exists(e.cls, e, "T-Box")
            if not self.ocap(e.cls):
                raise TypingError("T-Box", "NonOcapBox", f"boxed class '{e.cls}' is not ocap", e.span)
            return BoxT(e.cls)
        if isinstance(e, Open):
            return self._open(env, e)
        if isinstance(e, Proc):
            self._class_exists(e.cls, e, "T-Proc")
            q = self.fresh_q()
            body_env = TypeEnv({e.var: GuardedT(q, e.cls)}, frozenset({q}), Effect.OCAP)
            self._ocap_body("T-Proc", body_env, e.body)
            return ProcT(e.cls)
        raise TypingError("T-Let", "TypeMismatch", f"{type(e).__name__} is not an expression",
                          getattr(e, "span", None))

    def _invoke(self, env: TypeEnv, e: Invoke) -> TypeRepr:
        c = self._class_var(env, e.target, e, "T-Invoke")
        mt = self.ct.mtype(c, e.method)
        if mt is None:
            raise TypingError("T-Invoke", "UnknownMember", f"class '{c}' has no method '{e.method}'", e.span)
        sigma, tau = mt
        yt = self._var(env, e.arg, e)
        if self.ct.subtype(yt, sigma):
            return tau
        if isinstance(sigma, BoxT) and isinstance(yt, GuardedT) and self.ct.is_subclass(yt.cls, sigma.cls):
            if yt.q not in env.perms:
                raise TypingError("T-Invoke", "MissingPermission",
                                  f"permission for box argument '{e.arg}' is not available", e.span, actual=yt)
            return tau
        raise TypingError("T-Invoke", "ArgTypeMismatch", f"bad argument '{e.arg}' for '{c}.{e.method}'",
                          e.span, expected=sigma, actual=yt)

    def _open(self, env: TypeEnv, e: Open) -> TypeRepr:
        xt = self._var(env, e.target, e)
        if self.mode is Mode.CLC1:
            if not isinstance(xt, BoxT):
                raise TypingError("T-Open", "TypeMismatch", f"'{e.target}' is not a box", e.span,
                                  expected=BoxT("C"), actual=xt)
            cls = xt.cls
        else:
            g = self._guarded_var(env, e.target, e, "T-Open")
            cls = g.cls
            xt = g
        self._ocap_body("T-Open", TypeEnv({e.var: ClassT(cls)}, frozenset(), Effect.OCAP), e.body)
        return xt

    def _ocap_body(self, rule: str, env: TypeEnv, body) -> TypeRepr:
        self.ocap_rules.append(rule)
        try:
            return self.term(env, body)
        finally:
            self.ocap_rules.pop()


# ---------------------------------------------------------------- methods and programs


def method_env(checker: Checker, cls: str, m: MethodDef, with_globals: bool, effect: Effect) -> TypeEnv:
    vars_: dict[str, TypeRepr] = {GLOBAL: ClassT(GLOBAL_CLASS)} if with_globals else {}
    vars_[THIS] = ClassT(cls)
    perms: frozenset[int] = frozenset()
    if isinstance(m.param_type, BoxT) and checker.mode is not Mode.CLC1:
        q = checker.fresh_q()
        vars_[m.param] = GuardedT(q, m.param_type.cls)
        perms = frozenset({q})
    else:
        vars_[m.param] = m.param_type
    return TypeEnv(vars_, perms, effect)


def check_method(checker: Checker, cls: str, m: MethodDef, with_globals: bool = True) -> TypeRepr:
    """WF-Method (with Γ₀, effect ε) or the ocap variant (no Γ₀, effect ocap)."""
    effect = Effect.EPS if with_globals else Effect.OCAP
    rule = ("WF-Method" if checker.mode is Mode.CLC1 else
            "WF-Method2" if isinstance(m.param_type, BoxT) else "WF-Method1")
    if not with_globals:
        rule = rule.replace("WF-", "Ocap-")
    env = method_env(checker, cls, m, with_globals, effect)
    body_t = checker.term(env, m.body) if with_globals else checker._ocap_body(rule, env, m.body)
    if not checker.ct.subtype(body_t, m.ret):
        raise TypingError(rule, "TypeMismatch", f"body of '{cls}.{m.name}' does not match its result type",
                          m.span, expected=m.ret, actual=body_t)
    return body_t


def ocap_method_error(ct: ClassTable, cls: str, m: MethodDef, member: Callable[[str], bool]) -> TypingError | None:
    """Why ``m`` fails the ocap method rule when ``member`` decides ocap-ness, else None."""
    checker = Checker(ct, ocap=member)
    try:
        check_method(checker, cls, m, with_globals=False)
    except TypingError as e:
        return e
    return None


def typecheck_term(ct: ClassTable, env: TypeEnv, t) -> TypeRepr:
    """Type of ``t`` under ``env``; raises :class:`TypingError` on the first violation."""
    return Checker(ct).term(env, t)


@dataclass
class Typing:
    """A successful program typing, with per-node static environments."""

    ct: ClassTable
    main_type: TypeRepr
    checker: Checker

    def lookup_all(self, node) -> list[tuple[TypeEnv, TypeRepr]]:
        rec = self.checker.records.get(id(node)) if self.checker.records is not None else None
        if rec is None or rec[0] is not node:
            return []
        return rec[1]

    def lookup(self, node) -> tuple[TypeEnv, TypeRepr] | None:
        found = self.lookup_all(node)
        return found[0] if found else None


def typecheck_program(ct: ClassTable, p: Program) -> Typing:
    """Type the whole program; raises :class:`ProgramRejected` with every error."""
    checker = Checker(ct, record=True)
    report = wf_program(ct, p, checker)
    if not report.ok or report.main_type is None:
        raise ProgramRejected(report.errors)
    return Typing(ct, report.main_type, checker)


def check_program(p: Program) -> Typing:
    return typecheck_program(ClassTable(p), p)


__all__ = [
    "ANYREF",
    "Checker",
    "Effect",
    "ProgramRejected",
    "TypeEnv",
    "Typing",
    "TypingError",
    "check_method",
    "check_program",
    "empty_env",
    "global_env",
    "ocap_method_error",
    "typecheck_program",
    "typecheck_term",
]
