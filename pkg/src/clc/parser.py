"""Concrete syntax for ``.clc`` files: lexer, recursive-descent parser, printer.

Layout of a file::

    class C extends AnyRef { var f: C  var u: Box[C]  def m(x: C): C = t }
    var g: C                      // globals, accessed as global.g
    let x = new C in x            // main term

Binder blocks use ``{ x => t }``.  ``(t)`` is accepted in expression
position so that non-ANF input can be reported precisely rather than
rejected as a generic syntax error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .syntax import (
    ANYREF,
    NULL_T,
    Assign,
    BotT,
    BoxCont,
    BoxExpr,
    BoxT,
    Capture,
    ClassDef,
    ClassT,
    GuardedT,
    Invoke,
    Let,
    MethodDef,
    Mode,
    New,
    Null,
    NullT,
    Open,
    Proc,
    ProcT,
    Program,
    Select,
    Send,
    Span,
    Swap,
    TypeRepr,
    Var,
    Violation,
    validate_anf,
)

SourceSpan = Span

KEYWORDS = frozenset(
    "class extends var def let in null new box open capture swap proc send".split()
)
# Names with fixed meaning that may not be declared as classes.
RESERVED_CLASS_NAMES = frozenset({ANYREF, "Box", "Null", "Proc"})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>=>|[{}()\[\].,:=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "kw", "punct", "eof"
    text: str
    line: int
    col: int

    @property
    def end_col(self) -> int:
        return self.col + len(self.text)

    def describe(self) -> str:
        return "end of input" if self.kind == "eof" else repr(self.text)


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # "lexical" | "syntax" | "anf" | "structure"
    message: str
    span: Span | None = None
    expected: tuple[str, ...] = ()
    production: str = ""

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        tail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        tag = self.production or self.kind
        return f"{where}[{tag}] {self.message}{tail}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


def tokenize(text: str, file: str = "<input>") -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            span = Span(file, line, col, line, col + 1)
            raise ParseError([Diagnostic("lexical", f"unexpected character {text[pos]!r}", span)])
        kind = m.lastgroup
        value = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            tokens.append(Token("kw" if value in KEYWORDS else "ident", value, line, col))
        elif kind == "punct":
            tokens.append(Token("punct", value, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token], file: str):
        self.toks = tokens
        self.i = 0
        self.file = file

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("kw", "punct") and t.text == text

    def error(self, message: str, expected: tuple[str, ...] = ()) -> ParseError:
        t = self.tok
        span = Span(self.file, t.line, t.col, t.line, max(t.end_col, t.col + 1))
        return ParseError([Diagnostic("syntax", message, span, expected)])

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r} but found {self.tok.describe()}", (repr(text),))
        t = self.tok
        self.i += 1
        return t

    def ident(self, what: str = "identifier") -> Token:
        t = self.tok
        if t.kind != "ident":
            raise self.error(f"expected {what} but found {t.describe()}", (what,))
        self.i += 1
        return t

    def span_from(self, start: Token) -> Span:
        last = self.toks[max(self.i - 1, 0)]
        return Span(self.file, start.line, start.col, last.line, last.end_col)

    # -- program

    def program(self, mode: Mode) -> Program:
        classes: list[ClassDef] = []
        globals_: list[tuple[str, str]] = []
        while self.at("class"):
            classes.append(self.class_def())
        while self.at("var"):
            self.expect("var")
            name = self.ident("global variable name")
            self.expect(":")
            cls = self.ident("class name")
            globals_.append((name.text, cls.text))
        if self.tok.kind == "eof":
            raise self.error("missing main term", ("term",))
        main = self.term()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.describe()} after main term", ("end of input",))
        return Program(tuple(classes), tuple(globals_), main, mode)

    def class_def(self) -> ClassDef:
        start = self.expect("class")
        name = self.ident("class name").text
        self.expect("extends")
        sup = self.ident("superclass name").text
        self.expect("{")
        fields: list[tuple[str, TypeRepr]] = []
        methods: list[MethodDef] = []
        while not self.at("}"):
            if self.at("var"):
                self.i += 1
                f = self.ident("field name").text
                self.expect(":")
                fields.append((f, self.type_()))
            elif self.at("def"):
                methods.append(self.method_def())
            else:
                raise self.error(
                    f"expected member declaration but found {self.tok.describe()}", ("'var'", "'def'", "'}'")
                )
        self.expect("}")
        return ClassDef(name, sup, tuple(fields), tuple(methods), span=self.span_from(start))

    def method_def(self) -> MethodDef:
        start = self.expect("def")
        name = self.ident("method name").text
        self.expect("(")
        param = self.ident("parameter name").text
        self.expect(":")
        ptype = self.type_()
        self.expect(")")
        self.expect(":")
        ret = self.type_()
        self.expect("=")
        body = self.term()
        return MethodDef(name, param, ptype, ret, body, span=self.span_from(start))

    def type_(self) -> TypeRepr:
        t = self.ident("type")
        if t.text in ("Box", "Proc") and self.at("["):
            self.expect("[")
            cls = self.ident("class name").text
            self.expect("]")
            return BoxT(cls) if t.text == "Box" else ProcT(cls)
        if t.text == "Null":
            return NULL_T
        return ClassT(t.text)

    # -- terms

    def term(self):
        start = self.tok
        if self.at("let"):
            self.i += 1
            name = self.ident("variable name").text
            self.expect("=")
            expr = self.expr()
            self.expect("in")
            body = self.term()
            return Let(name, expr, body, span=self.span_from(start))
        if self.at("box"):
            return self.box_form(start, allow_expr=False)
        if self.at("capture") or self.at("swap"):
            kind = self.tok.text
            self.i += 1
            self.expect("(")
            x = self.ident().text
            self.expect(".")
            f = self.ident("field name").text
            self.expect(",")
            y = self.ident().text
            self.expect(")")
            z, body = self.binder_block()
            node = Capture if kind == "capture" else Swap
            return node(x, f, y, z, body, span=self.span_from(start))
        if self.at("send"):
            self.i += 1
            self.expect("(")
            x = self.ident().text
            self.expect(",")
            y = self.ident().text
            self.expect(")")
            z, body = self.binder_block()
            return Send(x, y, z, body, span=self.span_from(start))
        if self.tok.kind == "ident":
            self.i += 1
            return Var(start.text, span=self.span_from(start))
        raise self.error(
            f"expected term but found {self.tok.describe()}",
            ("identifier", "'let'", "'box'", "'capture'", "'swap'", "'send'"),
        )

    def binder_block(self) -> tuple[str, object]:
        self.expect("{")
        z = self.ident("binder name").text
        self.expect("=>")
        body = self.term()
        self.expect("}")
        return z, body

    def box_form(self, start: Token, allow_expr: bool):
        self.expect("box")
        self.expect("[")
        cls = self.ident("class name").text
        self.expect("]")
        if self.at("{"):
            x, body = self.binder_block()
            return BoxCont(cls, x, body, span=self.span_from(start))
        if not allow_expr:
            raise self.error("a box term needs a continuation block", ("'{'",))
        return BoxExpr(cls, span=self.span_from(start))

    def expr(self):
        start = self.tok
        if self.at("null"):
            self.i += 1
            return Null(span=self.span_from(start))
        if self.at("new"):
            self.i += 1
            cls = self.ident("class name").text
            return New(cls, span=self.span_from(start))
        if self.at("box"):
            return self.box_form(start, allow_expr=True)
        if self.at("proc"):
            self.i += 1
            self.expect("{")
            self.expect("(")
            x = self.ident("parameter name").text
            self.expect(":")
            ty = self.type_()
            if not isinstance(ty, BoxT):
                raise ParseError(
                    [Diagnostic("syntax", "process parameter must have a Box[C] type", self.span_from(start), ("Box[C]",))]
                )
            self.expect(")")
            self.expect("=>")
            body = self.term()
            self.expect("}")
            return Proc(x, ty.cls, body, span=self.span_from(start))
        if self.at("("):
            self.i += 1
            inner = self.term()
            self.expect(")")
            return inner
        if self.at("let") or self.at("capture") or self.at("swap") or self.at("send"):
            # Parsed so validate_anf can name the misplaced production.
            return self.term()
        if self.tok.kind != "ident":
            raise self.error(
                f"expected expression but found {self.tok.describe()}",
                ("identifier", "'null'", "'new'", "'box'", "'proc'"),
            )
        x = self.ident().text
        if not self.at("."):
            return Var(x, span=self.span_from(start))
        self.i += 1
        if self.at("open"):
            self.i += 1
            y, body = self.binder_block()
            return Open(x, y, body, span=self.span_from(start))
        member = self.ident("field or method name").text
        if self.at("("):
            self.i += 1
            arg = self.ident("argument").text
            self.expect(")")
            return Invoke(x, member, arg, span=self.span_from(start))
        if self.at("="):
            self.i += 1
            y = self.ident("variable").text
            return Assign(x, member, y, span=self.span_from(start))
        return Select(x, member, span=self.span_from(start))


# ---------------------------------------------------------------- structure checks


def program_violations(p: Program) -> list[Violation]:
    """Declaration-level grammar constraints plus ANF checks of every body."""
    out: list[Violation] = []
    mode = p.mode
    seen: set[str] = set()
    for c in p.classes:
        if c.name in RESERVED_CLASS_NAMES or c.name.startswith("$"):
            out.append(Violation("cd", f"class name '{c.name}' is reserved", c.span))
        if c.name in seen:
            out.append(Violation("cd", f"duplicate class '{c.name}'", c.span))
        seen.add(c.name)
        names: set[str] = set()
        for f, ft in c.fields:
            if f in names:
                out.append(Violation("fd", f"duplicate field '{f}' in class '{c.name}'", c.span))
            names.add(f)
            if isinstance(ft, BoxT):
                if mode is Mode.CLC1:
                    out.append(Violation("ud", f"unique field '{c.name}.{f}: {ft}' requires CLC2", c.span))
            elif not isinstance(ft, ClassT):
                out.append(Violation("fd", f"field '{c.name}.{f}' must have a class or Box type, not {ft}", c.span))
        mnames: set[str] = set()
        for m in c.methods:
            if m.name in mnames:
                out.append(Violation("md", f"duplicate method '{m.name}' in class '{c.name}'", m.span))
            mnames.add(m.name)
            out.extend(_surface_violations(m.param_type, mode, m.span, "parameter"))
            out.extend(_surface_violations(m.ret, mode, m.span, "result"))
            if mode is not Mode.CLC1 and not isinstance(m.ret, ClassT):
                out.append(Violation("md", f"method '{c.name}.{m.name}' must return a class type in {mode}", m.span))
            if m.param in ("this", "global"):
                out.append(Violation("md", f"parameter name '{m.param}' is reserved", m.span))
            out.extend(validate_anf(m.body, mode))
    gseen: set[str] = set()
    for g, _ in p.globals:
        if g == "global" or g == "this":
            out.append(Violation("vd", f"'{g}' is reserved and cannot name a global"))
        if g in gseen:
            out.append(Violation("vd", f"duplicate global '{g}'"))
        gseen.add(g)
    out.extend(validate_anf(p.main, mode))
    return out


def _surface_violations(t: TypeRepr, mode: Mode, span, where: str) -> list[Violation]:
    if isinstance(t, (GuardedT, BotT)):
        return [Violation("σ", f"{where} type {t} cannot be written in source", span)]
    if isinstance(t, ProcT) and mode is not Mode.CLC3:
        return [Violation("σ", f"{where} type {t} requires CLC3", span)]
    return []


def parse_program(text: str, mode: Mode = Mode.CLC3, file: str = "<input>") -> Program:
    """Parse a whole ``.clc`` file; raises :class:`ParseError` with diagnostics."""
    parser = _Parser(tokenize(text, file), file)
    prog = parser.program(mode)
    violations = program_violations(prog)
    if violations:
        raise ParseError(
            [Diagnostic("anf" if v.production.startswith(("t", "e", "CLC3", "binder")) else "structure",
                        v.message, v.span, production=v.production) for v in violations]
        )
    return prog


def parse_term(text: str, mode: Mode = Mode.CLC3, file: str = "<input>"):
    """Parse a lone term without declarations (no ANF check)."""
    parser = _Parser(tokenize(text, file), file)
    t = parser.term()
    if parser.tok.kind != "eof":
        raise parser.error(f"unexpected {parser.tok.describe()} after term", ("end of input",))
    return t


# ---------------------------------------------------------------- printer

_INDENT = "  "


def print_type(t: TypeRepr) -> str:
    if isinstance(t, NullT):
        return "Null"
    if isinstance(t, ClassT):
        return t.name
    if isinstance(t, BoxT):
        return f"Box[{t.cls}]"
    if isinstance(t, ProcT):
        return f"Proc[{t.cls}]"
    raise ValueError(f"type {t} has no source form")


def print_term(t, level: int = 0) -> str:
    pad = _INDENT * level
    parts: list[str] = []
    # Let chains are printed iteratively so long chains don't recurse.
    while isinstance(t, Let):
        parts.append(f"let {t.name} = {print_expr(t.expr, level)} in\n{pad}")
        t = t.body
    if isinstance(t, Var):
        parts.append(t.name)
    elif isinstance(t, BoxCont):
        parts.append(f"box[{t.cls}] {_block(t.var, t.body, level)}")
    elif isinstance(t, Capture):
        parts.append(f"capture({t.target}.{t.field}, {t.source}) {_block(t.var, t.body, level)}")
    elif isinstance(t, Swap):
        parts.append(f"swap({t.target}.{t.field}, {t.source}) {_block(t.var, t.body, level)}")
    elif isinstance(t, Send):
        parts.append(f"send({t.proc}, {t.msg}) {_block(t.var, t.body, level)}")
    else:
        raise TypeError(f"not a term: {t!r}")
    return "".join(parts)


def _block(var: str, body, level: int) -> str:
    inner = _INDENT * (level + 1)
    return f"{{ {var} =>\n{inner}{print_term(body, level + 1)}\n{_INDENT * level}}}"


def print_expr(e, level: int = 0) -> str:
    if isinstance(e, Null):
        return "null"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Select):
        return f"{e.target}.{e.field}"
    if isinstance(e, Assign):
        return f"{e.target}.{e.field} = {e.source}"
    if isinstance(e, New):
        return f"new {e.cls}"
    if isinstance(e, Invoke):
        return f"{e.target}.{e.method}({e.arg})"
    if isinstance(e, BoxExpr):
        return f"box[{e.cls}]"
    if isinstance(e, Open):
        return f"{e.target}.open {_block(e.var, e.body, level)}"
    if isinstance(e, Proc):
        inner = _INDENT * (level + 1)
        return f"proc {{ ({e.var}: Box[{e.cls}]) =>\n{inner}{print_term(e.body, level + 1)}\n{_INDENT * level}}}"
    # Non-ANF input: a term in expression position.
    return f"({print_term(e, level)})"


def print_program(p: Program) -> str:
    out: list[str] = []
    for c in p.classes:
        out.append(f"class {c.name} extends {c.superclass} {{\n")
        for f, ft in c.fields:
            out.append(f"{_INDENT}var {f}: {print_type(ft)}\n")
        for m in c.methods:
            out.append(
                f"{_INDENT}def {m.name}({m.param}: {print_type(m.param_type)}): {print_type(m.ret)} =\n"
                f"{_INDENT * 2}{print_term(m.body, 2)}\n"
            )
        out.append("}\n\n")
    for g, cls in p.globals:
        out.append(f"var {g}: {cls}\n")
    if p.globals:
        out.append("\n")
    out.append(print_term(p.main, 0))
    out.append("\n")
    return "".join(out)


__all__ = [
    "Diagnostic",
    "ParseError",
    "SourceSpan",
    "Token",
    "parse_program",
    "parse_term",
    "print_expr",
    "print_program",
    "print_term",
    "print_type",
    "program_violations",
    "tokenize",
]
