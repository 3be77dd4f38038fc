"""Seeded, type-directed generation of well-typed programs, and a greedy shrinker.

The generator inverts the typing rules: it keeps its own picture of Γ
(variable types, available static permissions, effect) and only emits a
construct whose premises hold in that picture, threading permissions the
way the rules do.  Method calls only go to methods generated earlier, so
every run terminates.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

from .syntax import (
    ANYREF,
    GLOBAL,
    GLOBAL_CLASS,
    THIS,
    Assign,
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
    Swap,
    TypeRepr,
    Var,
)


@dataclass
class GenConfig:
    seed: int = 0
    mode: Mode = Mode.CLC2
    size: int = 3  # 0 gives the trivial program
    max_classes: int = 6
    max_fields: int = 3
    max_methods: int = 3
    max_depth: int = 12
    boxes: bool = True
    capture: bool = True
    swap: bool = True
    procs: bool = True
    # Probability of a `new` of a non-ocap class under the ocap effect.
    # Non-zero values produce near-miss programs the checker should reject.
    near_miss: float = 0.0

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        for name in ("max_classes", "max_fields", "max_methods", "max_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.size < 0:
            raise ValueError("size must be non-negative")
        # Toggles never exceed what the calculus level offers.
        if self.mode is Mode.CLC1:
            self.capture = self.swap = False
        if self.mode is not Mode.CLC3:
            self.procs = False


@dataclass(frozen=True)
class _Sig:
    owner: str
    name: str
    param: str
    ptype: TypeRepr
    ret: TypeRepr
    rank: int


@dataclass
class _Ctx:
    vars: dict[str, TypeRepr]
    perms: frozenset[int]
    ocap: bool
    nonnull: frozenset[str]
    rank: int  # may invoke methods with a smaller rank
    depth: int
    budget: list[int] = field(default_factory=lambda: [1 << 30])  # invokes left, shared per method

    def bind(self, x: str, t: TypeRepr, nonnull: bool) -> _Ctx:
        vs = dict(self.vars)
        vs[x] = t
        nn = self.nonnull | {x} if nonnull else self.nonnull - {x}
        return replace(self, vars=vs, nonnull=nn)

    def deeper(self) -> _Ctx:
        return replace(self, depth=self.depth - 1)


class _Gen:
    def __init__(self, cfg: GenConfig):
        self.cfg = cfg
        self.mode = cfg.mode
        self.rng = random.Random(cfg.seed)
        self.n = 0
        self.q = 0
        self.procs_made = 0

    def fresh(self, prefix: str = "v") -> str:
        self.n += 1
        return f"{prefix}{self.n}"

    def fresh_q(self) -> int:
        self.q += 1
        return self.q

    def chance(self, p: float) -> bool:
        return self.rng.random() < p

    # ------------------------------------------------------------ classes

    def skeleton(self) -> None:
        cfg, rng = self.cfg, self.rng
        n = rng.randint(1, min(cfg.max_classes, 2 + cfg.size))
        self.classes = [f"C{i}" for i in range(n)]
        self.super: dict[str, str] = {}
        for i, c in enumerate(self.classes):
            self.super[c] = self.classes[rng.randrange(i)] if i and self.chance(0.3) else ANYREF
        # Tainted classes read `global` in one of their own methods.
        tainted = {c for c in self.classes[1:] if self.chance(0.3)}
        self.own_fields: dict[str, list[tuple[str, TypeRepr]]] = {}
        k = 0
        for c in self.classes:
            fs = []
            for _ in range(rng.randint(0, cfg.max_fields)):
                d = rng.choice(self.classes)
                if self.mode is not Mode.CLC1 and cfg.swap and self.chance(0.3):
                    fs.append((f"f{k}", BoxT(d)))
                else:
                    fs.append((f"f{k}", ClassT(d)))
                k += 1
            self.own_fields[c] = fs
        self.globals = [(f"g{i}", rng.choice(self.classes)) for i in range(rng.randint(0, 2))]
        # Intended ocap set: a post-fixpoint of the ocap rule, so it is
        # contained in the checker's greatest fixpoint.
        ocap = set(self.classes) - tainted
        changed = True
        while changed:
            changed = False
            for c in list(ocap):
                sup = self.super[c]
                deps = [sup] if sup != ANYREF else []
                deps += [t.cls if isinstance(t, BoxT) else t.name for _, t in self.own_fields[c]]
                if any(d not in ocap for d in deps):
                    ocap.discard(c)
                    changed = True
        self.ocap = ocap
        self.tainted = tainted
        self.sigs: list[_Sig] = []
        for c in self.classes:
            for _ in range(rng.randint(0, cfg.max_methods)):
                if self.mode is not Mode.CLC1 and cfg.boxes and self.ocap and self.chance(0.35):
                    pt: TypeRepr = BoxT(rng.choice(sorted(self.ocap)))
                elif self.mode is Mode.CLC1 and self.ocap and self.chance(0.25):
                    pt = BoxT(rng.choice(sorted(self.ocap)))
                else:
                    pt = ClassT(rng.choice(self.classes))
                if self.mode is Mode.CLC1 and self.ocap and self.chance(0.2):
                    ret: TypeRepr = BoxT(rng.choice(sorted(self.ocap)))
                else:
                    ret = ClassT(rng.choice(self.classes))
                self.sigs.append(_Sig(c, self.fresh("m"), self.fresh("a"), pt, ret, len(self.sigs)))

    def ancestors(self, c: str) -> list[str]:
        out = []
        while c != ANYREF and c != GLOBAL_CLASS:
            out.append(c)
            c = self.super[c]
        return out

    def is_sub(self, c: str, d: str) -> bool:
        return d == ANYREF or d in self.ancestors(c) or c == d

    def fields(self, c: str) -> list[tuple[str, TypeRepr]]:
        if c == GLOBAL_CLASS:
            return [(g, ClassT(d)) for g, d in self.globals]
        return [f for a in reversed(self.ancestors(c)) for f in self.own_fields[a]]

    def methods(self, c: str) -> list[_Sig]:
        anc = set(self.ancestors(c))
        return [s for s in self.sigs if s.owner in anc]

    def subclasses(self, d: str, pool) -> list[str]:
        return [c for c in pool if self.is_sub(c, d)]

    def has_box_field(self, c: str) -> bool:
        return any(isinstance(t, BoxT) for _, t in self.fields(c))

    def subtype(self, t: TypeRepr, goal: TypeRepr | None) -> bool:
        if goal is None:
            return True
        if isinstance(t, NullT):
            return isinstance(goal, (ClassT, BoxT, NullT, ProcT))
        if isinstance(t, ClassT) and isinstance(goal, ClassT):
            return t.name != GLOBAL_CLASS and goal.name != GLOBAL_CLASS and self.is_sub(t.name, goal.name) \
                or t == goal
        if isinstance(t, BoxT) and isinstance(goal, BoxT):
            return self.is_sub(t.cls, goal.cls)
        return t == goal

    # ------------------------------------------------------------ programs

    def program(self) -> Program:
        if self.cfg.size == 0:
            x = self.fresh()
            return Program((), (), Let(x, Null(), Var(x)), self.mode)
        self.skeleton()
        bodies: dict[str, list[MethodDef]] = {c: [] for c in self.classes}
        for s in self.sigs:
            bodies[s.owner].append(self.method(s))
        classes = tuple(
            ClassDef(c, self.super[c], tuple(self.own_fields[c]), tuple(bodies[c])) for c in self.classes
        )
        ctx = _Ctx({GLOBAL: ClassT(GLOBAL_CLASS)}, frozenset(), False, frozenset({GLOBAL}),
                   len(self.sigs), self.cfg.max_depth)
        main = self.main(ctx)
        return Program(classes, tuple(self.globals), main, self.mode)

    def method(self, s: _Sig) -> MethodDef:
        ocap = s.owner in self.ocap
        vars_: dict[str, TypeRepr] = {THIS: ClassT(s.owner)}
        perms: frozenset[int] = frozenset()
        if isinstance(s.ptype, BoxT) and self.mode is not Mode.CLC1:
            q = self.fresh_q()
            vars_[s.param] = GuardedT(q, s.ptype.cls)
            perms = frozenset({q})
        else:
            vars_[s.param] = s.ptype
        if not ocap:
            vars_[GLOBAL] = ClassT(GLOBAL_CLASS)
        nonnull = frozenset({THIS, GLOBAL})
        ctx = _Ctx(vars_, perms, ocap, nonnull, s.rank, max(2, self.cfg.max_depth // 2), [1])
        prefix: list[tuple[str, object]] = []
        if s.owner in self.tainted:
            g = self.fresh()
            prefix.append((g, Var(GLOBAL)))
            ctx = ctx.bind(g, ClassT(GLOBAL_CLASS), True)
        body = self.term(ctx, s.ret, 2 + self.cfg.size)
        for x, e in reversed(prefix):
            body = Let(x, e, body)
        return MethodDef(s.name, s.param, s.ptype, s.ret, body)

    def main(self, ctx: _Ctx) -> object:
        lets: list[tuple[str, object]] = []
        if self.cfg.procs and self.ocap:
            for _ in range(self.rng.choice((0, 1, 1, 1, 2))):
                x = self.fresh("p")
                e, t = self.proc(ctx)
                lets.append((x, e))
                ctx = ctx.bind(x, t, True)
        body = self.term(ctx, None, 4 + 2 * self.cfg.size, prefer_cont=self.mode is not Mode.CLC1)
        for x, e in reversed(lets):
            body = Let(x, e, body)
        return body

    # ------------------------------------------------------------ terms

    def term(self, ctx: _Ctx, goal: TypeRepr | None, fuel: int, prefer_cont: bool = False) -> object:
        lets: list[tuple[str, object]] = []
        tail = None
        while fuel > 0 and ctx.depth > 0:
            if lets and self.chance(0.08):
                break
            p_cont = 0.45 if prefer_cont else 0.2
            if self.mode is not Mode.CLC1 and self.chance(p_cont):
                tail = self.cont(ctx, fuel)
                if tail is not None:
                    break
            step = self.let_expr(ctx, fuel)
            if step is None:
                break
            for x, e, t, nn in step:
                lets.append((x, e))
                ctx = ctx.bind(x, t, nn)
            fuel -= 1
        if tail is None:
            tail = self.tail(ctx, goal, lets)
        for x, e in reversed(lets):
            tail = Let(x, e, tail)
        return tail

    def tail(self, ctx: _Ctx, goal: TypeRepr | None, lets: list) -> object:
        cands = [x for x, t in ctx.vars.items() if self.subtype(t, goal)]
        if cands and (goal is not None or self.chance(0.8)):
            return Var(self.rng.choice(cands))
        x = self.fresh()
        if isinstance(goal, ClassT) and goal.name in self.newable(ctx) and self.chance(0.5):
            lets.append((x, New(goal.name)))
        else:
            lets.append((x, Null()))
        return Var(x)

    def newable(self, ctx: _Ctx) -> list[str]:
        pool = self.classes
        if ctx.ocap and not self.chance(self.cfg.near_miss):
            pool = [c for c in pool if c in self.ocap]
        if self.mode is not Mode.CLC1:
            pool = [c for c in pool if not self.has_box_field(c)]
        return pool

    def live_boxes(self, ctx: _Ctx) -> list[tuple[str, GuardedT]]:
        return [(x, t) for x, t in ctx.vars.items() if isinstance(t, GuardedT) and t.q in ctx.perms]

    def pick(self, names: list[str], ctx: _Ctx) -> str:
        nn = [x for x in names if x in ctx.nonnull]
        if nn and not self.chance(0.08):
            return self.rng.choice(nn)
        return self.rng.choice(names)

    def let_expr(self, ctx: _Ctx, fuel: int) -> list | None:
        rng = self.rng
        options: list[tuple[int, Callable[[], list | None]]] = []
        cls_vars = [x for x, t in ctx.vars.items() if isinstance(t, ClassT)]

        newable = self.newable(ctx)
        if newable:
            def mk_new():
                c = rng.choice(newable)
                return [(self.fresh(), New(c), ClassT(c), True)]
            options.append((3, mk_new))
        options.append((1, lambda: [(self.fresh(), Null(), NullT(), False)]))

        if ctx.vars:
            def mk_alias():
                y = rng.choice(sorted(ctx.vars))
                return [(self.fresh(), Var(y), ctx.vars[y], y in ctx.nonnull)]
            options.append((1, mk_alias))

        readable = [(x, f, t) for x in cls_vars for f, t in self.fields(ctx.vars[x].name) if isinstance(t, ClassT)]
        if readable:
            def mk_select():
                pick = self._choose_target(readable, ctx)
                if pick is None:
                    return None
                x, f, t = pick
                return [(self.fresh(), Select(x, f), t, False)]
            options.append((2, mk_select))

            def mk_assign():
                pick = self._choose_target(readable, ctx)
                if pick is None:
                    return None
                x, f, t = pick
                srcs = [y for y, yt in ctx.vars.items() if self.subtype(yt, t) and not isinstance(yt, (BoxT, GuardedT))]
                if not srcs:
                    return None
                y = self.pick(srcs, ctx)
                return [(self.fresh(), Assign(x, f, y), t, y in ctx.nonnull)]
            options.append((3, mk_assign))

        callable_ = [(x, s) for x in cls_vars for s in self.methods(ctx.vars[x].name) if s.rank < ctx.rank]
        if callable_ and ctx.budget[0] > 0:
            def mk_invoke():
                pick = self._choose_target(callable_, ctx)
                if pick is None:
                    return None
                x, s = pick
                out = []
                args = [y for y, yt in ctx.vars.items() if self._arg_ok(ctx, yt, s.ptype)]
                if args and self.chance(0.85):
                    y = self.pick(args, ctx)
                else:
                    y = self.fresh()
                    out.append((y, Null(), NullT(), False))
                ctx.budget[0] -= 1
                out.append((self.fresh(), Invoke(x, s.name, y), s.ret, False))
                return out
            options.append((3, mk_invoke))

        if self.mode is Mode.CLC1 and self.cfg.boxes and self.ocap:
            def mk_box():
                c = rng.choice(sorted(self.ocap))
                return [(self.fresh(), BoxExpr(c), BoxT(c), True)]
            options.append((2, mk_box))

        if self.mode is Mode.CLC1:
            openable = [(x, t.cls) for x, t in ctx.vars.items() if isinstance(t, BoxT)]
        else:
            openable = [(x, t.cls) for x, t in self.live_boxes(ctx)]
        if openable and ctx.depth > 1:
            def mk_open():
                pick = self._choose_target(openable, ctx)
                if pick is None:
                    return None
                x, c = pick
                y = self.fresh()
                inner = _Ctx({y: ClassT(c)}, frozenset(), True, frozenset({y}), ctx.rank, ctx.depth - 1, ctx.budget)
                body = self.term(inner, None, max(1, fuel // 2) + 1)
                return [(self.fresh(), Open(x, y, body), ctx.vars[x], x in ctx.nonnull)]
            options.append((4, mk_open))

        if self.cfg.procs and self.ocap and ctx.depth > 1 and self.procs_made < 3:
            def mk_proc():
                e, t = self.proc(ctx)
                return [(self.fresh("p"), e, t, True)]
            options.append((1, mk_proc))

        total = sum(w for w, _ in options)
        for _ in range(4):
            r = rng.random() * total
            for w, mk in options:
                r -= w
                if r < 0:
                    res = mk()
                    if res is not None:
                        return res
                    break
        return None

    def _choose_target(self, items: list[tuple], ctx: _Ctx) -> tuple | None:
        # Possibly-null targets are rare: they end the run at a null redex.
        nn = [it for it in items if it[0] in ctx.nonnull]
        if nn and not self.chance(0.03):
            return self.rng.choice(nn)
        return self.rng.choice(items) if self.chance(0.05) else None

    def _arg_ok(self, ctx: _Ctx, yt: TypeRepr, pt: TypeRepr) -> bool:
        if isinstance(pt, BoxT) and isinstance(yt, GuardedT):
            return yt.q in ctx.perms and self.is_sub(yt.cls, pt.cls)
        if isinstance(yt, GuardedT):
            return False
        return self.subtype(yt, pt)

    def proc(self, ctx: _Ctx) -> tuple[Proc, ProcT]:
        self.procs_made += 1
        c = self.rng.choice(sorted(self.ocap))
        x = self.fresh()
        q = self.fresh_q()
        inner = _Ctx({x: GuardedT(q, c)}, frozenset({q}), True, frozenset({x}), ctx.rank,
                     max(1, ctx.depth - 1), ctx.budget)
        body = self.term(inner, None, 3 + self.cfg.size, prefer_cont=True)
        return Proc(x, c, body), ProcT(c)

    # ------------------------------------------------------------ continuation terms

    def cont(self, ctx: _Ctx, fuel: int) -> object | None:
        if ctx.depth <= 1:
            return None
        rng = self.rng
        live = self.live_boxes(ctx)
        options: list[tuple[int, Callable[[], object | None]]] = []

        if self.cfg.boxes and self.ocap:
            options.append((2 if len(live) < 2 else 1, lambda: self.box_cont(ctx, fuel, live)))

        pairs = [(x, gx, y, gy) for x, gx in live for y, gy in live if x != y and gx.q != gy.q]
        if self.cfg.capture:
            caps = [(x, f, y, gx) for x, gx, y, gy in pairs for f, t in self.fields(gx.cls)
                    if isinstance(t, ClassT) and self.is_sub(gy.cls, t.name)]
            if caps:
                def mk_capture():
                    pick = self._choose_target(caps, ctx)
                    if pick is None:
                        return None
                    x, f, y, gx = pick
                    z = self.fresh()
                    inner = replace(ctx, perms=ctx.perms - {ctx.vars[y].q}).bind(z, gx, x in ctx.nonnull).deeper()
                    return Capture(x, f, y, z, self.term(inner, None, fuel - 1, prefer_cont=True))
                options.append((4, mk_capture))
        if self.cfg.swap:
            swaps = [(x, f, y, t) for x, gx, y, gy in pairs for f, t in self.fields(gx.cls)
                     if isinstance(t, BoxT) and self.is_sub(gy.cls, t.cls)]
            if swaps:
                def mk_swap():
                    pick = self._choose_target(swaps, ctx)
                    if pick is None:
                        return None
                    x, f, y, t = pick
                    z = self.fresh()
                    r = self.fresh_q()
                    inner = replace(ctx, perms=(ctx.perms - {ctx.vars[y].q}) | {r})
                    inner = inner.bind(z, GuardedT(r, t.cls), False).deeper()
                    return Swap(x, f, y, z, self.term(inner, None, fuel - 1, prefer_cont=True))
                options.append((4, mk_swap))
        if self.cfg.procs:
            sends = [(p, y) for p, pt in ctx.vars.items() if isinstance(pt, ProcT)
                     for y, gy in live if self.is_sub(gy.cls, pt.cls)]
            if sends:
                def mk_send():
                    pick = self._choose_target(sends, ctx)
                    if pick is None:
                        return None
                    p, y = pick
                    z = self.fresh()
                    inner = replace(ctx, perms=ctx.perms - {ctx.vars[y].q}).bind(z, ctx.vars[p], True).deeper()
                    return Send(p, y, z, self.term(inner, None, fuel - 1, prefer_cont=True))
                options.append((6, mk_send))
        if not options:
            return None
        total = sum(w for w, _ in options)
        for _ in range(3):
            r = rng.random() * total
            for w, mk in options:
                r -= w
                if r < 0:
                    res = mk()
                    if res is not None:
                        return res
                    break
        return None

    def box_cont(self, ctx: _Ctx, fuel: int, live) -> BoxCont:
        pool = sorted(self.ocap)
        wanted: list[str] = []
        for _, g in live:
            for _, t in self.fields(g.cls):
                d = t.cls if isinstance(t, BoxT) else t.name
                wanted += self.subclasses(d, pool)
        for pt in ctx.vars.values():
            if isinstance(pt, ProcT):
                wanted += self.subclasses(pt.cls, pool)
        c = self.rng.choice(wanted) if wanted and self.chance(0.75) else self.rng.choice(pool)
        x = self.fresh("b")
        q = self.fresh_q()
        inner = replace(ctx, perms=ctx.perms | {q}).bind(x, GuardedT(q, c), True).deeper()
        return BoxCont(c, x, self.term(inner, None, fuel - 1, prefer_cont=True))


def gen_program(cfg: GenConfig) -> Program:
    """A program that typechecks (when ``cfg.near_miss`` is 0); deterministic per seed."""
    return _Gen(cfg).program()


# ---------------------------------------------------------------- shrinking


_TRIVIAL = Let("v_", Null(), Var("v_"))


def _term_variants(t) -> Iterator[object]:
    """Strictly smaller rewrites of ``t``, biggest cuts first."""
    if isinstance(t, Let):
        yield t.body
        if t != _TRIVIAL:
            yield _TRIVIAL
        for e in _expr_variants(t.expr):
            yield Let(t.name, e, t.body)
        for b in _term_variants(t.body):
            yield Let(t.name, t.expr, b)
    elif isinstance(t, (BoxCont, Capture, Swap, Send)):
        yield t.body
        yield _TRIVIAL
        for b in _term_variants(t.body):
            yield replace(t, body=b)


def _expr_variants(e) -> Iterator[object]:
    if isinstance(e, (Open, Proc)):
        if not isinstance(e.body, Var):
            yield replace(e, body=Var(e.var))
        for b in _term_variants(e.body):
            yield replace(e, body=b)
    if not isinstance(e, (Null, Var)):
        yield Null()


def _program_variants(p: Program) -> Iterator[Program]:
    for i in range(len(p.classes)):
        yield replace(p, classes=p.classes[:i] + p.classes[i + 1:])
    for i, c in enumerate(p.classes):
        for j in range(len(c.methods)):
            nc = replace(c, methods=c.methods[:j] + c.methods[j + 1:])
            yield replace(p, classes=p.classes[:i] + (nc,) + p.classes[i + 1:])
        for j in range(len(c.fields)):
            nc = replace(c, fields=c.fields[:j] + c.fields[j + 1:])
            yield replace(p, classes=p.classes[:i] + (nc,) + p.classes[i + 1:])
    for i in range(len(p.globals)):
        yield replace(p, globals=p.globals[:i] + p.globals[i + 1:])
    for m in _term_variants(p.main):
        yield replace(p, main=m)
    for i, c in enumerate(p.classes):
        for j, md in enumerate(c.methods):
            for b in _term_variants(md.body):
                nm = replace(md, body=b)
                nc = replace(c, methods=c.methods[:j] + (nm,) + c.methods[j + 1:])
                yield replace(p, classes=p.classes[:i] + (nc,) + p.classes[i + 1:])


def typechecks(p: Program) -> bool:
    from .classtable import ClassTable, wf_program
    from .parser import program_violations

    if program_violations(p):
        return False
    return wf_program(ClassTable(p), p).ok


def shrink(program: Program, failing: Callable[[Program], bool], max_rounds: int = 500) -> Program:
    """Greedy structural minimization preserving typability and ``failing``.

    Returns the input unchanged if it does not fail.
    """
    if not failing(program):
        return program
    cur = program
    for _ in range(max_rounds):
        for cand in _program_variants(cur):
            if typechecks(cand) and failing(cand):
                cur = cand
                break
        else:
            return cur
    return cur
