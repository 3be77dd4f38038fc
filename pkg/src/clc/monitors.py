"""Runtime monitors: executable well-formedness judgements over machine states.

Every judgement returns a :class:`JudgementReport`.  The functions are pure
over the heap and stacks they are given, so they can also be applied to
hand-built ("surgically" broken) states.

``reach`` is reflexive and follows object field edges only; process
records have no outgoing edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .classtable import ClassTable
from .machine import BoxRef, Frame, Machine, Obj, ObjRef, ProcRecord, TraceEntry, Value
from .syntax import GLOBAL, BoxT, ClassT, GuardedT, Let, Mode, NullT, ProcT, TypeRepr
from .typecheck import Effect, Typing

Heap = Mapping[int, object]


class MonitorError(Exception):
    """A monitor was applied outside its precondition (e.g. unknown identifier)."""


# ---------------------------------------------------------------- reports


@dataclass
class JudgementReport:
    judgement: str
    holds: bool = True
    witnesses: list = field(default_factory=list)
    parts: list[JudgementReport] = field(default_factory=list)

    @classmethod
    def of(cls, judgement: str, witnesses: Iterable) -> JudgementReport:
        ws = list(witnesses)
        return cls(judgement, not ws, ws)

    @classmethod
    def all(cls, judgement: str, parts: Iterable[JudgementReport]) -> JudgementReport:
        ps = list(parts)
        return cls(judgement, all(p.holds for p in ps), [], ps)

    def failures(self) -> list[JudgementReport]:
        """Failing leaf judgements."""
        if self.holds:
            return []
        if not self.parts:
            return [self]
        return [f for p in self.parts for f in p.failures()]

    def failing_names(self) -> set[str]:
        return {f.judgement for f in self.failures()}

    def render_text(self, indent: int = 0) -> str:
        pad = "  " * indent
        line = f"{pad}{self.judgement}: {'ok' if self.holds else 'FAILED'}"
        lines = [line] + [f"{pad}  witness {_show(w)}" for w in self.witnesses]
        lines += [p.render_text(indent + 1) for p in self.parts if not p.holds]
        return "\n".join(lines)

    def to_record(self) -> dict:
        return {
            "judgement": self.judgement,
            "holds": self.holds,
            "witnesses": [_show(w) for w in self.witnesses],
            "parts": [p.to_record() for p in self.parts if not p.holds],
        }

    def __str__(self) -> str:
        if self.holds:
            return f"{self.judgement}: ok"
        return "; ".join(f"{f.judgement}: {', '.join(_show(w) for w in f.witnesses[:3])}" for f in self.failures())


def _show(w) -> str:
    if isinstance(w, tuple):
        return "(" + ", ".join(_show(x) for x in w) + ")"
    return str(w)


# ---------------------------------------------------------------- reachability


def _edges(heap: Heap, o: int) -> Iterable[int]:
    e = heap[o]
    if isinstance(e, Obj):
        return [v for v in e.fields.values() if v is not None]
    return ()


def all_reachable(heap: Heap, o: int) -> frozenset[int]:
    if o not in heap:
        raise MonitorError(f"unknown object o{o}")
    seen = {o}
    todo = [o]
    while todo:
        for n in _edges(heap, todo.pop()):
            if n not in seen:
                if n not in heap:
                    raise MonitorError(f"dangling reference o{n}")
                seen.add(n)
                todo.append(n)
    return frozenset(seen)


def reach(heap: Heap, o: int, o2: int) -> bool:
    if o2 not in heap:
        raise MonitorError(f"unknown object o{o2}")
    return o2 in all_reachable(heap, o)


def sep(heap: Heap, o: int, o2: int) -> bool:
    return not (all_reachable(heap, o) & all_reachable(heap, o2))


def _reach_avoiding(heap: Heap, o: int, cut: tuple[int, int]) -> set[int]:
    seen = {o}
    todo = [o]
    while todo:
        n = todo.pop()
        for m in _edges(heap, n):
            if (n, m) == cut or m in seen:
                continue
            seen.add(m)
            todo.append(m)
    return seen


def domedge(heap: Heap, o_hat: int, f: str, o: int, o2: int) -> bool:
    """Every simple path from ``o`` to ``o2`` steps from ``o_hat`` to ``FM(f)``.

    Decided by cut reachability: no path avoids the step iff ``o2`` is
    unreachable once the step ``o_hat → FM(f)`` is removed.
    """
    for x in (o_hat, o, o2):
        if x not in heap:
            raise MonitorError(f"unknown object o{x}")
    e = heap[o_hat]
    if not isinstance(e, Obj) or f not in e.fields:
        raise MonitorError(f"o{o_hat} has no field '{f}'")
    target = e.fields[f]
    cut = (o_hat, target) if target is not None else (-1, -1)
    return o2 not in _reach_avoiding(heap, o, cut)


class _Ctx:
    """Shared caches for one validation pass over a fixed heap."""

    def __init__(self, ct: ClassTable, heap: Heap, og: int | None = None):
        self.ct = ct
        self.heap = heap
        self.og = og
        self.mode = ct.mode
        self._reach: dict[int, frozenset[int]] = {}
        self._ocap: dict[str, bool] = {}

    def reach(self, o: int) -> frozenset[int]:
        r = self._reach.get(o)
        if r is None:
            r = self._reach[o] = all_reachable(self.heap, o)
        return r

    def sep(self, a: int, b: int) -> bool:
        return self.reach(a).isdisjoint(self.reach(b))

    def typeof(self, o: int) -> TypeRepr:
        e = self.heap[o]
        return ClassT(e.cls) if isinstance(e, Obj) else ProcT(e.msg_type)

    def ocap_obj(self, o: int) -> bool:
        e = self.heap[o]
        if isinstance(e, ProcRecord):
            return True
        v = self._ocap.get(e.cls)
        if v is None:
            v = self._ocap[e.cls] = self.ct.is_ocap(e.cls)
        return v


# ---------------------------------------------------------------- heap


def heap_well_typed(ct: ClassTable, heap: Heap) -> JudgementReport:
    ws = []
    for o in sorted(heap):
        e = heap[o]
        if isinstance(e, ProcRecord):
            ws += [(f"o{o}", "inbox", f"o{q}") for q in e.inbox if q not in heap]
            continue
        declared = ct.field_names(e.cls) if ct.is_class(e.cls) else None
        if declared is None or tuple(e.fields) != tuple(declared):
            ws.append((f"o{o}", "dom(FM) ≠ fields", e.cls))
            continue
        for f, v in e.fields.items():
            if v is None:
                continue
            if v not in heap or not isinstance(heap[v], Obj):
                ws.append((f"o{o}", f, "dangling"))
                continue
            ft = ct.ftype(e.cls, f)
            want = ft.cls if isinstance(ft, BoxT) else ft.name
            if not ct.is_subclass(heap[v].cls, want):
                ws.append((f"o{o}", f, f"{heap[v].cls} ⋬ {want}"))
    return JudgementReport.of("heap_well_typed", ws)


# ---------------------------------------------------------------- frames


def _boxes(f: Frame) -> list[tuple[str, BoxRef]]:
    return [(x, v) for x, v in f.env.items() if isinstance(v, BoxRef)]


def _objs(f: Frame, ocap_frame: bool, og: int | None) -> list[tuple[str, int]]:
    # Under the ocap effect the L0 binding of `global` is dead: receivers
    # there are ocap, so their methods never read it.
    return [(x, v.o) for x, v in f.env.items()
            if isinstance(v, ObjRef) and not (ocap_frame and x == GLOBAL and v.o == og)]


def _live(ctx: _Ctx, f: Frame, b: BoxRef) -> bool:
    return ctx.mode is Mode.CLC1 or b.p in f.perms


def _frame_ok(ctx: _Ctx, effect: Effect, f: Frame) -> JudgementReport:
    boxes = _boxes(f)
    ocap_frame = effect is Effect.OCAP
    objs = _objs(f, ocap_frame, ctx.og)
    parts = []

    ws = []
    for i, (x, b) in enumerate(boxes):
        for y, b2 in boxes[i + 1:]:
            if ctx.mode is Mode.CLC1:
                related = b.o != b2.o
            else:
                related = b.p != b2.p and b.p in f.perms and b2.p in f.perms
            if related and not ctx.sep(b.o, b2.o):
                ws.append((x, y, f"o{b.o}", f"o{b2.o}"))
    parts.append(JudgementReport.of("boxSep", ws))

    ws = [(x, y, f"o{b.o}", f"o{o}") for x, b in boxes for y, o in objs if not ctx.sep(b.o, o)]
    parts.append(JudgementReport.of("boxObjSep", ws))

    ws = [(x, f"o{o2}", ctx.typeof(o2)) for x, b in boxes if _live(ctx, f, b)
          for o2 in sorted(ctx.reach(b.o)) if not ctx.ocap_obj(o2)]
    parts.append(JudgementReport.of("boxOcap", ws))

    if ocap_frame:
        ws = []
        for x, o in objs:
            if not ctx.ocap_obj(o):
                ws.append((x, f"o{o}", f"{ctx.typeof(o)} not ocap"))
            if ctx.og is not None and not ctx.sep(o, ctx.og):
                ws.append((x, f"o{o}", "reaches globals"))
        parts.append(JudgementReport.of("globalOcapSep", ws))

    if ctx.mode is not Mode.CLC1:
        parts.append(JudgementReport.of("fieldUniqueness", _field_uniqueness(ctx, f, boxes)))
    return JudgementReport.all("F-ok", parts)


def _field_uniqueness(ctx: _Ctx, f: Frame, boxes) -> list:
    ws = []
    for x, b in boxes:
        if b.p not in f.perms:
            continue
        for oh in sorted(ctx.reach(b.o)):
            e = ctx.heap[oh]
            if not isinstance(e, Obj):
                continue
            for fname, target in e.fields.items():
                if target is None or not isinstance(ctx.ct.ftype(e.cls, fname), BoxT):
                    continue
                around = _reach_avoiding(ctx.heap, b.o, (oh, target))
                for o2 in sorted(ctx.reach(target) & around):
                    ws.append((x, f"o{oh}.{fname}", f"o{o2}"))
    return ws


def frame_ok(ct: ClassTable, heap: Heap, effect: Effect, frame: Frame, og: int | None = None) -> JudgementReport:
    return _frame_ok(_Ctx(ct, heap, og), effect, frame)


# ---------------------------------------------------------------- stacks


def stack_effects(stack: tuple, base: Effect) -> list[Effect]:
    """Effect each frame is checked under, threaded up from the bottom frame."""
    out = [base] * len(stack)
    a = base
    for i in range(len(stack) - 1, -1, -1):
        if i < len(stack) - 1 and (a is Effect.OCAP or stack[i].label is None):
            a = Effect.OCAP
        out[i] = a
    return out


def _roots(ctx: _Ctx, frames) -> list[tuple[int, int | None]]:
    return [(b.o, b.p) for fr in frames for _, b in _boxes(fr) if _live(ctx, fr, b)]


def _openboxes(ctx: _Ctx, f: Frame, below) -> set[int]:
    objs = [v.o for v in f.env.values() if isinstance(v, ObjRef)]
    return {o for o, _ in _roots(ctx, below) if any(x in ctx.reach(o) for x in objs)}


def _stack_ok(ctx: _Ctx, base: Effect, stack: tuple) -> JudgementReport:
    effects = stack_effects(stack, base)
    parts = []
    for i, (f, eff) in enumerate(zip(stack, effects)):
        r = _frame_ok(ctx, eff, f)
        r.judgement = f"F-ok[frame {i}, {eff}]"
        parts.append(r)
    for i in range(len(stack) - 1):
        f, below = stack[i], stack[i + 1:]
        ws = []
        for o, p in _roots(ctx, (f,)):
            for o2, p2 in _roots(ctx, below):
                related = o != o2 if ctx.mode is Mode.CLC1 else p != p2
                if related and not ctx.sep(o, o2):
                    ws.append((i, f"o{o}", f"o{o2}"))
        parts.append(JudgementReport.of("boxSeparation", ws))
        opened = _openboxes(ctx, f, below)
        parts.append(JudgementReport.of("uniqueOpenBox", [(i, *sorted(f"o{o}" for o in opened))] if len(opened) > 1 else []))
        if f.label is not None:
            lost = opened - _openboxes(ctx, below[0], below[1:])
            parts.append(JudgementReport.of("openBoxPropagation", [(i, f"o{o}") for o in sorted(lost)]))
    return JudgementReport.all("FS-ok", parts)


def stack_ok(ct: ClassTable, heap: Heap, effect: Effect, stack: tuple, og: int | None = None) -> JudgementReport:
    return _stack_ok(_Ctx(ct, heap, og), effect, stack)


def box_roots(ct: ClassTable, stack: tuple) -> set[int]:
    """Entry objects of boxes held with an available permission anywhere in the stack."""
    return {b.o for f in stack for _, b in _boxes(f) if ct.mode is Mode.CLC1 or b.p in f.perms}


# ---------------------------------------------------------------- frame typing


def _wf_var(ctx: _Ctx, v: Value, t: TypeRepr) -> str | None:
    if v is None:
        return None
    if isinstance(v, ObjRef):
        if v.o not in ctx.heap:
            return "dangling"
        vt = ctx.typeof(v.o)
        return None if ctx.ct.subtype(vt, t) else f"{vt} ⋬ {t}"
    if v.o not in ctx.heap:
        return "dangling"
    vt = ctx.typeof(v.o)
    if isinstance(t, GuardedT) or (isinstance(t, BoxT) and ctx.mode is Mode.CLC1):
        return None if ctx.ct.subtype(vt, ClassT(t.cls)) else f"box of {vt} ⋬ {t}"
    return f"box reference where {t} expected"


def _frame_typing(ctx: _Ctx, f: Frame, static, skip: str | None) -> list:
    """WF-Env, WF-Var and WF-Perm of one frame against one recorded Γ."""
    env, _ = static
    ws = []
    gamma: dict[int, int] = {}
    for x, t in env.vars.items():
        if x == skip:
            continue
        if x not in f.env:
            ws.append(("WF-Env", x, "unbound at runtime"))
            continue
        bad = _wf_var(ctx, f.env[x], t)
        if bad:
            ws.append(("WF-Var", x, bad))
        v = f.env[x]
        if isinstance(t, GuardedT) and isinstance(v, BoxRef) and t.q in env.perms:
            if v.p not in f.perms:
                ws.append(("WF-Perm", x, f"p{v.p} ∉ P"))
            elif gamma.setdefault(t.q, v.p) != v.p:
                ws.append(("WF-Perm", x, f"Q{t.q} ↦ p{gamma[t.q]} and p{v.p}"))
    seen: dict[int, int] = {}
    for q, p in sorted(gamma.items()):
        if p in seen:
            ws.append(("WF-Perm", f"Q{seen[p]}", f"Q{q}", f"both ↦ p{p}"))
        seen[p] = q
    return ws


def _statics(typing: Typing, term) -> list:
    found = typing.lookup_all(term)
    if not found and isinstance(term, Let) and term.origin is not None:
        found = typing.lookup_all(term.origin)
    return found


def _frame_typing_stack(ctx: _Ctx, typing: Typing, stack: tuple) -> JudgementReport:
    parts = []
    callee_sigma: TypeRepr | None = None
    label: str | None = None
    for i, f in enumerate(stack):
        statics = _statics(typing, f.term)
        if not statics:
            parts.append(JudgementReport.of("T-Frame", [(i, "term has no static typing")]))
            callee_sigma, label = None, f.label
            continue
        best = None
        for st in statics:
            ws = _frame_typing(ctx, f, st, label)
            if label is not None and callee_sigma is not None:
                want = st[0].lookup(label)
                if want is None or not ctx.ct.subtype(callee_sigma, want):
                    ws.append(("T-FS-A", label, f"callee type {callee_sigma} ⋬ {want}"))
            if best is None or len(ws) < len(best[1]):
                best = (st, ws)
            if not ws:
                break
        st, ws = best
        parts.append(JudgementReport.of(f"T-Frame[frame {i}]", [(i, *w) for w in ws]))
        callee_sigma, label = st[1], f.label
    return JudgementReport.all("frame_typing", parts)


def frame_typing(ct: ClassTable, heap: Heap, stack: tuple, typing: Typing) -> JudgementReport:
    return _frame_typing_stack(_Ctx(ct, heap), typing, stack)


# ---------------------------------------------------------------- isolation


def _acc_roots(ctx: _Ctx, stack: tuple, base: Effect) -> set[int]:
    out: set[int] = set()
    for f, eff in zip(stack, stack_effects(stack, base)):
        out.update(o for _, o in _objs(f, eff is Effect.OCAP, ctx.og))
        out.update(b.o for _, b in _boxes(f) if b.p is None or b.p in f.perms)
    return out


def _base(m: Machine, pid: int) -> Effect:
    return Effect.OCAP if m.base_ocap.get(pid) else Effect.EPS


def _isolated(ctx: _Ctx, m: Machine, a: int, b: int) -> list:
    ws = []
    ra = _acc_roots(ctx, m.procs[a], _base(m, a))
    rb = _acc_roots(ctx, m.procs[b], _base(m, b))
    ws += [("Iso-FS", f"o{x}", f"o{y}") for x in sorted(ra) for y in sorted(rb) if not ctx.sep(x, y)]
    ma = m.heap[a].inbox if isinstance(m.heap.get(a), ProcRecord) else []
    mb = m.heap[b].inbox if isinstance(m.heap.get(b), ProcRecord) else []
    ws += [("Iso-Proc", f"o{x}", f"o{y}") for x in ma for y in mb if not ctx.sep(x, y)]
    return ws


def isolated(m: Machine, pid1: int, pid2: int) -> bool:
    return not _isolated(_Ctx(m.ct, m.heap, m.og), m, pid1, pid2)


def _all_isolated(ctx: _Ctx, m: Machine) -> JudgementReport:
    pids = list(m.procs)
    ws = []
    for i, a in enumerate(pids):
        for b in pids[i + 1:]:
            ws += [(a, b, *w) for w in _isolated(ctx, m, a, b)]
    return JudgementReport.of("isolated", ws)


def all_isolated(m: Machine) -> JudgementReport:
    return _all_isolated(_Ctx(m.ct, m.heap, m.og), m)


# ---------------------------------------------------------------- whole machine


def validate_machine(ct: ClassTable, m: Machine, typing: Typing | None = None) -> JudgementReport:
    """Conjunction of every judgement; reports all failures."""
    ctx = _Ctx(ct, m.heap, m.og)
    parts = [heap_well_typed(ct, m.heap)]
    for pid, stack in m.procs.items():
        r = _stack_ok(ctx, _base(m, pid), stack)
        r.judgement = f"FS-ok[pid {pid}]"
        parts.append(r)
        if typing is not None:
            r = _frame_typing_stack(ctx, typing, stack)
            r.judgement = f"frame_typing[pid {pid}]"
            parts.append(r)
    if m.mode is Mode.CLC3:
        parts.append(_all_isolated(ctx, m))
    return JudgementReport.all("validate_machine", parts)


def make_monitor(ct: ClassTable, typing: Typing | None):
    """Run-loop hook: None while every judgement holds, else the failing report."""

    def monitor(m: Machine, _event) -> JudgementReport | None:
        r = validate_machine(ct, m, typing)
        return None if r.holds else r

    return monitor


def heap_separation_corollary(trace: list[TraceEntry], states: Mapping[int, Machine]) -> JudgementReport:
    """Objects inside a box are mutated only while some frame binds the box's entry object.

    ``states`` maps the step index of each E-Assign to the machine just
    before that step.
    """
    ws = []
    for e in trace:
        if e.rule != "E-Assign":
            continue
        m = states.get(e.step)
        if m is None:
            ws.append((e.step, "missing pre-state"))
            continue
        stack = m.procs[e.pid]
        top = stack[0]
        tgt = top.env.get(top.term.expr.target)
        if not isinstance(tgt, ObjRef):
            continue
        ctx = _Ctx(m.ct, m.heap)
        bound = {v.o for f in stack for v in f.env.values() if isinstance(v, ObjRef)}
        for o in sorted(box_roots(m.ct, stack)):
            if tgt.o in ctx.reach(o) and o not in bound:
                ws.append((e.step, f"o{tgt.o}", f"inside closed box o{o}"))
    return JudgementReport.of("HeapSeparation", ws)
