"""Small-step abstract machine: frames, frame stacks, and a process soup.

A machine holds one heap shared by all processes.  Each process is a frame
stack (top first); a frame is an environment, a term, a set of available
dynamic permissions, and a return label.  Processes are interleaved by a
seeded scheduler, never by host threads.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

from . import mutations
from .classtable import ClassTable
from .syntax import (
    ANYREF,
    GLOBAL,
    GLOBAL_CLASS,
    THIS,
    Assign,
    BoxCont,
    BoxExpr,
    Capture,
    Invoke,
    Let,
    Mode,
    New,
    Null,
    Open,
    Proc,
    Program,
    Select,
    Send,
    Span,
    Swap,
    Var,
)

# ---------------------------------------------------------------- runtime values


@dataclass(frozen=True, slots=True)
class ObjRef:
    o: int

    def __str__(self) -> str:
        return f"o{self.o}"


@dataclass(frozen=True, slots=True)
class BoxRef:
    o: int
    p: int | None  # None in CLC1, which has no permissions

    def __str__(self) -> str:
        return f"b(o{self.o})" if self.p is None else f"b(o{self.o}, p{self.p})"


Value = Union[None, ObjRef, BoxRef]


def show_value(v: Value) -> str:
    return "null" if v is None else str(v)


@dataclass(slots=True)
class Obj:
    cls: str
    fields: dict[str, int | None]


@dataclass(slots=True)
class ProcRecord:
    msg_type: str
    inbox: list[int]
    param: str | None
    body: object | None


HeapEntry = Union[Obj, ProcRecord]


@dataclass(frozen=True, slots=True)
class Frame:
    env: Mapping[str, Value]
    term: object
    perms: frozenset[int]
    label: str | None  # None is the empty annotation ε

    def bind(self, x: str, v: Value) -> dict[str, Value]:
        d = dict(self.env)
        d[x] = v
        return d


Stack = tuple  # tuple[Frame, ...], top first

# ---------------------------------------------------------------- outcomes

BENIGN = frozenset({"NullDereference"})
ALARMS = frozenset({"MissingPermission", "BoxOpaque", "NotABox", "NoMethod", "NoField", "NotAProcess", "Deadlock"})


@dataclass(frozen=True)
class Stuck:
    reason: str
    rule: str  # rule whose premise failed, or the redex form
    message: str
    span: Span | None = None

    @property
    def alarm(self) -> bool:
        return self.reason not in BENIGN


@dataclass(frozen=True)
class StepResult:
    rule: str
    span: Span | None


@dataclass(frozen=True)
class TraceEntry:
    step: int
    pid: int | None
    rule: str
    redex: str | None

    def to_record(self) -> dict:
        return {"step": self.step, "pid": self.pid, "rule": self.rule, "redex": self.redex}


# ---------------------------------------------------------------- the machine


class Machine:
    def __init__(self, ct: ClassTable, mode: Mode, seed: int = 0, scheduler: str = "random"):
        self.ct = ct
        self.mode = mode
        self.heap: dict[int, HeapEntry] = {}
        self.procs: dict[int, Stack] = {}
        self.main_pid = -1
        self.og = -1
        self.next_o = 0
        self.next_p = 0
        self.steps = 0
        self.seed = seed
        self.scheduler = scheduler
        self.rng = random.Random(seed)
        self._rr = -1
        self.alloc_log: list[tuple[str, int]] = []
        # Base effect a process's bottom frame is checked under.
        self.base_ocap: dict[int, bool] = {}

    # -- allocation

    def fresh_o(self) -> int:
        o = self.next_o
        self.next_o += 1
        self.alloc_log.append(("o", o))
        return o

    def fresh_p(self) -> int:
        p = self.next_p
        self.next_p += 1
        self.alloc_log.append(("p", p))
        return p

    def new_object(self, cls: str) -> int:
        o = self.fresh_o()
        names = () if cls == ANYREF else self.ct.field_names(cls)
        self.heap[o] = Obj(cls, {f: None for f in names})
        return o

    def clone(self) -> Machine:
        m = Machine.__new__(Machine)
        m.__dict__.update(self.__dict__)
        m.heap = {
            o: Obj(e.cls, dict(e.fields)) if isinstance(e, Obj) else ProcRecord(e.msg_type, list(e.inbox), e.param, e.body)
            for o, e in self.heap.items()
        }
        m.procs = dict(self.procs)
        m.rng = random.Random()
        m.rng.setstate(self.rng.getstate())
        m.alloc_log = list(self.alloc_log)
        m.base_ocap = dict(self.base_ocap)
        return m

    # -- observation

    def typeof(self, o: int) -> str:
        e = self.heap[o]
        return e.cls if isinstance(e, Obj) else e.msg_type

    def is_idle(self, pid: int) -> bool:
        st = self.procs[pid]
        return not st or (len(st) == 1 and isinstance(st[0].term, Var))

    def dump(self) -> dict:
        """Deterministic structural snapshot (for heap dumps and determinism checks)."""
        heap = {}
        for o in sorted(self.heap):
            e = self.heap[o]
            if isinstance(e, Obj):
                heap[str(o)] = {"class": e.cls, "fields": {f: v for f, v in e.fields.items()}}
            else:
                heap[str(o)] = {"process": e.msg_type, "inbox": list(e.inbox)}
        procs = {}
        for pid, st in self.procs.items():
            procs[str(pid)] = [
                {
                    "env": {k: show_value(v) for k, v in f.env.items()},
                    "perms": sorted(f.perms),
                    "label": f.label,
                    "term": type(f.term).__name__,
                    "at": str(getattr(f.term, "span", None) or ""),
                }
                for f in st
            ]
        return {"step": self.steps, "heap": heap, "procs": procs}


def init_machine(ct: ClassTable, p: Program, seed: int = 0, scheduler: str = "random") -> Machine:
    """H₀ = {o_g ↦ ⟨C_g, all globals null⟩}, one process running ⟨{global ↦ o_g}, main⟩."""
    m = Machine(ct, p.mode, seed, scheduler)
    m.og = m.new_object(GLOBAL_CLASS)
    pid = m.fresh_o()
    if p.mode is Mode.CLC3:
        m.heap[pid] = ProcRecord(ANYREF, [], None, None)
    m.main_pid = pid
    m.procs[pid] = (Frame({GLOBAL: ObjRef(m.og)}, p.main, frozenset(), None),)
    m.base_ocap[pid] = False
    return m


# ---------------------------------------------------------------- frame steps


def _stuck(reason: str, rule: str, msg: str, node) -> Stuck:
    return Stuck(reason, rule, msg, getattr(node, "span", None))


def _deref(m: Machine, v: Value, node, rule: str) -> Obj | Stuck:
    if v is None:
        return _stuck("NullDereference", rule, "receiver is null", node)
    if isinstance(v, BoxRef):
        return _stuck("BoxOpaque", rule, f"{v} can only be accessed through open", node)
    e = m.heap[v.o]
    if not isinstance(e, Obj):
        return _stuck("NoField", rule, f"{v} is a process", node)
    return e


def step_frame(m: Machine, f: Frame) -> tuple[Frame, str] | Stuck:
    """One single-frame rule (E-Null ... E-New, CLC1 E-Box). Mutates the heap."""
    t = f.term
    e = t.expr
    x = t.name
    if isinstance(e, Null):
        return Frame(f.bind(x, None), t.body, f.perms, f.label), "E-Null"
    if isinstance(e, Var):
        if e.name not in f.env:
            return _stuck("NoField", "E-Var", f"unbound variable '{e.name}'", e)
        return Frame(f.bind(x, f.env[e.name]), t.body, f.perms, f.label), "E-Var"
    if isinstance(e, Select):
        obj = _deref(m, f.env.get(e.target), e, "E-Select")
        if isinstance(obj, Stuck):
            return obj
        if e.field not in obj.fields:
            return _stuck("NoField", "E-Select", f"no field '{e.field}' in {obj.cls}", e)
        v = obj.fields[e.field]
        val = None if v is None else ObjRef(v)
        return Frame(f.bind(x, val), t.body, f.perms, f.label), "E-Select"
    if isinstance(e, Assign):
        obj = _deref(m, f.env.get(e.target), e, "E-Assign")
        if isinstance(obj, Stuck):
            return obj
        if e.field not in obj.fields:
            return _stuck("NoField", "E-Assign", f"no field '{e.field}' in {obj.cls}", e)
        src = f.env.get(e.source)
        if isinstance(src, BoxRef):
            obj.fields[e.field] = src.o
        else:
            obj.fields[e.field] = None if src is None else src.o
        rewritten = Let(x, Var(e.source, span=e.span), t.body, span=t.span, origin=t)
        return Frame(f.env, rewritten, f.perms, f.label), "E-Assign"
    if isinstance(e, New):
        o = m.new_object(e.cls)
        return Frame(f.bind(x, ObjRef(o)), t.body, f.perms, f.label), "E-New"
    if isinstance(e, BoxExpr):
        o = m.new_object(e.cls)
        return Frame(f.bind(x, BoxRef(o, None)), t.body, f.perms, f.label), "E-Box"
    raise AssertionError(f"not a frame redex: {type(e).__name__}")


# ---------------------------------------------------------------- stack steps


def _need_box(v: Value, node, rule: str) -> BoxRef | Stuck:
    if v is None:
        return _stuck("NullDereference", rule, "box reference is null", node)
    if not isinstance(v, BoxRef):
        return _stuck("NotABox", rule, f"{v} is not a box", node)
    return v


def _need_perm(m: Machine, b: BoxRef, perms: frozenset[int], node, rule: str) -> Stuck | None:
    if m.mode is Mode.CLC1 or b.p in perms:
        return None
    return _stuck("MissingPermission", rule, f"permission p{b.p} of {b} is not available", node)


def step_stack(m: Machine, pid: int) -> StepResult | Stuck | None:
    """One frame-stack transition of process ``pid``; None when terminal.

    Mutates ``m``.  E-Proc is dispatched here too, since its redex is the
    top frame of the spawning process.
    """
    stack = m.procs[pid]
    if not stack:
        return None
    top = stack[0]
    t = top.term
    rest = stack[1:]

    if isinstance(t, Var):
        if not rest:
            return None
        v = top.env.get(t.name)
        caller = rest[0]
        if top.label is not None:
            caller = Frame(caller.bind(top.label, v), caller.term, caller.perms, caller.label)
            rule = "E-Return1"
        else:
            rule = "E-Return2"
        m.procs[pid] = (caller,) + rest[1:]
        return StepResult(rule, t.span)

    if isinstance(t, Let):
        e = t.expr
        if isinstance(e, Invoke):
            return _invoke(m, pid, top, rest)
        if isinstance(e, Open):
            return _open(m, pid, top, rest)
        if isinstance(e, Proc):
            return _proc(m, pid, top, rest)
        res = step_frame(m, top)
        if isinstance(res, Stuck):
            return res
        nf, rule = res
        m.procs[pid] = (nf,) + rest
        return StepResult(rule, e.span)

    if isinstance(t, BoxCont):
        o = m.new_object(t.cls)
        p = m.fresh_p()
        nf = Frame(top.bind(t.var, BoxRef(o, p)), t.body, top.perms | {p}, None)
        keep = rest if mutations.active("keep-stack-after-box") else ()
        m.procs[pid] = (nf,) + keep
        return StepResult("E-Box", t.span)

    if isinstance(t, (Capture, Swap)):
        rule = "E-Capture" if isinstance(t, Capture) else "E-Swap"
        bx = _need_box(top.env.get(t.target), t, rule)
        if isinstance(bx, Stuck):
            return bx
        by = _need_box(top.env.get(t.source), t, rule)
        if isinstance(by, Stuck):
            return by
        for b in (bx, by):
            s = _need_perm(m, b, top.perms, t, rule)
            if s:
                return s
        obj = m.heap[bx.o]
        if not isinstance(obj, Obj) or t.field not in obj.fields:
            return _stuck("NoField", rule, f"no field '{t.field}'", t)
        if isinstance(t, Capture):
            obj.fields[t.field] = by.o
            perms = top.perms if mutations.active("capture-keeps-permission") else top.perms - {by.p}
            nf = Frame(top.bind(t.var, bx), t.body, perms, None)
        else:
            old = obj.fields[t.field]
            obj.fields[t.field] = by.o
            p2 = m.fresh_p()
            nv = None if old is None else BoxRef(old, p2)
            nf = Frame(top.bind(t.var, nv), t.body, (top.perms - {by.p}) | {p2}, None)
        m.procs[pid] = (nf,)
        return StepResult(rule, t.span)

    if isinstance(t, Send):
        pv = top.env.get(t.proc)
        if pv is None:
            return _stuck("NullDereference", "E-Send", "process reference is null", t)
        if not isinstance(pv, ObjRef) or not isinstance(m.heap.get(pv.o), ProcRecord):
            return _stuck("NotAProcess", "E-Send", f"{show_value(pv)} is not a process", t)
        by = _need_box(top.env.get(t.msg), t, "E-Send")
        if isinstance(by, Stuck):
            return by
        s = _need_perm(m, by, top.perms, t, "E-Send")
        if s:
            return s
        m.heap[pv.o].inbox.append(by.o)
        perms = top.perms if mutations.active("send-keeps-permission") else top.perms - {by.p}
        m.procs[pid] = (Frame(top.bind(t.var, pv), t.body, perms, None),)
        return StepResult("E-Send", t.span)

    raise AssertionError(f"unexpected term {type(t).__name__}")


def _invoke(m: Machine, pid: int, top: Frame, rest) -> StepResult | Stuck:
    t = top.term
    e = t.expr
    recv = top.env.get(e.target)
    if recv is None:
        return _stuck("NullDereference", "E-Invoke", "receiver is null", e)
    if isinstance(recv, BoxRef):
        return _stuck("BoxOpaque", "E-Invoke", f"{recv} can only be accessed through open", e)
    entry = m.heap[recv.o]
    if not isinstance(entry, Obj):
        return _stuck("NoMethod", "E-Invoke", "receiver is a process", e)
    body = m.ct.mbody(entry.cls, e.method)
    if body is None:
        return _stuck("NoMethod", "E-Invoke", f"class '{entry.cls}' has no method '{e.method}'", e)
    param, mt = body
    arg = top.env.get(e.arg)
    callee_perms: frozenset[int] = frozenset()
    if isinstance(arg, BoxRef) and m.mode is not Mode.CLC1:
        s = _need_perm(m, arg, top.perms, e, "E-Invoke")
        if s:
            return s
        callee_perms = frozenset({arg.p})
    env = {GLOBAL: ObjRef(m.og), THIS: recv, param: arg}
    callee = Frame(env, mt, callee_perms, t.name)
    caller = Frame(top.env, t.body, top.perms, top.label)
    m.procs[pid] = (callee, caller) + rest
    return StepResult("E-Invoke", e.span)


def _open(m: Machine, pid: int, top: Frame, rest) -> StepResult | Stuck:
    t = top.term
    e = t.expr
    b = _need_box(top.env.get(e.target), e, "E-Open")
    if isinstance(b, Stuck):
        return b
    if not mutations.active("open-without-permission"):
        s = _need_perm(m, b, top.perms, e, "E-Open")
        if s:
            return s
    inner = Frame({e.var: ObjRef(b.o)}, e.body, frozenset(), None)
    caller = Frame(top.bind(t.name, b), t.body, top.perms, top.label)
    m.procs[pid] = (inner, caller) + rest
    return StepResult("E-Open", e.span)


def _proc(m: Machine, pid: int, top: Frame, rest) -> StepResult:
    t = top.term
    e = t.expr
    o = m.fresh_o()
    m.heap[o] = ProcRecord(e.cls, [], e.var, e.body)
    m.procs[o] = ()
    m.base_ocap[o] = True
    m.procs[pid] = (Frame(top.bind(t.name, ObjRef(o)), t.body, top.perms, top.label),) + rest
    return StepResult("E-Proc", e.span)


def receive(m: Machine, pid: int) -> StepResult:
    """E-Receive: take the oldest message and start the handler on it."""
    rec = m.heap[pid]
    o = rec.inbox.pop(0)
    p = m.fresh_p()
    m.procs[pid] = (Frame({rec.param: BoxRef(o, p)}, rec.body, frozenset({p}), None),)
    return StepResult("E-Receive", getattr(rec.body, "span", None))


# ---------------------------------------------------------------- scheduling


@dataclass(frozen=True)
class Progressed:
    pid: int
    rule: str
    span: Span | None


@dataclass(frozen=True)
class AllIdle:
    pass


@dataclass(frozen=True)
class Deadlock:
    report: str


def candidates(m: Machine) -> list[tuple[int, str]]:
    out: list[tuple[int, str]] = []
    for pid, st in m.procs.items():
        if m.is_idle(pid):
            rec = m.heap.get(pid)
            if isinstance(rec, ProcRecord) and rec.inbox and rec.body is not None:
                out.append((pid, "receive"))
        else:
            out.append((pid, "run"))
    return out


def _choose(m: Machine, cands: list[tuple[int, str]]) -> tuple[int, str]:
    if len(cands) == 1:
        return cands[0]
    if m.scheduler == "round-robin":
        for c in cands:
            if c[0] > m._rr:
                m._rr = c[0]
                return c
        m._rr = cands[0][0]
        return cands[0]
    return cands[m.rng.randrange(len(cands))]


def step_processes(m: Machine) -> Progressed | AllIdle | Deadlock | tuple[int, Stuck]:
    cands = candidates(m)
    if not cands:
        if all(m.is_idle(pid) for pid in m.procs):
            return AllIdle()
        return Deadlock("no transition enabled but some process is not idle")
    pid, kind = _choose(m, cands)
    res = receive(m, pid) if kind == "receive" else step_stack(m, pid)
    if isinstance(res, Stuck):
        return pid, res
    assert res is not None
    return Progressed(pid, res.rule, res.span)


# ---------------------------------------------------------------- runs


@dataclass
class RunOptions:
    seed: int = 0
    max_steps: int = 100_000
    validate: bool = False
    scheduler: str = "random"
    record_assign_states: bool = False
    heap_dump: bool = False
    # Called after every transition; returns a failing report or None.
    monitor: Callable[[Machine, Progressed], object] | None = None


@dataclass
class Outcome:
    kind: str  # Terminated | AllIdle | Stuck | StepLimit | Alarm
    value: Value = None
    stuck: Stuck | None = None
    pid: int | None = None
    step: int | None = None
    detail: object = None

    @property
    def alarm(self) -> bool:
        return self.kind == "Alarm" or (self.kind == "Stuck" and self.stuck is not None and self.stuck.alarm)

    @property
    def exit_code(self) -> int:
        if self.kind in ("Terminated", "AllIdle"):
            return 0
        if self.alarm:
            return 3
        if self.kind == "Stuck":
            return 1
        return 4

    def describe(self) -> str:
        if self.kind == "Terminated":
            return f"Terminated({show_value(self.value)})"
        if self.kind == "AllIdle":
            return "Terminated(AllIdle)"
        if self.kind == "Stuck":
            s = self.stuck
            tag = "SoundnessAlarm " if s.alarm else ""
            return f"{tag}Stuck({s.reason}) at step {self.step} [{s.rule}] {s.message}" + (f" @ {s.span}" if s.span else "")
        if self.kind == "Alarm":
            return f"SoundnessAlarm at step {self.step}: {self.detail}"
        return f"StepLimit({self.step})"

    def to_record(self) -> dict:
        rec = {"outcome": self.kind, "step": self.step, "exit": self.exit_code}
        if self.kind == "Terminated":
            rec["value"] = show_value(self.value)
        if self.stuck is not None:
            rec.update(reason=self.stuck.reason, rule=self.stuck.rule, redex=str(self.stuck.span or ""),
                       alarm=self.stuck.alarm)
        if self.kind == "Alarm":
            rec["detail"] = str(self.detail)
        return rec


@dataclass
class RunResult:
    outcome: Outcome
    trace: list[TraceEntry]
    machine: Machine
    assign_states: dict[int, Machine] = field(default_factory=dict)
    dumps: list[dict] = field(default_factory=list)

    def rule_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.trace:
            counts[e.rule] = counts.get(e.rule, 0) + 1
        return counts

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(e.to_record(), sort_keys=True) + "\n" for e in self.trace)


def _is_assign_step(m: Machine, pid: int) -> bool:
    st = m.procs.get(pid)
    return bool(st) and isinstance(st[0].term, Let) and isinstance(st[0].term.expr, Assign)


def run(ct: ClassTable, p: Program, opts: RunOptions | None = None) -> RunResult:
    """Drive the machine until it terminates, gets stuck, or hits the step limit."""
    opts = opts or RunOptions()
    m = init_machine(ct, p, opts.seed, opts.scheduler)
    trace: list[TraceEntry] = []
    states: dict[int, Machine] = {}
    dumps: list[dict] = []
    if opts.heap_dump:
        dumps.append(m.dump())
    single = p.mode is not Mode.CLC3
    if opts.monitor is not None:
        bad = opts.monitor(m, None)
        if bad is not None:
            return RunResult(Outcome("Alarm", step=0, detail=bad), trace, m, states, dumps)

    while True:
        if m.steps >= opts.max_steps:
            return RunResult(Outcome("StepLimit", step=m.steps), trace, m, states, dumps)
        step_no = m.steps
        if single:
            pid = m.main_pid
            if opts.record_assign_states and _is_assign_step(m, pid):
                states[step_no] = m.clone()
            res = step_stack(m, pid)
            if res is None:
                m.steps += 1
                trace.append(TraceEntry(step_no, pid, "Halt", None))
                v = m.procs[pid][0].env.get(m.procs[pid][0].term.name)
                return RunResult(Outcome("Terminated", value=v, step=m.steps), trace, m, states, dumps)
            if isinstance(res, Stuck):
                trace.append(TraceEntry(step_no, pid, f"Stuck:{res.reason}", str(res.span or "")))
                return RunResult(Outcome("Stuck", stuck=res, pid=pid, step=step_no), trace, m, states, dumps)
            ev = Progressed(pid, res.rule, res.span)
        else:
            if opts.record_assign_states:
                pre = m.clone()
            r = step_processes(m)
            if isinstance(r, AllIdle):
                m.steps += 1
                trace.append(TraceEntry(step_no, None, "Halt", None))
                return RunResult(Outcome("AllIdle", step=m.steps), trace, m, states, dumps)
            if isinstance(r, Deadlock):
                s = Stuck("Deadlock", "E-Receive", r.report)
                trace.append(TraceEntry(step_no, None, "Stuck:Deadlock", None))
                return RunResult(Outcome("Stuck", stuck=s, step=step_no), trace, m, states, dumps)
            if isinstance(r, tuple):
                pid, s = r
                trace.append(TraceEntry(step_no, pid, f"Stuck:{s.reason}", str(s.span or "")))
                return RunResult(Outcome("Stuck", stuck=s, pid=pid, step=step_no), trace, m, states, dumps)
            ev = r
            if opts.record_assign_states and ev.rule == "E-Assign":
                states[step_no] = pre
        m.steps += 1
        trace.append(TraceEntry(step_no, ev.pid, ev.rule, str(ev.span) if ev.span else None))
        if opts.heap_dump:
            dumps.append(m.dump())
        if opts.monitor is not None:
            bad = opts.monitor(m, ev)
            if bad is not None:
                return RunResult(Outcome("Alarm", pid=ev.pid, step=step_no, detail=bad), trace, m, states, dumps)
