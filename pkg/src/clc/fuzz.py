"""Soundness fuzzing: generate well-typed programs, run them with every monitor on.

A run raises an alarm when the machine gets stuck for any reason other
than a null dereference at one of the redexes progress allows, when a
monitor judgement fails after a transition, or when the heap separation
corollary fails on the recorded trace.
"""

from __future__ import annotations

import json
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from . import mutations
from .classtable import ClassTable
from .errors import ProgramRejected
from .gen import GenConfig, gen_program, shrink
from .machine import RunOptions, RunResult, run
from .monitors import heap_separation_corollary, make_monitor
from .parser import print_program
from .syntax import (
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
    Swap,
    Var,
    node_count,
    subterms,
)
from .typecheck import Typing, typecheck_program

# Redexes at which a well-typed program may get stuck on null.
NULL_REDEXES = frozenset({"E-Select", "E-Assign", "E-Invoke", "E-Open", "E-Capture", "E-Swap", "E-Send"})

REDUCTION_RULES = {
    Mode.CLC1: ("E-Null", "E-Var", "E-Select", "E-Assign", "E-New", "E-Box", "E-Invoke", "E-Open",
                "E-Return1", "E-Return2"),
    Mode.CLC2: ("E-Null", "E-Var", "E-Select", "E-Assign", "E-New", "E-Invoke", "E-Open", "E-Return1",
                "E-Return2", "E-Box", "E-Capture", "E-Swap"),
}
REDUCTION_RULES[Mode.CLC3] = REDUCTION_RULES[Mode.CLC2] + ("E-Proc", "E-Send", "E-Receive")

_TYPE_RULE = {
    Var: "T-Var", Null: "T-Null", Select: "T-Select", Assign: "T-Assign", New: "T-New", Invoke: "T-Invoke",
    BoxExpr: "T-Box", BoxCont: "T-Box", Open: "T-Open", Capture: "T-Capture", Swap: "T-Swap",
    Proc: "T-Proc", Send: "T-Send", Let: "T-Let",
}


def type_rules_used(p: Program) -> Counter:
    c: Counter = Counter()
    for cd in p.classes:
        for m in cd.methods:
            c.update(_TYPE_RULE[type(n)] for n in subterms(m.body))
    c.update(_TYPE_RULE[type(n)] for n in subterms(p.main))
    return c


def has_node(p: Program, kinds: tuple) -> bool:
    nodes = [n for cd in p.classes for m in cd.methods for n in subterms(m.body)] + list(subterms(p.main))
    return any(isinstance(n, kinds) for n in nodes)


@dataclass
class RunVerdict:
    outcome: str
    alarm: str | None
    result: RunResult


def check_run(ct: ClassTable, p: Program, typing: Typing | None, seed: int, max_steps: int = 100_000,
              validate: bool = True) -> RunVerdict:
    """Run once and classify the result against preservation, progress, isolation and the corollary."""
    opts = RunOptions(seed=seed, max_steps=max_steps, record_assign_states=True,
                      monitor=make_monitor(ct, typing) if validate else None)
    res = run(ct, p, opts)
    o = res.outcome
    alarm = None
    if o.kind == "Alarm":
        alarm = f"monitor at step {o.step}: {o.detail}"
    elif o.kind == "Stuck":
        if o.stuck.alarm:
            alarm = f"stuck: {o.describe()}"
        elif o.stuck.rule not in NULL_REDEXES:
            alarm = f"null dereference at non-enumerated redex {o.stuck.rule}"
    if alarm is None:
        cor = heap_separation_corollary(res.trace, res.assign_states)
        if not cor.holds:
            alarm = f"heap separation: {cor}"
    kind = o.kind if o.kind != "Stuck" else f"Stuck({o.stuck.reason})"
    return RunVerdict(kind, alarm, res)


@dataclass
class Alarm:
    program_seed: int
    run_seed: int
    message: str
    reproducer: str
    nodes: int

    def to_record(self) -> dict:
        return {"program_seed": self.program_seed, "run_seed": self.run_seed, "message": self.message,
                "nodes": self.nodes, "reproducer": self.reproducer}


@dataclass
class FuzzReport:
    mode: Mode
    programs: int = 0
    runs: int = 0
    steps: int = 0
    rejected: int = 0  # generated programs the checker refused
    outcomes: Counter = field(default_factory=Counter)
    rules: Counter = field(default_factory=Counter)
    type_rules: Counter = field(default_factory=Counter)
    features: Counter = field(default_factory=Counter)
    alarms: list[Alarm] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.alarms and not self.rejected

    def missing_rules(self) -> list[str]:
        return [r for r in REDUCTION_RULES[self.mode] if not self.rules.get(r)]

    def merge(self, other: FuzzReport) -> FuzzReport:
        return FuzzReport(self.mode, self.programs + other.programs, self.runs + other.runs,
                          self.steps + other.steps, self.rejected + other.rejected,
                          self.outcomes + other.outcomes, self.rules + other.rules,
                          self.type_rules + other.type_rules, self.features + other.features,
                          self.alarms + other.alarms, self.elapsed + other.elapsed)

    def render_text(self) -> str:
        lines = [
            f"fuzz {self.mode}: {self.programs} programs, {self.runs} runs, {self.steps} steps, "
            f"{len(self.alarms)} alarms, {self.rejected} rejected ({self.elapsed:.1f}s)",
            "outcomes: " + ", ".join(f"{k}={v}" for k, v in sorted(self.outcomes.items())),
            "reduction rules: " + ", ".join(f"{r}={self.rules.get(r, 0)}" for r in REDUCTION_RULES[self.mode]),
            "type rules: " + ", ".join(f"{k}={v}" for k, v in sorted(self.type_rules.items())),
            "features: " + ", ".join(f"{k}={v}" for k, v in sorted(self.features.items())),
        ]
        for a in self.alarms:
            lines.append(f"ALARM program seed {a.program_seed}, run seed {a.run_seed}: {a.message}")
            lines.append(a.reproducer.rstrip())
        return "\n".join(lines)

    def to_record(self) -> dict:
        return {
            "mode": str(self.mode), "programs": self.programs, "runs": self.runs, "steps": self.steps,
            "rejected": self.rejected, "alarms": [a.to_record() for a in self.alarms],
            "outcomes": dict(sorted(self.outcomes.items())), "rules": dict(sorted(self.rules.items())),
            "type_rules": dict(sorted(self.type_rules.items())),
            "features": dict(sorted(self.features.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def reproducer_text(p: Program, program_seed: int, run_seed: int, message: str) -> str:
    head = (f"// reproducer: program seed {program_seed}, run seed {run_seed}, mode {p.mode}\n"
            f"// {message.splitlines()[0] if message else ''}\n")
    return head + print_program(p)


def _still_fails(run_seed: int, max_steps: int) -> Callable[[Program], bool]:
    def failing(p: Program) -> bool:
        try:
            ty = typecheck_program(ClassTable(p), p)
        except ProgramRejected:
            return False
        return check_run(ty.ct, p, ty, run_seed, max_steps).alarm is not None

    return failing


def fuzz(cfg: GenConfig, n_programs: int, n_seeds: int = 1, max_steps: int = 20_000, shrink_alarms: bool = True,
         first_seed: int | None = None, validate: bool = True) -> FuzzReport:
    """Generate ``n_programs`` programs (seeds ``cfg.seed``, ``cfg.seed + 1``, ...) and run each
    under ``n_seeds`` scheduler seeds with validation after every step."""
    t0 = time.perf_counter()
    rep = FuzzReport(cfg.mode)
    start = cfg.seed if first_seed is None else first_seed
    for k in range(n_programs):
        pseed = start + k
        p = gen_program(replace(cfg, seed=pseed))
        rep.programs += 1
        rep.type_rules.update(type_rules_used(p))
        if has_node(p, (Capture, Swap)):
            rep.features["capture_or_swap"] += 1
        if has_node(p, (Send,)):
            rep.features["send"] += 1
        try:
            ct = ClassTable(p)
            ty = typecheck_program(ct, p)
        except ProgramRejected as e:
            rep.rejected += 1
            rep.alarms.append(Alarm(pseed, -1, f"generated program rejected: {e.errors[0]}",
                                    reproducer_text(p, pseed, -1, str(e.errors[0])), node_count(p)))
            continue
        for rs in range(n_seeds):
            v = check_run(ct, p, ty, rs, max_steps, validate)
            rep.runs += 1
            rep.steps += v.result.machine.steps
            rep.outcomes[v.outcome] += 1
            rep.rules.update(v.result.rule_counts())
            if v.alarm:
                small = shrink(p, _still_fails(rs, max_steps)) if shrink_alarms else p
                rep.alarms.append(Alarm(pseed, rs, v.alarm, reproducer_text(small, pseed, rs, v.alarm),
                                        node_count(small)))
                break
    rep.elapsed = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- mutation sensors


@dataclass
class SensorResult:
    name: str
    caught: bool
    detail: str


def near_miss_sensor(n_programs: int = 300, seed: int = 0) -> SensorResult:
    """Programs that `new` a non-ocap class under the ocap effect.

    The checker must reject every one of them; any that typechecks is run
    with the monitors on, and must trip an alarm.
    """
    accepted = alarms = 0
    first = ""
    for k in range(n_programs):
        cfg = GenConfig(seed=seed + k, mode=Mode.CLC3, near_miss=0.6)
        p = gen_program(cfg)
        try:
            ct = ClassTable(p)
            ty = typecheck_program(ct, p)
        except ProgramRejected:
            continue
        accepted += 1
        for rs in range(2):
            v = check_run(ct, p, ty, rs, 20_000)
            if v.alarm:
                alarms += 1
                first = first or f"seed {seed + k}: {v.alarm}"
                break
    return SensorResult("near-miss", alarms > 0, f"{accepted} accepted, {alarms} alarmed. {first}".strip())


def dynperm_sensor(programs: Iterable[tuple[str, Program]]) -> SensorResult:
    """Unchecked programs that misuse consumed boxes must stop with MissingPermission."""
    misses = []
    for name, p in programs:
        ct = ClassTable(p)
        v = check_run(ct, p, None, 0, 20_000)
        o = v.result.outcome
        if not (o.kind == "Stuck" and o.stuck.reason == "MissingPermission"):
            misses.append(f"{name}: {o.describe()}" + (f" [{v.alarm}]" if v.alarm else ""))
    return SensorResult("dynamic permissions", bool(misses), "; ".join(misses))


def mutation_suite(dynperm: list[tuple[str, Program]], n_programs: int = 150) -> dict[str, list[SensorResult]]:
    """For each mutation, which sensors notice it.

    Sensors: the CLC2 preservation fuzz, the CLC3 isolation fuzz, the
    near-miss checker fuzz, and the dynamic-permission corpus.
    """
    out: dict[str, list[SensorResult]] = {}
    for name in mutations.MUTATIONS:
        with mutations.enabled(name):
            found = []
            r2 = fuzz(GenConfig(mode=Mode.CLC2), n_programs, 1, shrink_alarms=False)
            found.append(SensorResult("preservation fuzz", bool(r2.alarms),
                                      r2.alarms[0].message if r2.alarms else ""))
            r3 = fuzz(GenConfig(mode=Mode.CLC3), n_programs // 2, 2, shrink_alarms=False)
            found.append(SensorResult("isolation fuzz", bool(r3.alarms), r3.alarms[0].message if r3.alarms else ""))
            found.append(near_miss_sensor(n_programs))
            found.append(dynperm_sensor(dynperm))
            out[name] = found
    return out
