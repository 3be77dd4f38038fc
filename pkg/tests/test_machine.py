from __future__ import annotations

import pytest

from conftest import CORPUS, ROOT, checked, load
from clc.classtable import ClassTable
from clc.machine import BoxRef, ObjRef, Outcome, RunOptions, Stuck, init_machine, run, step_stack
from clc.parser import parse_program
from clc.syntax import Mode
from clc.typecheck import check_program

E_CLASS = "class E extends AnyRef {\n  var next: E\n}\n\n"

# Outcomes observed once and frozen; the value column is the final result.
EXPECTED = {
    "clc1/alias_boxes.clc": ("Terminated(b(o2))", 13),
    "clc1/counter.clc": ("Terminated(b(o3))", 26),
    "clc1/null_invoke.clc": ("Stuck(NullDereference) at step 2 [E-Invoke]", 3),
    "clc2/box_in_method.clc": ("Terminated(b(o3, p0))", 10),
    "clc2/box_param.clc": ("Terminated(b(o2, p0))", 14),
    "clc2/capture_list.clc": ("Terminated(b(o2, p0))", 15),
    "clc2/globals.clc": ("Terminated(o4)", 21),
    "clc2/null_select.clc": ("Stuck(NullDereference) at step 2 [E-Select]", 3),
    "clc2/swap_unique.clc": ("Terminated(b(o3, p4))", 16),
    "clc3/merge_then_send.clc": ("Terminated(AllIdle)", 12),
    "clc3/pipeline.clc": ("Terminated(AllIdle)", 34),
    "clc3/two_actors.clc": ("Terminated(AllIdle)", 17),
}


@pytest.mark.parametrize("rel", sorted(EXPECTED))
def test_corpus_outcomes(rel, in_root):
    p = load(CORPUS / rel)
    res = run(ClassTable(p), p, RunOptions(seed=0))
    desc, n = EXPECTED[rel]
    assert res.outcome.describe().startswith(desc)
    assert len(res.trace) == n


def test_exit_codes():
    assert Outcome("Terminated").exit_code == 0
    assert Outcome("AllIdle").exit_code == 0
    assert Outcome("Stuck", stuck=Stuck("NullDereference", "E-Select", "")).exit_code == 1
    assert Outcome("Stuck", stuck=Stuck("MissingPermission", "E-Open", "")).exit_code == 3
    assert Outcome("Stuck", stuck=Stuck("Deadlock", "E-Receive", "")).exit_code == 3
    assert Outcome("Alarm").exit_code == 3
    assert Outcome("StepLimit").exit_code == 4


def test_initial_state():
    p, ty = checked(E_CLASS + "var g: E\n\nlet n = null in\nn\n")
    m = init_machine(ty.ct, p)
    assert m.heap[m.og].cls == "$Global" and m.heap[m.og].fields == {"g": None}
    (f,) = m.procs[m.main_pid]
    assert dict(f.env) == {"global": ObjRef(m.og)} and f.perms == frozenset() and f.label is None


def run_src(src: str, mode: Mode = Mode.CLC2, **kw):
    p = parse_program(src, mode)
    return run(ClassTable(p), p, RunOptions(**kw))


def test_box_creates_fresh_object_and_permission():
    res = run_src(E_CLASS + "box[E] { b =>\n  b\n}\n")
    assert res.outcome.describe() == "Terminated(b(o2, p0))"
    top = res.machine.procs[res.machine.main_pid][0]
    assert top.perms == {0}
    assert [e.rule for e in res.trace] == ["E-Box", "Halt"]


def test_capture_moves_box_and_consumes_permission():
    src = E_CLASS + "box[E] { a =>\n  box[E] { b =>\n    capture(a.next, b) { m =>\n      m\n    }\n  }\n}\n"
    res = run_src(src)
    m = res.machine
    top = m.procs[m.main_pid][0]
    assert top.env["m"] == BoxRef(2, 0)
    assert top.perms == {0}                # b's permission p1 is gone
    assert m.heap[2].fields["next"] == 3   # b's object now hangs off a


def test_swap_returns_old_contents_with_fresh_permission():
    p = load(CORPUS / "clc2" / "swap_unique.clc")
    res = run(ClassTable(p), p)
    assert "E-Swap" in res.rule_counts() and res.rule_counts()["E-Swap"] == 2


def test_open_runs_body_in_new_frame_and_returns():
    src = E_CLASS + "box[E] { b =>\n  let r = b.open { e =>\n    let x = e.next in\n    x\n  } in\n  r\n}\n"
    res = run_src(src)
    rules = [e.rule for e in res.trace]
    assert rules[:3] == ["E-Box", "E-Open", "E-Select"]
    assert "E-Return1" in rules or "E-Return2" in rules
    assert res.outcome.kind == "Terminated"


def test_invoke_pushes_labelled_frame():
    src = E_CLASS.replace("}\n", "  def me(x: E): E =\n    this\n}\n", 1) + "let e = new E in\nlet r = e.me(e) in\nr\n"
    p, ty = checked(src)
    m = init_machine(ty.ct, p)
    for _ in range(2):
        step_stack(m, m.main_pid)
    st = m.procs[m.main_pid]
    assert len(st) == 2 and st[0].label == "r" and st[1].label is None
    assert st[0].env["this"] == st[0].env["x"]


def test_null_dereference_is_benign():
    res = run_src(E_CLASS + "let e = new E in\nlet n = e.next in\nlet m = n.next in\nm\n")
    assert res.outcome.kind == "Stuck" and res.outcome.stuck.reason == "NullDereference"
    assert res.outcome.stuck.rule == "E-Select" and not res.outcome.alarm


def test_missing_permission_is_an_alarm_when_unchecked():
    p = load(CORPUS / "dynperm" / "double_open.clc")
    res = run(ClassTable(p), p)
    assert res.outcome.alarm and res.outcome.stuck.reason == "MissingPermission"
    assert res.outcome.exit_code == 3


def test_step_limit():
    p = load(CORPUS / "clc1" / "counter.clc")
    res = run(ClassTable(p), p, RunOptions(max_steps=5))
    assert res.outcome.kind == "StepLimit" and res.outcome.exit_code == 4 and len(res.trace) == 5


def test_send_and_receive_move_the_box(in_root):
    p = load(CORPUS / "clc3" / "two_actors.clc")
    res = run(ClassTable(p), p, RunOptions(seed=0))
    counts = res.rule_counts()
    assert counts["E-Send"] == 2 and counts["E-Receive"] == 2 and counts["E-Proc"] == 2


@pytest.mark.parametrize("scheduler", ["random", "round-robin"])
def test_same_seed_same_trace(scheduler, in_root):
    p = load(CORPUS / "clc3" / "pipeline.clc")
    ct = ClassTable(p)
    runs = [run(ct, p, RunOptions(seed=7, scheduler=scheduler, heap_dump=True)) for _ in range(2)]
    assert runs[0].trace_jsonl() == runs[1].trace_jsonl()
    assert runs[0].dumps == runs[1].dumps


def test_seeds_change_interleavings(in_root):
    p = load(CORPUS / "clc3" / "pipeline.clc")
    ct = ClassTable(p)
    traces = {run(ct, p, RunOptions(seed=s)).trace_jsonl() for s in range(8)}
    assert len(traces) > 1


def test_golden_trace(in_root):
    from clc.monitors import make_monitor

    p = load(CORPUS / "clc3" / "two_actors.clc")
    ty = check_program(p)
    res = run(ty.ct, p, RunOptions(seed=0, monitor=make_monitor(ty.ct, ty)))
    import json

    lines = res.trace_jsonl() + json.dumps(res.outcome.to_record(), sort_keys=True) + "\n"
    assert lines == (ROOT / "corpus" / "golden" / "two_actors.seed0.jsonl").read_text()


def test_monitor_is_consulted_on_initial_state():
    seen = []
    p = load(CORPUS / "clc1" / "counter.clc")
    run(ClassTable(p), p, RunOptions(monitor=lambda m, ev: seen.append(ev)))
    assert seen[0] is None and len(seen) == 26
