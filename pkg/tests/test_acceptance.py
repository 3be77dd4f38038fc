"""Acceptance criteria, one test each.

Every test records a single ``ACCEPTANCE <n> PASS|FAIL`` line; the lines
are printed in the pytest terminal summary and when this file is run as a
script (``python tests/test_acceptance.py``).
"""

from __future__ import annotations

import random
import subprocess
import sys
import time
from functools import lru_cache

import oracles
from conftest import CORPUS, ROOT, all_corpus_files, dynperm_files, load, mode_of
from clc.classtable import DIRECT, OCAP, TRANSITIVE, ClassTable, census
from clc.fuzz import NULL_REDEXES, FuzzReport, fuzz, mutation_suite
from clc.gen import GenConfig
from clc.machine import Obj
from clc.monitors import domedge, sep
from clc.parser import ParseError, parse_program, print_program
from clc.syntax import Mode

RESULTS: dict[int, str] = {}


def record(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[n] = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {title}: {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


@lru_cache(maxsize=None)
def clc2_suite() -> FuzzReport:
    # 500 programs under the default seed plus two more scheduler seeds.
    return fuzz(GenConfig(seed=0, mode=Mode.CLC2), 500, 3)


@lru_cache(maxsize=None)
def clc3_suite() -> FuzzReport:
    return fuzz(GenConfig(seed=0, mode=Mode.CLC3), 200, 5)


def _alarms(rep: FuzzReport, prefix: str) -> list[str]:
    return [a.message for a in rep.alarms if a.message.startswith(prefix)]


def test_1_preservation():
    t0 = time.perf_counter()
    rep = clc2_suite()
    bad = _alarms(rep, "monitor") + _alarms(rep, "generated program rejected")
    ok = not bad and rep.rejected == 0 and rep.runs == 1500
    record(1, "preservation (CLC2, validate every step)", ok,
           f"{rep.programs} programs, {rep.runs} runs, {rep.steps} validated steps, "
           f"{len(bad)} judgement failures ({time.perf_counter() - t0:.1f}s)")


def test_2_progress():
    rep = clc2_suite()
    allowed = {"Terminated", "Stuck(NullDereference)", "StepLimit"}
    stray = {k: v for k, v in rep.outcomes.items() if k not in allowed}
    bad = _alarms(rep, "stuck") + _alarms(rep, "null dereference at non-enumerated")
    ok = not stray and not bad
    record(2, "progress (CLC2)", ok,
           f"outcomes {dict(sorted(rep.outcomes.items()))}; null stuckness only at {sorted(NULL_REDEXES)}; "
           f"{len(bad)} alarms")


def test_3_isolation():
    t0 = time.perf_counter()
    rep = clc3_suite()
    iso = [m for m in _alarms(rep, "monitor") if "isolated" in m]
    ok = rep.ok and rep.runs == 1000 and not rep.missing_rules()
    record(3, "isolation (CLC3, 5 scheduler seeds)", ok,
           f"{rep.programs} programs, {rep.runs} runs, {rep.rules.get('E-Send', 0)} sends, "
           f"{len(iso)} isolation failures, {len(rep.alarms)} alarms ({time.perf_counter() - t0:.1f}s)")


def test_4_heap_separation():
    reps = [clc2_suite(), clc3_suite()]
    bad = [m for r in reps for m in _alarms(r, "heap separation")]
    assigns = sum(r.rules.get("E-Assign", 0) for r in reps)
    ok = not bad and assigns > 0 and all(r.ok for r in reps)
    record(4, "heap separation corollary on traces", ok,
           f"{assigns} assignments checked over {sum(r.runs for r in reps)} runs, {len(bad)} violations")


def test_5_oracle_equivalence():
    rng = random.Random(2024)
    heaps = checks = mismatches = 0
    for _ in range(1000):
        n = rng.randint(1, 8)
        heap = {o: Obj("N", {f: rng.choice([None, *range(n)]) for f in ("f0", "f1", "f2")[: rng.randint(1, 3)]})
                for o in range(n)}
        plain = {o: dict(e.fields) for o, e in heap.items()}
        heaps += 1
        for a in heap:
            for b in heap:
                checks += 1
                mismatches += sep(heap, a, b) != oracles.sep(plain, a, b)
        for oh in heap:
            for f in heap[oh].fields:
                for _ in range(3):
                    a, b = rng.randrange(n), rng.randrange(n)
                    checks += 1
                    mismatches += domedge(heap, oh, f, a, b) != oracles.domedge(plain, oh, f, a, b)
    record(5, "oracle equivalence (domedge, sep)", mismatches == 0,
           f"{heaps} heaps of <= 8 objects, {checks} comparisons, {mismatches} disagreements")


def test_6_mutation_sensitivity():
    progs = [(p.name, load(p)) for p in dynperm_files()]
    t0 = time.perf_counter()
    suite = mutation_suite(progs, n_programs=150)
    caught = {m: [s.name for s in rs if s.caught] for m, rs in suite.items()}
    # Control: with no mutation enabled, no sensor may fire.
    baseline_quiet = _baseline_quiet(progs)
    ok = len(caught) == 5 and all(caught.values()) and baseline_quiet
    detail = "; ".join(f"{m} -> {', '.join(v) or 'MISSED'}" for m, v in caught.items())
    record(6, "mutation sensitivity", ok,
           f"{detail}; unmutated build quiet: {baseline_quiet} ({time.perf_counter() - t0:.1f}s)")


def _baseline_quiet(progs) -> bool:
    from clc.fuzz import dynperm_sensor, near_miss_sensor

    r2 = fuzz(GenConfig(mode=Mode.CLC2), 150, 1, shrink_alarms=False)
    r3 = fuzz(GenConfig(mode=Mode.CLC3), 75, 2, shrink_alarms=False)
    return r2.ok and r3.ok and not near_miss_sensor(150).caught and not dynperm_sensor(progs).caught


def test_7_census_golden():
    rows = (CORPUS / "census" / "verdicts.tsv").read_text().splitlines()[1:]
    expected = dict(r.split("\t") for r in rows)
    c = census(ClassTable(load(CORPUS / "census" / "classes.clc")))
    got = c.verdicts()
    diff = {k: (expected.get(k), got.get(k)) for k in expected.keys() | got.keys() if expected.get(k) != got.get(k)}
    counts = {v: sum(1 for x in expected.values() if x == v) for v in (OCAP, DIRECT, TRANSITIVE)}
    ok = not diff and len(got) == 20 and all(c.count(v) == n for v, n in counts.items())
    record(7, "census golden table", ok,
           f"{c.total} classes: {c.count(OCAP)} ocap, {c.count(DIRECT)} directly, {c.count(TRANSITIVE)} "
           f"transitively insecure; {len(diff)} label mismatches")


def test_8_round_trip_and_determinism():
    files = all_corpus_files()
    parsed = bad_rt = 0
    for f in files:
        try:
            p = parse_program(f.read_text(), mode_of(f), str(f))
        except ParseError:
            continue
        parsed += 1
        text = print_program(p)
        q = parse_program(text, mode_of(f))
        bad_rt += q != p or print_program(q) != text
    runs = nondet = 0
    for d in ("clc1", "clc2", "clc3"):
        for f in sorted((CORPUS / d).glob("*.clc")):
            for seed in ("0", "1"):
                cmd = [sys.executable, "-m", "clc.cli", "run", f"--{d}", "--format", "json", "--trace",
                       "--heap-dump", "--seed", seed, str(f.relative_to(ROOT))]
                outs = [subprocess.run(cmd, capture_output=True, cwd=ROOT) for _ in range(2)]
                runs += 1
                nondet += outs[0].stdout != outs[1].stdout or outs[0].returncode != outs[1].returncode
    golden = (ROOT / "corpus" / "golden" / "two_actors.seed0.jsonl").read_bytes()
    cmd = [sys.executable, "-m", "clc.cli", "run", "--trace", "--format", "json", "--seed", "0", "--validate",
           "corpus/clc3/two_actors.clc"]
    golden_ok = subprocess.run(cmd, capture_output=True, cwd=ROOT).stdout == golden
    ok = bad_rt == 0 and parsed > 0 and nondet == 0 and golden_ok
    record(8, "round trip and determinism", ok,
           f"{parsed}/{len(files)} corpus files parse, {bad_rt} round-trip failures; {runs} repeated runs, "
           f"{nondet} differ; golden trace {'matches' if golden_ok else 'DIFFERS'}")


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
