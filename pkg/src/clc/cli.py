"""Command-line entry point: ``clc check|run|fuzz|census|fmt``.

Exit codes: 0 success, 1 diagnostics or benign null stuckness, 2 usage or
IO error, 3 soundness alarm, 4 step limit.  Structured output
(``--format json``) is one JSON object per line; see the README for the
record schemas.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

from .classtable import Census, ClassTable, census
from .errors import ProgramRejected, TypingError
from .fuzz import fuzz
from .gen import GenConfig
from .machine import RunOptions, run
from .monitors import make_monitor
from .parser import ParseError, parse_program, print_program
from .syntax import Mode, Program
from .typecheck import Typing, typecheck_program

EXIT_OK, EXIT_DIAG, EXIT_USAGE, EXIT_ALARM, EXIT_LIMIT = 0, 1, 2, 3, 4
SEED_ENV = "CLC_SEED"


@dataclass(frozen=True)
class Finding:
    """One problem reported by ``check``: a parse diagnostic or a violated rule."""

    file: str
    rule: str  # "parse" for syntax problems, else the rule label
    kind: str  # grammar production or failure kind
    message: str
    span: str | None = None

    @property
    def tag(self) -> str:
        return f"{self.rule} {self.kind}"

    def render(self) -> str:
        where = self.span or self.file
        return f"{where}: [{self.rule}] {self.kind}: {self.message}"

    def to_record(self) -> dict:
        return {"file": self.file, "rule": self.rule, "kind": self.kind, "message": self.message,
                "span": self.span}


@dataclass
class Diagnosis:
    program: Program | None
    typing: Typing | None
    findings: list[Finding]

    @property
    def ok(self) -> bool:
        return not self.findings


def diagnose(text: str, mode: Mode, file: str = "<input>", typecheck: bool = True) -> Diagnosis:
    """Parse and (optionally) typecheck; collect every finding instead of raising."""
    try:
        p = parse_program(text, mode, file)
    except ParseError as e:
        return Diagnosis(None, None, [Finding(file, "parse", d.production or d.kind, d.message,
                                              str(d.span) if d.span else None) for d in e.diagnostics])
    if not typecheck:
        return Diagnosis(p, None, [])
    try:
        ct = ClassTable(p)
        ty = typecheck_program(ct, p)
    except ProgramRejected as e:
        return Diagnosis(p, None, [_finding(file, err) for err in e.errors])
    except TypingError as err:
        return Diagnosis(p, None, [_finding(file, err)])
    return Diagnosis(p, ty, [])


def _finding(file: str, e: TypingError) -> Finding:
    msg = e.message
    if e.expected is not None or e.actual is not None:
        msg += f" (expected {e.expected}, found {e.actual})"
    return Finding(file, e.rule, e.kind, msg, str(e.span) if e.span else None)


# ---------------------------------------------------------------- commands


def _mode(args) -> Mode:
    return {"clc1": Mode.CLC1, "clc2": Mode.CLC2}.get(args.mode, Mode.CLC3)


def _read(path: str, err: TextIO) -> str | None:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        print(f"error: cannot read {path}: {e}", file=err)
        return None


def _emit(out: TextIO, rec: dict) -> None:
    out.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_check(paths: Sequence[str], mode: Mode, fmt: str = "text", out: TextIO | None = None,
              err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    texts = {}
    for path in paths:
        text = _read(path, err)
        if text is None:
            return EXIT_USAGE
        texts[path] = text
    code = EXIT_OK
    for path, text in texts.items():
        d = diagnose(text, mode, path)
        if d.findings:
            code = EXIT_DIAG
        if fmt == "json":
            for f in d.findings:
                _emit(out, f.to_record())
            _emit(out, {"file": path, "ok": d.ok, "findings": len(d.findings)})
        else:
            for f in d.findings:
                out.write(f.render() + "\n")
            out.write(f"{path}: {'ok' if d.ok else f'{len(d.findings)} problem(s)'}\n")
    return code


def cmd_run(path: str, mode: Mode, seed: int = 0, max_steps: int = 100_000, validate: bool = False,
            typecheck: bool = True, trace: bool = False, heap_dump: bool = False, scheduler: str = "random",
            fmt: str = "text", out: TextIO | None = None, err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    text = _read(path, err)
    if text is None:
        return EXIT_USAGE
    d = diagnose(text, mode, path, typecheck)
    if d.findings:
        for f in d.findings:
            if fmt == "json":
                _emit(out, f.to_record())
            else:
                out.write(f.render() + "\n")
        return EXIT_DIAG
    p = d.program
    ct = d.typing.ct if d.typing is not None else ClassTable(p)
    opts = RunOptions(seed=seed, max_steps=max_steps, validate=validate, scheduler=scheduler,
                      heap_dump=heap_dump, monitor=make_monitor(ct, d.typing) if validate else None)
    res = run(ct, p, opts)
    if fmt == "json":
        if trace:
            for e in res.trace:
                _emit(out, e.to_record())
        for i, dump in enumerate(res.dumps):
            _emit(out, {"heap_dump": i, "state": dump})
        _emit(out, res.outcome.to_record())
    else:
        if trace:
            for e in res.trace:
                pid = "" if e.pid is None else f" pid {e.pid}"
                out.write(f"{e.step:>6}{pid} {e.rule}" + (f" @ {e.redex}" if e.redex else "") + "\n")
        for i, dump in enumerate(res.dumps):
            out.write(f"heap {i}: {json.dumps(dump, sort_keys=True)}\n")
        out.write(res.outcome.describe() + "\n")
    return res.outcome.exit_code


def cmd_fuzz(mode: Mode, programs: int = 500, seeds: int = 3, seed: int = 0, max_steps: int = 20_000,
             shrink: bool = True, reproducers: str | None = None, report: str | None = None, fmt: str = "text",
             out: TextIO | None = None, err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    rep = fuzz(GenConfig(seed=seed, mode=mode), programs, seeds, max_steps, shrink_alarms=shrink)
    try:
        if reproducers:
            d = Path(reproducers)
            d.mkdir(parents=True, exist_ok=True)
            for a in rep.alarms:
                (d / f"repro_{a.program_seed}_{a.run_seed}.clc").write_text(a.reproducer, encoding="utf-8")
        if report:
            Path(report).write_text(rep.to_json() + "\n", encoding="utf-8")
    except OSError as e:
        print(f"error: {e}", file=err)
        return EXIT_USAGE
    if fmt == "json":
        rec = rep.to_record()
        rec["missing_rules"] = rep.missing_rules()
        _emit(out, rec)
    else:
        out.write(rep.render_text() + "\n")
        missing = rep.missing_rules()
        if missing:
            out.write("reduction rules that never fired: " + ", ".join(missing) + "\n")
    return EXIT_OK if rep.ok else EXIT_ALARM


def _census_files(target: str) -> list[Path]:
    p = Path(target)
    return sorted(p.glob("*.clc")) if p.is_dir() else [p]


def cmd_census(target: str, mode: Mode, fmt: str = "text", out: TextIO | None = None,
               err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    files = _census_files(target)
    if not files or not all(f.exists() for f in files):
        print(f"error: no .clc files at {target}", file=err)
        return EXIT_USAGE
    entries = []
    for f in files:
        text = _read(str(f), err)
        if text is None:
            return EXIT_USAGE
        try:
            p = parse_program(text, mode, str(f))
            ct = ClassTable(p)
        except (ParseError, TypingError) as e:
            print(f"error: {f}: {e}", file=err)
            return EXIT_USAGE
        entries.extend(census(ct).entries)
    table = Census(tuple(entries))
    out.write(table.render_jsonl() if fmt == "json" else table.render_text())
    return EXIT_OK


def cmd_fmt(paths: Sequence[str], mode: Mode, check: bool = False, out: TextIO | None = None,
            err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    code = EXIT_OK
    for path in paths:
        text = _read(path, err)
        if text is None:
            return EXIT_USAGE
        try:
            p = parse_program(text, mode, path)
        except ParseError as e:
            out.write(f"{path}: cannot format\n{e}\n")
            code = EXIT_DIAG
            continue
        new = print_program(p)
        if new == text:
            continue
        if check:
            out.write(f"{path}: would reformat\n")
            code = EXIT_DIAG
        else:
            try:
                Path(path).write_text(new, encoding="utf-8")
            except OSError as e:
                print(f"error: cannot write {path}: {e}", file=err)
                return EXIT_USAGE
            out.write(f"{path}: formatted\n")
    return code


# ---------------------------------------------------------------- argument parsing


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV} must be an integer, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_mutually_exclusive_group()
    for m in ("clc1", "clc2", "clc3"):
        g.add_argument(f"--{m}", dest="mode", action="store_const", const=m, help=f"use calculus level {m[-1]}")
    common.set_defaults(mode="clc3")
    common.add_argument("--format", choices=("text", "json"), default="text",
                        help="output format; json emits one record per line")

    ap = argparse.ArgumentParser(prog="clc", description="Check, run and fuzz programs of the box calculi.")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="parse and typecheck files")
    c.add_argument("paths", nargs="+")

    r = sub.add_parser("run", parents=[common], help="run a program on the abstract machine")
    r.add_argument("path")
    r.add_argument("--seed", type=int, default=None, help=f"scheduler seed (default ${SEED_ENV} or 0)")
    r.add_argument("--max-steps", type=int, default=100_000)
    r.add_argument("--validate", action="store_true", help="check every invariant after every step")
    r.add_argument("--no-typecheck", action="store_true",
                   help="UNSAFE: run without typechecking, to demonstrate the runtime alarms")
    r.add_argument("--trace", action="store_true", help="print every transition")
    r.add_argument("--heap-dump", action="store_true", help="print the machine state after every step")
    r.add_argument("--scheduler", choices=("random", "round-robin"), default="random")

    f = sub.add_parser("fuzz", parents=[common], help="generate and run well-typed programs with validation")
    f.add_argument("--programs", type=int, default=500)
    f.add_argument("--seeds", type=int, default=3, help="scheduler seeds per program")
    f.add_argument("--seed", type=int, default=None, help=f"first program seed (default ${SEED_ENV} or 0)")
    f.add_argument("--max-steps", type=int, default=20_000)
    f.add_argument("--no-shrink", action="store_true")
    f.add_argument("--reproducers", metavar="DIR", help="write shrunk reproducers here")
    f.add_argument("--report", metavar="FILE", help="write the structured report here")

    s = sub.add_parser("census", parents=[common], help="classify classes as ocap or insecure")
    s.add_argument("target", help="a .clc file or a directory of them")

    t = sub.add_parser("fmt", parents=[common], help="rewrite files in canonical form")
    t.add_argument("paths", nargs="+")
    t.add_argument("--check", action="store_true", help="report files that would change; write nothing")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    mode = _mode(args)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = _default_seed()
    if args.command == "check":
        return cmd_check(args.paths, mode, args.format)
    if args.command == "run":
        if args.max_steps <= 0:
            print("error: --max-steps must be positive", file=sys.stderr)
            return EXIT_USAGE
        return cmd_run(args.path, mode, seed, args.max_steps, args.validate, not args.no_typecheck, args.trace,
                       args.heap_dump, args.scheduler, args.format)
    if args.command == "fuzz":
        if args.programs <= 0 or args.seeds <= 0 or args.max_steps <= 0:
            print("error: --programs, --seeds and --max-steps must be positive", file=sys.stderr)
            return EXIT_USAGE
        return cmd_fuzz(mode, args.programs, args.seeds, seed, args.max_steps, not args.no_shrink,
                        args.reproducers, args.report, args.format)
    if args.command == "census":
        return cmd_census(args.target, mode, args.format)
    return cmd_fmt(args.paths, mode, args.check)


if __name__ == "__main__":
    sys.exit(main())
