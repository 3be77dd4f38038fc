from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from conftest import CORPUS, ROOT
from clc.cli import main


def cli(capsys, *args: str) -> tuple[int, str]:
    code = main(list(args))
    return code, capsys.readouterr().out


def test_check_clean_and_dirty(capsys, in_root):
    code, out = cli(capsys, "check", "--clc2", "corpus/clc2/capture_list.clc")
    assert code == 0 and out.endswith("ok\n")
    code, out = cli(capsys, "check", "corpus/negative/global_in_proc.clc")
    assert code == 1 and "[T-Proc] AmbientAuthority" in out


def test_check_missing_file(capsys):
    assert main(["check", "no/such/file.clc"]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_check_json_records(capsys, in_root):
    code, out = cli(capsys, "check", "--clc3", "--format", "json", "corpus/negative/double_send.clc")
    recs = [json.loads(line) for line in out.splitlines()]
    assert code == 1
    assert recs[0]["rule"] == "T-Send" and recs[0]["kind"] == "MissingPermission"
    assert recs[-1] == {"file": "corpus/negative/double_send.clc", "findings": 1, "ok": False}


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as ei:
        main(["run"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["check", "--clc1", "--clc2", "x.clc"])
    assert ei.value.code == 2


@pytest.mark.parametrize("args,code", [
    (["--clc1", "corpus/clc1/counter.clc"], 0),
    (["--clc3", "corpus/clc3/two_actors.clc", "--validate"], 0),
    (["--clc2", "corpus/clc2/null_select.clc"], 1),
    (["--clc2", "--no-typecheck", "corpus/dynperm/double_open.clc"], 3),
    (["--clc2", "corpus/dynperm/double_open.clc"], 1),       # typecheck rejects it first
    (["--clc1", "--max-steps", "3", "corpus/clc1/counter.clc"], 4),
    (["--clc1", "corpus/missing.clc"], 2),
])
def test_run_exit_codes(args, code, capsys, in_root):
    assert main(["run", *args]) == code


def test_run_trace_text(capsys, in_root):
    code, out = cli(capsys, "run", "--clc2", "--trace", "corpus/clc2/null_select.clc")
    lines = out.splitlines()
    assert code == 1 and "E-New" in lines[0]
    assert lines[-1].startswith("Stuck(NullDereference)")


def test_run_json_matches_golden(capsys, in_root):
    code, out = cli(capsys, "run", "--trace", "--format", "json", "--seed", "0", "--validate",
                    "corpus/clc3/two_actors.clc")
    assert code == 0
    assert out == (ROOT / "corpus" / "golden" / "two_actors.seed0.jsonl").read_text()


def test_seed_from_environment(capsys, monkeypatch, in_root):
    args = ["run", "--trace", "--format", "json", "corpus/clc3/pipeline.clc"]
    monkeypatch.setenv("CLC_SEED", "5")
    _, env_out = cli(capsys, *args)
    _, flag_out = cli(capsys, *args, "--seed", "5")
    assert env_out == flag_out
    monkeypatch.setenv("CLC_SEED", "oops")
    with pytest.raises(SystemExit):
        main(args)


def test_heap_dump(capsys, in_root):
    code, out = cli(capsys, "run", "--clc2", "--heap-dump", "--format", "json", "corpus/clc2/box_param.clc")
    recs = [json.loads(line) for line in out.splitlines()]
    dumps = [r for r in recs if "heap_dump" in r]
    assert dumps[0]["state"]["step"] == 0 and len(dumps) == recs[-1]["step"]  # the final Halt takes no dump


def test_fuzz_command(capsys, tmp_path):
    report = tmp_path / "r.json"
    code, out = cli(capsys, "fuzz", "--clc2", "--programs", "20", "--seeds", "1", "--report", str(report))
    assert code == 0 and out.startswith("fuzz clc2: 20 programs")
    assert json.loads(report.read_text())["programs"] == 20
    code, out = cli(capsys, "fuzz", "--clc3", "--programs", "5", "--format", "json")
    assert code == 0 and json.loads(out)["runs"] == 15


def test_fuzz_alarm_exit_code_and_reproducers(capsys, tmp_path):
    from clc import mutations

    with mutations.enabled("capture-keeps-permission"):
        code, _ = cli(capsys, "fuzz", "--clc2", "--programs", "10", "--seeds", "1",
                      "--reproducers", str(tmp_path))
    assert code == 3 and list(tmp_path.glob("repro_*.clc"))


def test_census_command(capsys, in_root):
    code, out = cli(capsys, "census", "--clc2", "corpus/census")
    assert code == 0 and out == (ROOT / "corpus" / "golden" / "census.txt").read_text()
    assert main(["census", "nowhere"]) == 2


def test_fmt_is_idempotent(capsys, tmp_path):
    messy = tmp_path / "m.clc"
    messy.write_text("class A extends AnyRef { var f: A }\nlet a = new A in let b = a.f in b")
    assert main(["fmt", "--clc1", "--check", str(messy)]) == 1
    assert main(["fmt", "--clc1", str(messy)]) == 0
    once = messy.read_text()
    assert main(["fmt", "--clc1", str(messy)]) == 0
    assert messy.read_text() == once
    assert main(["fmt", "--clc1", "--check", str(messy)]) == 0


def test_fmt_leaves_corpus_unchanged(capsys, tmp_path):
    for d, flag in (("clc1", "--clc1"), ("clc2", "--clc2"), ("clc3", "--clc3")):
        for f in sorted((CORPUS / d).glob("*.clc")):
            copy = tmp_path / f.name
            shutil.copy(f, copy)
            main(["fmt", flag, str(copy)])
            assert main(["fmt", flag, "--check", str(copy)]) == 0


def test_console_script_is_byte_identical(in_root):
    cmd = [sys.executable, "-m", "clc.cli", "run", "--format", "json", "--trace", "--seed", "3",
           "corpus/clc3/pipeline.clc"]
    a = subprocess.run(cmd, capture_output=True, cwd=ROOT)
    b = subprocess.run(cmd, capture_output=True, cwd=ROOT)
    assert a.returncode == b.returncode == 0 and a.stdout == b.stdout and a.stdout
