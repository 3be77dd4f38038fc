from __future__ import annotations

import pytest

from conftest import CORPUS, checked, dynperm_files, header, load, mode_of, negative_files, positive_files
from clc import mutations
from clc.cli import diagnose
from clc.errors import ProgramRejected
from clc.gen import GenConfig, gen_program
from clc.parser import parse_program, parse_term
from clc.syntax import BotT, ClassT, GuardedT, Mode
from clc.typecheck import Effect, TypeEnv, check_program, empty_env, typecheck_term

E_CLASS = "class E extends AnyRef {\n  var next: E\n}\n\n"


def rejected(src: str, mode: Mode = Mode.CLC2):
    p = parse_program(src, mode)
    with pytest.raises(ProgramRejected) as ei:
        check_program(p)
    return [(e.rule, e.kind) for e in ei.value.errors]


@pytest.mark.parametrize("path", positive_files(), ids=lambda p: p.name)
def test_positive_corpus_typechecks(path):
    check_program(load(path))


@pytest.mark.parametrize("path", negative_files(), ids=lambda p: p.name)
def test_negative_corpus_reports_expected_rule(path):
    text = path.read_text()
    d = diagnose(text, mode_of(path), str(path))
    assert header(text, "expect") in [f.tag for f in d.findings], [f.render() for f in d.findings]


@pytest.mark.parametrize("path", dynperm_files(), ids=lambda p: p.name)
def test_dynperm_corpus_is_rejected_statically(path):
    d = diagnose(path.read_text(), mode_of(path), str(path))
    assert any(f.kind == "MissingPermission" for f in d.findings)


@pytest.mark.parametrize("mode", list(Mode))
def test_generator_output_always_typechecks(mode):
    for seed in range(100):
        check_program(gen_program(GenConfig(seed=seed, mode=mode)))


def test_box_introduces_guarded_type_and_permission():
    p, ty = checked(E_CLASS + "box[E] { b =>\n  b\n}\n")
    env, sigma = ty.lookup(p.main.body)
    t = env.lookup("b")
    assert isinstance(t, GuardedT) and t.cls == "E" and t.q in env.perms


def test_continuation_terms_have_bottom_type():
    p, ty = checked(E_CLASS + "box[E] { b =>\n  b\n}\n")
    assert ty.main_type == BotT()


def test_capture_consumes_and_open_is_rejected():
    assert ("T-Open", "MissingPermission") in rejected(
        E_CLASS + "box[E] { a =>\n  box[E] { b =>\n    capture(a.next, b) { m =>\n"
        "      let r = b.open { e =>\n        e\n      } in\n      r\n    }\n  }\n}\n")


def test_open_body_runs_under_ocap():
    leaky = ("class Leaky extends AnyRef {\n  def m(x: E): E =\n    let g = global in\n    x\n}\n\n")
    kinds = rejected(E_CLASS + leaky + "box[E] { b =>\n  let r = b.open { e =>\n    let l = new Leaky in\n"
                     "    e\n  } in\n  b\n}\n")
    assert ("T-New", "NonOcapNew") in kinds
    kinds = rejected(E_CLASS + "box[E] { b =>\n  let r = b.open { e =>\n    let g = global in\n"
                     "    e\n  } in\n  b\n}\n")
    assert ("T-Open", "AmbientAuthority") in kinds


def test_open_may_read_inside_the_box():
    checked(E_CLASS + "box[E] { b =>\n  let r = b.open { e =>\n    let n = e.next in\n    n\n  } in\n  b\n}\n")


def test_tnew_mutation_lets_non_ocap_new_through():
    leaky = ("class Leaky extends AnyRef {\n  def m(x: E): E =\n    let g = global in\n    x\n}\n\n")
    src = E_CLASS + leaky + "box[E] { b =>\n  let r = b.open { e =>\n    let l = new Leaky in\n    e\n  } in\n  b\n}\n"
    with mutations.enabled("tnew-skips-ocap"):
        check_program(parse_program(src, Mode.CLC2))
    with pytest.raises(ProgramRejected):
        check_program(parse_program(src, Mode.CLC2))


def test_unknown_mutation_name():
    with pytest.raises(KeyError):
        with mutations.enabled("nope"):
            pass


def test_typecheck_term_directly():
    p = parse_program(E_CLASS + "let n = null in\nn\n", Mode.CLC2)
    from clc.classtable import ClassTable

    ct = ClassTable(p)
    env = TypeEnv({"x": ClassT("E")})
    assert typecheck_term(ct, env, parse_term("let y = x.next in\ny")) == ClassT("E")
    assert typecheck_term(ct, env, parse_term("let y = new E in\ny")) == ClassT("E")
    assert empty_env(Effect.OCAP).effect is Effect.OCAP


def test_global_reads_globals_in_main():
    src = E_CLASS + "var g: E\n\nlet x = global.g in\nx\n"
    p, ty = checked(src)
    assert ty.main_type == ClassT("E")


def test_proc_body_may_not_touch_global():
    src = E_CLASS + "let p = proc { (m: Box[E]) =>\n  let g = global in\n  m\n} in\np\n"
    assert ("T-Proc", "AmbientAuthority") in rejected(src, Mode.CLC3)


def test_errors_have_spans_for_cli_output():
    d = diagnose((CORPUS / "negative" / "global_in_proc.clc").read_text(), Mode.CLC3, "x.clc")
    assert d.findings[0].span.startswith("x.clc:")
