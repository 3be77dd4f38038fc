from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CORPUS, all_corpus_files, load, mode_of
from clc.gen import GenConfig, gen_program
from clc.parser import ParseError, parse_program, parse_term, print_program, print_term, tokenize
from clc.syntax import BoxCont, BoxT, ClassT, Invoke, Let, Mode, Null, ProcT, Var, free_vars, node_count


def diags(src: str, mode: Mode = Mode.CLC2):
    with pytest.raises(ParseError) as ei:
        parse_program(src, mode)
    return ei.value.diagnostics


def test_parses_minimal_program():
    p = parse_program("let n = null in\nn\n", Mode.CLC1)
    assert p.classes == () and p.main == Let("n", Null(), Var("n"))
    assert node_count(p) == 3


def test_class_and_method_shape():
    p = parse_program("""
class A extends AnyRef {
  var f: A
  var u: Box[A]
  def m(x: Box[A]): A =
    let y = this.f in
    y
}

let a = new A in
let r = a.m(a) in
r
""", Mode.CLC2)
    (a,) = p.classes
    assert a.fields == (("f", ClassT("A")), ("u", BoxT("A")))
    assert a.methods[0].param_type == BoxT("A")
    assert isinstance(p.main.body.expr, Invoke)


def test_proc_type_in_clc3():
    p = parse_program("""
class M extends AnyRef {
  def go(p: Proc[M]): M =
    let n = null in
    n
}

let n = null in
n
""", Mode.CLC3)
    assert p.classes[0].methods[0].param_type == ProcT("M")


@pytest.mark.parametrize("src,kind", [
    ("let x = in x", "syntax"),
    ("let x = null in x @", "lexical"),
    ("class A { }\nlet n = null in n", "syntax"),
    ("let x = new A in let y = x.f.g in y", "syntax"),
])
def test_syntax_errors_have_kind_and_position(src, kind):
    (d,) = diags(src)[:1]
    assert d.kind == kind
    assert d.span is not None and d.span.line == 1


def test_expected_tokens_are_listed():
    (d,) = diags("let x = in x")
    assert "'null'" in d.expected and "identifier" in d.expected


def test_anf_and_structure_violations():
    d = diags("let x = let y = null in y in x")
    assert d[0].kind == "anf" and d[0].production == "e"
    d = diags("class A extends AnyRef {\n var f: A\n var f: A\n}\nlet n = null in n")
    assert d[0].kind == "structure" and "duplicate field" in d[0].message


def test_mode_gates_features():
    src = "box[A] { b =>\n  b\n}\n"
    prog = "class A extends AnyRef {\n}\n\n" + src
    assert isinstance(parse_program(prog, Mode.CLC2).main, BoxCont)
    assert any("requires CLC2" in d.message for d in diags(prog, Mode.CLC1))
    procsrc = "class A extends AnyRef {\n}\n\nlet p = proc { (m: Box[A]) =>\n  m\n} in\np\n"
    parse_program(procsrc, Mode.CLC3)
    assert diags(procsrc, Mode.CLC2)


def test_reserved_names():
    assert diags("class AnyRef extends AnyRef {\n}\nlet n = null in n")
    assert diags("var global: A\nlet n = null in n")


def test_tokenizer_skips_comments():
    toks = tokenize("// hello\nlet x = null in x // bye\n")
    assert [t.text for t in toks if t.kind != "eof"][:2] == ["let", "x"]


def test_parse_term_and_free_vars():
    t = parse_term("let y = x.f in\nlet z = y.m(w) in\nz")
    assert free_vars(t) == {"x", "w"}
    assert parse_term(print_term(t)) == t


# ---------------------------------------------------------------- round trips


@pytest.mark.parametrize("path", all_corpus_files(), ids=lambda p: str(p.relative_to(CORPUS)))
def test_corpus_round_trip(path):
    try:
        p = load(path)
    except ParseError:
        pytest.skip("negative parse example")
    text = print_program(p)
    q = parse_program(text, mode_of(path))
    assert q == p
    assert print_program(q) == text


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(list(Mode)))
def test_generated_round_trip(seed, mode):
    p = gen_program(GenConfig(seed=seed, mode=mode))
    text = print_program(p)
    assert parse_program(text, mode) == p
