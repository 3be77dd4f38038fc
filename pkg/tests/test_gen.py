from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clc.gen import GenConfig, gen_program, shrink, typechecks
from clc.parser import print_program
from clc.syntax import Capture, Mode, Proc, Send, Swap, node_count
from clc.fuzz import has_node


def test_same_seed_same_program():
    for mode in Mode:
        assert gen_program(GenConfig(seed=5, mode=mode)) == gen_program(GenConfig(seed=5, mode=mode))
        assert print_program(gen_program(GenConfig(seed=5, mode=mode))) == \
            print_program(gen_program(GenConfig(seed=5, mode=mode)))


def test_size_zero_is_trivial():
    p = gen_program(GenConfig(seed=1, size=0))
    assert p.classes == () and node_count(p) <= 3


@pytest.mark.parametrize("bad", [dict(max_classes=0), dict(max_depth=0), dict(size=-1)])
def test_budgets_must_be_positive(bad):
    with pytest.raises(ValueError):
        GenConfig(**bad)


def test_toggles_are_coerced_to_the_mode():
    c = GenConfig(mode=Mode.CLC1)
    assert not (c.capture or c.swap or c.procs)
    assert not GenConfig(mode=Mode.CLC2).procs


def test_budgets_are_respected():
    for seed in range(40):
        p = gen_program(GenConfig(seed=seed, max_classes=2, max_fields=1, max_methods=1))
        assert len(p.classes) <= 2
        assert all(len(c.fields) <= 1 and len(c.methods) <= 1 for c in p.classes)


def test_feature_toggles_are_honoured():
    for seed in range(40):
        p = gen_program(GenConfig(seed=seed, mode=Mode.CLC3, capture=False, swap=False, procs=False))
        assert not has_node(p, (Capture, Swap, Send, Proc))


def test_feature_frequencies():
    n = 200
    cs = sum(has_node(gen_program(GenConfig(seed=s, mode=Mode.CLC2)), (Capture, Swap)) for s in range(n))
    snd = sum(has_node(gen_program(GenConfig(seed=s, mode=Mode.CLC3)), (Send,)) for s in range(n))
    assert 0.35 <= cs / n <= 0.8
    assert 0.45 <= snd / n <= 0.9


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 1_000_000), st.sampled_from(list(Mode)), st.integers(1, 4))
def test_generated_programs_typecheck(seed, mode, size):
    assert typechecks(gen_program(GenConfig(seed=seed, mode=mode, size=size)))


def test_shrink_leaves_passing_programs_alone():
    p = gen_program(GenConfig(seed=3))
    assert shrink(p, lambda q: False) is p


def test_shrink_drops_irrelevant_classes():
    p = gen_program(GenConfig(seed=11))
    assert len(p.classes) > 1
    small = shrink(p, lambda q: True)
    assert len(small.classes) <= 1 and typechecks(small)
    assert node_count(small) <= 3


def test_shrink_preserves_predicate_and_typability():
    p = next(gen_program(GenConfig(seed=s)) for s in range(100)
             if has_node(gen_program(GenConfig(seed=s)), (Capture,)))
    small = shrink(p, lambda q: has_node(q, (Capture,)))
    assert has_node(small, (Capture,)) and typechecks(small)
    assert node_count(small) < node_count(p)
