from __future__ import annotations

import json

import pytest

from conftest import dynperm_files, load
from clc import mutations
from clc.fuzz import REDUCTION_RULES, FuzzReport, dynperm_sensor, fuzz, near_miss_sensor
from clc.gen import GenConfig
from clc.syntax import Mode


@pytest.mark.parametrize("mode,n,seeds", [(Mode.CLC1, 60, 1), (Mode.CLC2, 120, 2), (Mode.CLC3, 50, 3)])
def test_small_fuzz_is_clean_and_covers_rules(mode, n, seeds):
    rep = fuzz(GenConfig(mode=mode), n, seeds)
    assert rep.ok, rep.render_text()
    assert rep.missing_rules() == []
    assert rep.runs == n * seeds


def test_report_merge_and_json():
    a = fuzz(GenConfig(mode=Mode.CLC2), 10)
    b = fuzz(GenConfig(mode=Mode.CLC2), 10, first_seed=10)
    both = a.merge(b)
    assert both.programs == 20 and both.rules == a.rules + b.rules
    rec = json.loads(both.to_json())
    assert rec["programs"] == 20 and rec["alarms"] == []
    assert isinstance(FuzzReport(Mode.CLC2).render_text(), str)


def test_fuzz_is_deterministic():
    a = fuzz(GenConfig(mode=Mode.CLC3), 15, 2)
    b = fuzz(GenConfig(mode=Mode.CLC3), 15, 2)
    assert a.to_json() == b.to_json()


def test_capture_mutation_yields_small_reproducer():
    with mutations.enabled("capture-keeps-permission"):
        rep = fuzz(GenConfig(mode=Mode.CLC2), 30)
    assert rep.alarms and "boxSep" in rep.alarms[0].message
    assert rep.alarms[0].nodes <= 10
    assert rep.alarms[0].reproducer.startswith("// reproducer: program seed")


def test_keep_stack_mutation_is_caught():
    with mutations.enabled("keep-stack-after-box"):
        rep = fuzz(GenConfig(mode=Mode.CLC2), 60, shrink_alarms=False)
    assert rep.alarms


def test_send_mutation_breaks_isolation():
    with mutations.enabled("send-keeps-permission"):
        rep = fuzz(GenConfig(mode=Mode.CLC3), 30, 2, shrink_alarms=False)
    assert any("isolated" in a.message for a in rep.alarms)


def test_near_miss_sensor():
    clean = near_miss_sensor(60)
    assert not clean.caught, clean.detail
    with mutations.enabled("tnew-skips-ocap"):
        assert near_miss_sensor(60).caught


def test_dynperm_sensor():
    progs = [(p.name, load(p)) for p in dynperm_files()]
    assert len(progs) >= 5
    assert not dynperm_sensor(progs).caught
    with mutations.enabled("open-without-permission"):
        assert dynperm_sensor(progs).caught


def test_reduction_rule_lists():
    assert set(REDUCTION_RULES[Mode.CLC2]) < set(REDUCTION_RULES[Mode.CLC3])
    assert "E-Capture" not in REDUCTION_RULES[Mode.CLC1]
