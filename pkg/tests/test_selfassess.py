from horizon.scorecard import CAPABILITY_IDS, FULL, NONE, check_compliance, derive_level
from horizon.selfassess import self_assess


def test_full_build_is_top_level_and_compliant():
    a = self_assess()
    assert tuple(a.scores) == CAPABILITY_IDS
    assert derive_level(a) == "L3" and check_compliance(a).compliant
    assert a.notes == {}


def test_without_watcher():
    a = self_assess(watcher=False)
    assert a.score("hotContextChangeManagement") == NONE
    assert derive_level(a) == "L2"
    assert check_compliance(a).gaps == ("hotContextChangeManagement",)
    assert "hotContextChangeManagement" in a.notes


def test_without_deletion():
    a = self_assess(deletion=False)
    assert a.score("featureDelete") == NONE
    # rule deletion is a separate capability and still works
    assert a.score("ruleDelete") == FULL
    assert check_compliance(a).gaps == ("featureDelete",)


def test_tool_name():
    assert self_assess(tool="mine").tool == "mine"
