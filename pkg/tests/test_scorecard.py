import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon.errors import IncompleteAssessment
from horizon.scorecard import (
    CAPABILITY_IDS,
    FULL,
    NONE,
    PARTIAL,
    SUPPORT_ORDER,
    ToolAssessment,
    assessment_from_dict,
    bundled_assessments,
    check_compliance,
    derive_level,
    load_assessments,
    parse_csv_cells,
    parse_markdown_cells,
    render_report,
)

LEVEL_ORDER = {"L0": 0, "L1": 1, "L2": 2, "L3": 3}


def uniform(support, tool="t"):
    return ToolAssessment(tool, {c: support for c in CAPABILITY_IDS})


def test_capability_count():
    assert len(CAPABILITY_IDS) == len(set(CAPABILITY_IDS)) == 28


def test_extremes():
    assert derive_level(uniform(FULL)) == "L3"
    assert check_compliance(uniform(FULL)).compliant
    assert derive_level(uniform(NONE)) == "L0"
    none = check_compliance(uniform(NONE))
    assert not none.compliant and "apiBasedIntegration" not in none.gaps


def test_partial_tolerance():
    base = uniform(FULL)
    for cap in ("multiFeatureEvaluation", "featureDependencyManagement"):
        assert check_compliance(base.with_score(cap, PARTIAL)).compliant
        assert check_compliance(base.with_score(cap, NONE)).gaps == (cap,)
    assert check_compliance(base.with_score("apiBasedIntegration", NONE)).compliant
    assert check_compliance(base.with_score("featureCreate", PARTIAL)).gaps == ("featureCreate",)


def test_level_ladder():
    full = uniform(FULL)
    assert derive_level(full.with_score("hotContextChangeManagement", PARTIAL)) == "L3"
    assert derive_level(full.with_score("hotContextChangeManagement", NONE)) == "L2"
    assert derive_level(full.with_score("singleFeatureEvaluation", PARTIAL)) == "L1"
    # a higher rung cannot be reached over a missing lower one
    assert derive_level(full.with_score("dynamicFeatureEvaluation", NONE)) == "L0"


@pytest.mark.parametrize("scores", [
    {c: FULL for c in CAPABILITY_IDS[:-1]},
    {**{c: FULL for c in CAPABILITY_IDS}, "teleport": FULL},
    {**{c: FULL for c in CAPABILITY_IDS}, "featureCreate": "yes"},
])
def test_incomplete_assessments(scores):
    with pytest.raises(IncompleteAssessment):
        ToolAssessment("x", scores)


def test_from_dict_requires_scores():
    with pytest.raises(IncompleteAssessment):
        assessment_from_dict({"tool": "x"})


def test_load_directory(tmp_path):
    for a in bundled_assessments():
        (tmp_path / f"{a.tool.lower()}.yaml").write_text(yaml.safe_dump(a.to_dict()))
    (tmp_path / "extra.json").write_text(json.dumps(uniform(FULL, "Zed").to_dict()))
    (tmp_path / "README.txt").write_text("ignored")
    loaded = load_assessments(tmp_path)
    assert len(loaded) == 6
    assert {a.tool for a in loaded} == {a.tool for a in bundled_assessments()} | {"Zed"}


def test_formats_agree():
    tools = bundled_assessments()
    md = parse_markdown_cells(render_report(tools, "markdown"))
    csv = parse_csv_cells(render_report(tools, "csv"))
    data = json.loads(render_report(tools, "json"))
    from_json = {row["title"]: row["cells"] for row in data["rows"]}
    assert md == csv == from_json
    assert len(from_json) == 28


def test_unknown_format_and_empty_report():
    with pytest.raises(ValueError):
        render_report(bundled_assessments(), "xml")
    with pytest.raises(ValueError):
        render_report([], "markdown")


supports = st.sampled_from([NONE, PARTIAL, FULL])
assessments = st.builds(lambda vals: ToolAssessment("t", dict(zip(CAPABILITY_IDS, vals))),
                        st.lists(supports, min_size=28, max_size=28))


@settings(max_examples=300, deadline=None)
@given(assessments, st.sampled_from(CAPABILITY_IDS), supports)
def test_raising_a_score_never_lowers_the_outcome(a, cap, new):
    if SUPPORT_ORDER[new] < SUPPORT_ORDER[a.score(cap)]:
        return
    b = a.with_score(cap, new)
    assert LEVEL_ORDER[derive_level(b)] >= LEVEL_ORDER[derive_level(a)]
    assert set(check_compliance(b).gaps) <= set(check_compliance(a).gaps)


@settings(max_examples=300, deadline=None)
@given(assessments)
def test_compliant_tools_reach_the_top_level_when_hot_reload_is_partial(a):
    # compliance needs every level rung at full except hot reload, which is partial-or-better
    if check_compliance(a).compliant and a.score("hotContextChangeManagement") != NONE:
        assert derive_level(a) == "L3"
