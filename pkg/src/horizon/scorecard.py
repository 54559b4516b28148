"""Capability matrix, tool assessments, support levels and comparison reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from .errors import IncompleteAssessment

FULL, PARTIAL, NONE = "full", "partial", "none"
SUPPORT_ORDER = {NONE: 0, PARTIAL: 1, FULL: 2}
SYMBOLS = {FULL: "✓", PARTIAL: "~", NONE: "✗"}

REQUIRED, OPTIONAL, PARTIAL_TOLERATED = "required", "optional", "partialTolerated"

AREAS = (
    ("featureManagement", "Feature Management"),
    ("evaluationConfiguration", "Evaluation Configuration"),
    ("featureEvaluation", "Feature Evaluation"),
    ("integration", "Integration"),
    ("pricingDrivenAutomation", "Pricing-Driven Automation"),
)

LEVELS = ("L0", "L1", "L2", "L3")


@dataclass(frozen=True)
class Capability:
    id: str
    area: str
    title: str
    requirement: str = REQUIRED


CAPABILITIES: tuple[Capability, ...] = (
    Capability("featureCreate", "featureManagement", "Feature CREATE"),
    Capability("featureRead", "featureManagement", "Feature READ"),
    Capability("featureUpdate", "featureManagement", "Feature UPDATE"),
    Capability("featureDelete", "featureManagement", "Feature DELETE"),
    Capability("ruleCreate", "featureManagement", "Rule CREATE"),
    Capability("ruleRead", "featureManagement", "Rule READ"),
    Capability("ruleUpdate", "featureManagement", "Rule UPDATE"),
    Capability("ruleDelete", "featureManagement", "Rule DELETE"),
    Capability("featureDependencyManagement", "featureManagement", "Feature dependency management",
               PARTIAL_TOLERATED),
    Capability("centralizedFeatureManagement", "featureManagement", "Centralized feature management"),
    Capability("dynamicFeatureEvaluation", "evaluationConfiguration", "Dynamic feature evaluation"),
    Capability("booleanValueSupport", "evaluationConfiguration", "Boolean value support"),
    Capability("numericValueSupport", "evaluationConfiguration", "Numeric value support"),
    Capability("textValueSupport", "evaluationConfiguration", "Text value support"),
    Capability("contextAwareEvaluation", "evaluationConfiguration", "Context-aware evaluation"),
    Capability("customAttributes", "evaluationConfiguration", "Custom attributes for evaluations"),
    Capability("complexLogicalEvaluations", "evaluationConfiguration", "Complex logical evaluations"),
    Capability("singleFeatureEvaluation", "featureEvaluation", "Single feature evaluation"),
    Capability("multiFeatureEvaluation", "featureEvaluation", "Multi-feature evaluation", PARTIAL_TOLERATED),
    Capability("defaultValues", "featureEvaluation", "Default values support"),
    Capability("standardizedBooleanResults", "featureEvaluation", "Standardized boolean results"),
    Capability("serverSDK", "integration", "Server SDK"),
    Capability("clientSDK", "integration", "Client SDK"),
    Capability("apiBasedIntegration", "integration", "API-based integration", OPTIONAL),
    Capability("secureCommunication", "integration", "Secure communication"),
    Capability("pricingModelSupport", "pricingDrivenAutomation", "Support of pricing model"),
    Capability("pricingDrivenToggleGeneration", "pricingDrivenAutomation", "Pricing-driven toggle generation"),
    Capability("hotContextChangeManagement", "pricingDrivenAutomation", "Hot context change management"),
)

CAPABILITY_IDS = tuple(c.id for c in CAPABILITIES)
_BY_ID = {c.id: c for c in CAPABILITIES}


def capability(capability_id: str) -> Capability:
    return _BY_ID[capability_id]


# Each level lists the minimum support it adds on top of the previous one.
LEVEL_RULES: tuple[tuple[str, Mapping[str, str]], ...] = (
    ("L1", {"centralizedFeatureManagement": FULL, "dynamicFeatureEvaluation": FULL}),
    ("L2", {"contextAwareEvaluation": FULL, "singleFeatureEvaluation": FULL}),
    ("L3", {"pricingModelSupport": FULL, "pricingDrivenToggleGeneration": FULL,
            "hotContextChangeManagement": PARTIAL}),
)


@dataclass(frozen=True)
class ToolAssessment:
    tool: str
    scores: Mapping[str, str]
    notes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in CAPABILITY_IDS if c not in self.scores]
        unknown = sorted(set(self.scores) - set(CAPABILITY_IDS))
        if missing or unknown:
            parts = []
            if missing:
                parts.append(f"missing {', '.join(missing)}")
            if unknown:
                parts.append(f"unknown {', '.join(unknown)}")
            raise IncompleteAssessment(f"assessment of {self.tool!r}: {'; '.join(parts)}")
        bad = {k: v for k, v in self.scores.items() if v not in SUPPORT_ORDER}
        if bad:
            raise IncompleteAssessment(f"assessment of {self.tool!r}: invalid support values {bad}")

    def score(self, capability_id: str) -> str:
        return self.scores[capability_id]

    def with_score(self, capability_id: str, support: str) -> "ToolAssessment":
        return ToolAssessment(self.tool, {**self.scores, capability_id: support}, self.notes)

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"tool": self.tool, "scores": {c: self.scores[c] for c in CAPABILITY_IDS}}
        if self.notes:
            doc["notes"] = dict(self.notes)
        return doc


def assessment_from_dict(data: Mapping[str, Any]) -> ToolAssessment:
    if not isinstance(data, Mapping) or "tool" not in data or not isinstance(data.get("scores"), Mapping):
        raise IncompleteAssessment("an assessment needs 'tool' and a 'scores' mapping")
    return ToolAssessment(str(data["tool"]), dict(data["scores"]), dict(data.get("notes") or {}))


def load_assessment(path: str | Path) -> ToolAssessment:
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return assessment_from_dict(data)


def load_assessments(path: str | Path) -> list[ToolAssessment]:
    """Load one file, or every .yaml/.yml/.json file in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".yaml", ".yml", ".json"))
        return [load_assessment(p) for p in files]
    return [load_assessment(path)]


def bundled_assessments() -> list[ToolAssessment]:
    """The five reference tools, in comparison-table order."""
    base = Path(__file__).parent / "fixtures" / "tools"
    order = ("unleash", "devcycle", "launchdarkly", "togglz", "pricing4saas")
    return [load_assessment(base / f"{name}.yaml") for name in order]


def _at_least(support: str, minimum: str) -> bool:
    return SUPPORT_ORDER[support] >= SUPPORT_ORDER[minimum]


def derive_level(assessment: ToolAssessment,
                 rules: Sequence[tuple[str, Mapping[str, str]]] = LEVEL_RULES) -> str:
    level = "L0"
    for name, requirements in rules:
        if not all(_at_least(assessment.score(c), m) for c, m in requirements.items()):
            break
        level = name
    return level


@dataclass(frozen=True)
class Compliance:
    compliant: bool
    gaps: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"compliant": self.compliant, "gaps": list(self.gaps)}


def check_compliance(assessment: ToolAssessment) -> Compliance:
    gaps = []
    for cap in CAPABILITIES:
        support = assessment.score(cap.id)
        if cap.requirement == REQUIRED and support != FULL:
            gaps.append(cap.id)
        elif cap.requirement == PARTIAL_TOLERATED and support == NONE:
            gaps.append(cap.id)
    return Compliance(not gaps, tuple(gaps))


# -- reports -----------------------------------------------------------------


def report_data(assessments: Iterable[ToolAssessment]) -> dict[str, Any]:
    assessments = list(assessments)
    if not assessments:
        raise ValueError("a report needs at least one assessment")
    tools = [a.tool for a in assessments]
    rows = []
    for area, _ in AREAS:
        for cap in CAPABILITIES:
            if cap.area == area:
                rows.append({
                    "capability": cap.id,
                    "area": area,
                    "title": cap.title,
                    "cells": {a.tool: SYMBOLS[a.score(cap.id)] for a in assessments},
                })
    return {
        "tools": tools,
        "rows": rows,
        "levels": {a.tool: derive_level(a) for a in assessments},
        "compliance": {a.tool: check_compliance(a).to_dict() for a in assessments},
    }


def render_report(assessments: Iterable[ToolAssessment], fmt: str = "markdown") -> str:
    data = report_data(assessments)
    if fmt in ("markdown", "md"):
        return _markdown(data)
    if fmt == "csv":
        return _csv(data)
    if fmt == "json":
        return json.dumps(data, ensure_ascii=False, indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def _markdown(data: dict[str, Any]) -> str:
    tools = data["tools"]
    area_titles = dict(AREAS)
    lines = [
        "| Capability | " + " | ".join(tools) + " |",
        "|---|" + "---|" * len(tools),
    ]
    current = None
    for row in data["rows"]:
        if row["area"] != current:
            current = row["area"]
            lines.append(f"| **{area_titles[current]}** |" + " |" * len(tools))
        lines.append(f"| {row['title']} | " + " | ".join(row["cells"][t] for t in tools) + " |")
    lines.append("| **Level** | " + " | ".join(data["levels"][t] for t in tools) + " |")
    lines.append("| **Compliant** | "
                 + " | ".join("yes" if data["compliance"][t]["compliant"] else "no" for t in tools) + " |")
    return "\n".join(lines) + "\n"


def _csv(data: dict[str, Any]) -> str:
    tools = data["tools"]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["area", "capability", "title", *tools])
    for row in data["rows"]:
        writer.writerow([row["area"], row["capability"], row["title"], *(row["cells"][t] for t in tools)])
    writer.writerow(["", "level", "Level", *(data["levels"][t] for t in tools)])
    writer.writerow(["", "compliant", "Compliant",
                     *("yes" if data["compliance"][t]["compliant"] else "no" for t in tools)])
    return out.getvalue()


def parse_markdown_cells(text: str) -> dict[str, dict[str, str]]:
    """Read capability cells back out of a markdown report: title -> tool -> symbol."""
    lines = [l for l in text.splitlines() if l.startswith("|")]
    header = [c.strip() for c in lines[0].strip("|").split("|")]
    tools = header[1:]
    cells = {}
    for line in lines[2:]:
        parts = [c.strip() for c in line.strip("|").split("|")]
        title, values = parts[0], parts[1:]
        if title.startswith("**"):
            continue
        cells[title] = dict(zip(tools, values))
    return cells


def parse_csv_cells(text: str) -> dict[str, dict[str, str]]:
    rows = list(csv.reader(io.StringIO(text)))
    tools = rows[0][3:]
    return {r[2]: dict(zip(tools, r[3:])) for r in rows[1:] if r[0]}
