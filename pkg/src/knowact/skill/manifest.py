"""Read and write skill packages.

A package is a directory holding ``skill.md`` and a ``validators/``
subdirectory.  ``skill.md`` opens with a ``---`` delimited YAML frontmatter
block followed by ``# Intent``, ``# Procedure``, optional ``# Constraints``
and ``# Anti-patterns``, and ``# Tools`` sections.
"""

from __future__ import annotations

import os
import re
from pathlib import Path, PurePosixPath
from typing import Any

import yaml

from knowact.errors import MalformedField, MissingComponent, ScriptNotFound
from knowact.skill.model import (
    ApprovalGate,
    ApprovalMode,
    BlastRadius,
    ChangeWindow,
    Continuation,
    DataClassification,
    Environment,
    EscalationTarget,
    GovernanceConstraints,
    IntentDeclaration,
    MaxScope,
    OrgMetadata,
    Procedure,
    ServiceTier,
    Skill,
    SkillId,
    ToolBinding,
    TriggerCondition,
    TriggerKind,
    ValidatorKind,
    ValidatorSpec,
    Version,
)
from knowact.skill.tokens import summary_view, token_cost

MANIFEST_NAME = "skill.md"

ORG_KEYS = ("tier", "environment", "owner")
ORG_OPTIONAL_KEYS = ("sla", "escalation-contact", "cost-center", "data-classification", "catalog-ref")
GOVERNANCE_KEYS = ("roles", "compliance", "change-window", "approvals", "blast-radius")
KNOWN_KEYS = frozenset(
    ("id", "version", "continuations", "validators", "triggers")
    + ORG_KEYS
    + ORG_OPTIONAL_KEYS
    + GOVERNANCE_KEYS
)

_STEP_RE = re.compile(r"^(\d+)\.\s+(.*)$")
_TOOL_RE = re.compile(r"^(?P<id>[^\s(]+)\s*(?:\((?P<params>[^)]*)\))?\s*(?:auth=(?P<auth>\S+))?\s*$")


def parse_skill(package_root: str | os.PathLike[str]) -> Skill:
    root = Path(package_root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise MalformedField(str(manifest), "skill manifest not found")
    text = manifest.read_text(encoding="utf-8")
    return parse_manifest(text, root)


def split_frontmatter(text: str) -> tuple[dict[str, Any], str]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "---":
        raise MalformedField("frontmatter", "manifest must start with a '---' line")
    for i, line in enumerate(lines[1:], 1):
        if line.strip() == "---":
            break
    else:
        raise MalformedField("frontmatter", "unterminated frontmatter block")
    try:
        data = yaml.safe_load("\n".join(lines[1:i])) or {}
    except yaml.YAMLError as exc:
        raise MalformedField("frontmatter", f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedField("frontmatter", "frontmatter must be a key-value mapping")
    return data, "\n".join(lines[i + 1 :])


def split_sections(body: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in body.splitlines():
        if line.startswith("# "):
            title = line[2:].strip().lower()
            if title in sections:
                raise MalformedField(f"section.{title}", "section appears twice")
            current = sections[title] = []
        elif current is not None:
            current.append(line)
        elif line.strip():
            raise MalformedField("body", f"text outside any section: {line.strip()!r}")
    return sections


def parse_manifest(text: str, package_root: Path | None = None) -> Skill:
    front, body = split_frontmatter(text)
    unknown = sorted(set(front) - KNOWN_KEYS)
    if unknown:
        raise MalformedField(f"frontmatter.{unknown[0]}", "unknown key")
    sections = split_sections(body)

    for key in ("id", "version"):
        if key not in front:
            raise MalformedField(key, "required key is missing")
    version = Version.parse(front["version"])
    skill_id = SkillId.parse(str(front["id"])).with_version(version)

    if "intent" not in sections:
        raise MissingComponent("intent")
    if "procedure" not in sections:
        raise MissingComponent("procedure")
    if "tools" not in sections:
        raise MissingComponent("tools")
    if not any(k in front for k in ORG_KEYS):
        raise MissingComponent("org")
    if not any(k in front for k in GOVERNANCE_KEYS):
        raise MissingComponent("governance")
    if "continuations" not in front:
        raise MissingComponent("continuations")
    if "validators" not in front:
        raise MissingComponent("validators")

    intent = IntentDeclaration(
        description=" ".join(" ".join(sections["intent"]).split()),
        triggers=tuple(_trigger(t) for t in _as_list(front.get("triggers"), "triggers")),
    )
    procedure = Procedure(
        steps=_numbered(sections["procedure"]),
        constraints=_bullets(sections.get("constraints", []), "constraints"),
        anti_patterns=_bullets(sections.get("anti-patterns", []), "anti-patterns"),
    )
    tools = tuple(_tool(line) for line in _bullets(sections["tools"], "tools"))
    org = _org(front)
    governance = _governance(front)
    continuations = _continuations(front["continuations"], skill_id.namespace)
    validators = tuple(
        _validator(v, package_root) for v in _as_list(front["validators"], "validators")
    )

    skill = Skill(
        id=skill_id,
        intent=intent,
        procedure=procedure,
        tools=tools,
        org=org,
        governance=governance,
        continuations=continuations,
        validators=validators,
        package_root=package_root,
    )
    body_cost = token_cost(text)
    summary_cost = token_cost(summary_view(skill))
    return Skill(
        **{f: getattr(skill, f) for f in _STRUCTURAL_FIELDS},
        body_token_cost=body_cost,
        summary_token_cost=summary_cost,
        package_root=package_root,
    )


_STRUCTURAL_FIELDS = (
    "id", "intent", "procedure", "tools", "org", "governance", "continuations", "validators",
)


def _as_list(value: Any, path: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise MalformedField(path, "expected a list")
    return value


def _as_map(value: Any, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise MalformedField(path, "expected a mapping")
    return value


def _enum(cls, value: Any, path: str):
    try:
        return cls(str(value))
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise MalformedField(path, f"{value!r} is not one of: {allowed}") from None


def _numbered(lines: list[str]) -> tuple[str, ...]:
    steps: list[str] = []
    for line in lines:
        m = _STEP_RE.match(line.strip())
        if m:
            if int(m.group(1)) != len(steps) + 1:
                raise MalformedField("procedure", f"step {m.group(1)} is out of order")
            steps.append(m.group(2).strip())
        elif line.strip():
            if not steps or not line[:1].isspace():
                raise MalformedField("procedure", f"expected a numbered step: {line.strip()!r}")
            steps[-1] = f"{steps[-1]} {line.strip()}"
    return tuple(steps)


def _bullets(lines: list[str], path: str) -> tuple[str, ...]:
    items: list[str] = []
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("- "):
            items.append(stripped[2:].strip())
        elif stripped:
            if not items or not line[:1].isspace():
                raise MalformedField(path, f"expected a '- ' bullet: {stripped!r}")
            items[-1] = f"{items[-1]} {stripped}"
    return tuple(items)


def _tool(line: str) -> ToolBinding:
    m = _TOOL_RE.match(line)
    if not m:
        raise MalformedField("tools", f"cannot read tool binding {line!r}")
    params = []
    for chunk in filter(None, (p.strip() for p in (m.group("params") or "").split(","))):
        name, sep, type_tag = chunk.partition(":")
        if not sep or not name.strip() or not type_tag.strip():
            raise MalformedField("tools", f"parameter must be 'name: type', got {chunk!r}")
        params.append((name.strip(), type_tag.strip()))
    return ToolBinding(m.group("id"), tuple(params), m.group("auth"))


def _trigger(item: Any) -> TriggerCondition:
    if isinstance(item, str):
        return TriggerCondition(TriggerKind.KEYWORD, item)
    item = _as_map(item, "triggers")
    return TriggerCondition(
        kind=_enum(TriggerKind, item.get("kind", "keyword"), "triggers.kind"),
        value=str(item.get("value", "")),
        key=str(item.get("key", "")),
    )


def _org(front: dict[str, Any]) -> OrgMetadata:
    for key in ORG_KEYS:
        if key not in front:
            raise MalformedField(key, "organizational metadata key is missing")
    optional = {k: front.get(k) for k in ORG_OPTIONAL_KEYS}
    return OrgMetadata(
        owner_team=str(front["owner"]),
        service_tier=_enum(ServiceTier, front["tier"], "tier"),
        environment=_enum(Environment, front["environment"], "environment"),
        sla=_opt_str(optional["sla"]),
        escalation_contact=_opt_str(optional["escalation-contact"]),
        cost_center=_opt_str(optional["cost-center"]),
        data_classification=(
            None
            if optional["data-classification"] is None
            else _enum(DataClassification, optional["data-classification"], "data-classification")
        ),
        catalog_ref=_opt_str(optional["catalog-ref"]),
    )


def _opt_str(value: Any) -> str | None:
    return None if value is None else str(value)


def _governance(front: dict[str, Any]) -> GovernanceConstraints:
    window = front.get("change-window")
    if window is not None and not isinstance(window, str):
        raise MalformedField("change-window", "write the window as a quoted string")
    radius = _as_map(front.get("blast-radius"), "blast-radius")
    extra = set(radius) - {"readable", "writable", "max-scope"}
    if extra:
        raise MalformedField(f"blast-radius.{sorted(extra)[0]}", "unknown key")
    gates = []
    for gate in _as_list(front.get("approvals"), "approvals"):
        gate = _as_map(gate, "approvals")
        gates.append(
            ApprovalGate(
                condition=str(gate.get("condition") or ""),
                approver_role=str(gate.get("approver") or ""),
                mode=_enum(ApprovalMode, gate.get("mode", "synchronous-blocking"), "approvals.mode"),
            )
        )
    return GovernanceConstraints(
        required_roles=frozenset(str(r) for r in _as_list(front.get("roles"), "roles")),
        approval_gates=tuple(gates),
        change_window=None if window is None else ChangeWindow.parse(window),
        blast_radius=BlastRadius(
            readable=frozenset(str(p) for p in _as_list(radius.get("readable"), "blast-radius.readable")),
            writable=frozenset(str(p) for p in _as_list(radius.get("writable"), "blast-radius.writable")),
            max_scope=_enum(MaxScope, radius.get("max-scope", "single-service"), "blast-radius.max-scope"),
        ),
        compliance_tags=frozenset(str(t) for t in _as_list(front.get("compliance"), "compliance")),
    )


def _continuations(value: Any, namespace: str) -> Continuation:
    data = _as_map(value, "continuations")
    extra = set(data) - {"on-success", "on-failure", "escalation"}
    if extra:
        raise MalformedField(f"continuations.{sorted(extra)[0]}", "unknown key")
    escalations = []
    for item in _as_list(data.get("escalation"), "continuations.escalation"):
        item = _as_map(item, "continuations.escalation")
        escalations.append(
            EscalationTarget(condition=str(item.get("condition") or ""), target=str(item.get("target") or ""))
        )
    return Continuation(
        on_success=tuple(
            SkillId.parse(s, namespace) for s in _as_list(data.get("on-success"), "continuations.on-success")
        ),
        on_failure=tuple(
            SkillId.parse(s, namespace) for s in _as_list(data.get("on-failure"), "continuations.on-failure")
        ),
        on_escalation=tuple(escalations),
    )


def _validator(item: Any, package_root: Path | None) -> ValidatorSpec:
    item = _as_map(item, "validators")
    path = str(item.get("path") or "")
    rel = PurePosixPath(path)
    if not path or rel.is_absolute() or ".." in rel.parts:
        raise MalformedField("validators.path", f"must be a relative path inside the package: {path!r}")
    if package_root is not None:
        script = package_root / rel
        if not script.is_file():
            raise ScriptNotFound(path)
        if not os.access(script, os.X_OK):
            raise MalformedField("validators.path", f"{path} is not executable")
    try:
        timeout = float(item.get("timeout-seconds", 30))
    except (TypeError, ValueError):
        raise MalformedField("validators.timeout-seconds", "must be a number") from None
    return ValidatorSpec(
        kind=_enum(ValidatorKind, item.get("kind"), "validators.kind"),
        script_path=path,
        timeout=timeout,
        verifies=frozenset(str(k) for k in _as_list(item.get("verifies"), "validators.verifies")),
    )


def _ref(target: SkillId, namespace: str) -> str:
    text = str(target)
    return text[len(namespace) + 1 :] if target.namespace == namespace else text


def serialize_skill(skill: Skill) -> str:
    """Render ``skill`` as manifest text that parses back to an equal Skill."""
    org, gov, cont = skill.org, skill.governance, skill.continuations
    front: dict[str, Any] = {
        "id": skill.id.key,
        "version": str(skill.id.version),
        "tier": org.service_tier.value,
        "environment": org.environment.value,
        "owner": org.owner_team,
    }
    for key, value in zip(
        ORG_OPTIONAL_KEYS,
        (org.sla, org.escalation_contact, org.cost_center,
         org.data_classification.value if org.data_classification else None, org.catalog_ref),
    ):
        if value is not None:
            front[key] = value
    front["roles"] = sorted(gov.required_roles)
    front["compliance"] = sorted(gov.compliance_tags)
    if gov.change_window is not None:
        front["change-window"] = str(gov.change_window)
    if gov.approval_gates:
        front["approvals"] = [
            {"condition": g.condition, "approver": g.approver_role, "mode": g.mode.value}
            for g in gov.approval_gates
        ]
    radius = gov.blast_radius
    front["blast-radius"] = {
        "readable": sorted(radius.readable),
        "writable": sorted(radius.writable),
        "max-scope": radius.max_scope.value,
    }
    ns = skill.id.namespace
    conts: dict[str, Any] = {}
    if cont.on_success:
        conts["on-success"] = [_ref(t, ns) for t in cont.on_success]
    if cont.on_failure:
        conts["on-failure"] = [_ref(t, ns) for t in cont.on_failure]
    if cont.on_escalation:
        conts["escalation"] = [{"condition": e.condition, "target": e.target} for e in cont.on_escalation]
    front["continuations"] = conts
    front["validators"] = [
        {
            "kind": v.kind.value,
            "path": v.script_path,
            "timeout-seconds": v.timeout,
            "verifies": sorted(v.verifies),
        }
        for v in skill.validators
    ]
    if skill.intent.triggers:
        front["triggers"] = [
            {"kind": t.kind.value, "value": t.value, **({"key": t.key} if t.key else {})}
            for t in skill.intent.triggers
        ]

    out = ["---", yaml.safe_dump(front, sort_keys=False, allow_unicode=True).rstrip(), "---"]
    out += ["# Intent", skill.intent.description, ""]
    out += ["# Procedure"] + [f"{i}. {s}" for i, s in enumerate(skill.procedure.steps, 1)] + [""]
    if skill.procedure.constraints:
        out += ["# Constraints"] + [f"- {c}" for c in skill.procedure.constraints] + [""]
    if skill.procedure.anti_patterns:
        out += ["# Anti-patterns"] + [f"- {a}" for a in skill.procedure.anti_patterns] + [""]
    out.append("# Tools")
    for tool in skill.tools:
        line = tool.tool_id
        if tool.params:
            line += "(" + ", ".join(f"{n}: {t}" for n, t in tool.params) + ")"
        if tool.auth:
            line += f" auth={tool.auth}"
        out.append(f"- {line}")
    return "\n".join(out) + "\n"
