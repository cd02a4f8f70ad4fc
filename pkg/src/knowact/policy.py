"""Activation policy: decide Allow / RequireApproval / Deny per skill and context.

Skill-embedded governance (roles, change window, approval gates) is checked
first; the ordered policy rules follow with first-match semantics.  The two
results combine by maximum severity.

Rules and gate conditions share one clause language: ``key=value`` or
``key!=value`` clauses separated by ``;``, where ``value`` may list
alternatives with ``|``.  Recognised keys are in :data:`CLAUSE_KEYS`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from knowact.errors import PolicySyntaxError
from knowact.skill.model import (
    ApprovalMode,
    ChangeWindow,
    Environment,
    MalformedField,
    Skill,
    SkillId,
)


class Effect(str, Enum):
    ALLOW = "allow"
    REQUIRE_APPROVAL = "require-approval"
    DENY = "deny"

    @property
    def severity(self) -> int:
        return _SEVERITY[self]

    @classmethod
    def strictest(cls, *effects: Effect) -> Effect:
        return max(effects, key=lambda e: e.severity)


_SEVERITY = {Effect.ALLOW: 0, Effect.REQUIRE_APPROVAL: 1, Effect.DENY: 2}

# Escalation conditions a denial reason triggers.
PERMISSION_DENIED = "permission-denied"
OUTSIDE_WINDOW = "outside-change-window"
POLICY_DENIED = "policy-denied"


@dataclass(frozen=True)
class ActivationContext:
    agent_id: str
    roles: frozenset[str]
    environment: Environment
    now: datetime
    team: str | None = None
    incident_active: bool = False
    approvals_available: bool = True

    def __post_init__(self) -> None:
        if self.now.tzinfo is None or self.now.utcoffset().total_seconds() != 0:
            raise ValueError("ActivationContext.now must be an explicit UTC timestamp")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ActivationContext:
        now_text = str(data["now"])
        if not (now_text.endswith("Z") or now_text.endswith("+00:00")):
            raise ValueError(f"context 'now' must carry an explicit UTC marker: {now_text!r}")
        now = datetime.fromisoformat(now_text.replace("Z", "+00:00"))
        return cls(
            agent_id=str(data.get("agent_id", "agent")),
            roles=frozenset(data.get("roles", [])),
            environment=Environment(data["environment"]),
            now=now,
            team=data.get("team"),
            incident_active=bool(data.get("incident_active", False)),
            approvals_available=bool(data.get("approvals_available", True)),
        )

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> ActivationContext:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "roles": sorted(self.roles),
            "environment": self.environment.value,
            "now": self.now.astimezone(timezone.utc).isoformat().replace("+00:00", "Z"),
            "team": self.team,
            "incident_active": self.incident_active,
            "approvals_available": self.approvals_available,
        }


CLAUSE_KEYS = (
    "skill-tier",
    "skill-environment",
    "skill-compliance",
    "role",
    "ctx-environment",
    "agent",
    "team",
    "within",
    "outside",
    "incident",
)


@dataclass(frozen=True)
class Clause:
    key: str
    values: tuple[str, ...]
    negate: bool = False

    def matches(self, skill: Skill, ctx: ActivationContext) -> bool:
        return self._test(skill, ctx) != self.negate

    def _test(self, skill: Skill, ctx: ActivationContext) -> bool:
        key, values = self.key, self.values
        if key == "skill-tier":
            return skill.org.service_tier.value in values
        if key == "skill-environment":
            return skill.org.environment.value in values
        if key == "skill-compliance":
            return any(v in skill.governance.compliance_tags for v in values)
        if key == "role":
            return any(v in ctx.roles for v in values)
        if key == "ctx-environment":
            return ctx.environment.value in values
        if key == "agent":
            return ctx.agent_id in values
        if key == "team":
            return ctx.team in values
        if key == "incident":
            return ("true" if ctx.incident_active else "false") in values
        if key in ("within", "outside"):
            inside = any(ChangeWindow.parse(v).contains(ctx.now) for v in values)
            return inside if key == "within" else not inside
        raise PolicySyntaxError(f"unknown clause key {key!r}")

    def __str__(self) -> str:
        return f"{self.key}{'!=' if self.negate else '='}{'|'.join(self.values)}"


def parse_clauses(text: str) -> tuple[Clause, ...]:
    clauses = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        clauses.append(_clause(chunk))
    return tuple(clauses)


def _clause(chunk: str) -> Clause:
    key, sep, value = chunk.partition("=")
    if not sep:
        raise PolicySyntaxError(f"expected key=value, got {chunk!r}")
    negate = key.endswith("!")
    key = key.rstrip("!").strip()
    if key not in CLAUSE_KEYS:
        raise PolicySyntaxError(f"unknown clause key {key!r}")
    values = tuple(v.strip() for v in value.split("|") if v.strip())
    if not values:
        raise PolicySyntaxError(f"clause {key!r} has no value")
    if key in ("within", "outside"):
        for v in values:
            try:
                ChangeWindow.parse(v)
            except MalformedField as exc:
                raise PolicySyntaxError(str(exc)) from None
    if key == "incident" and not set(values) <= {"true", "false"}:
        raise PolicySyntaxError("incident takes true or false")
    return Clause(key, values, negate)


@dataclass(frozen=True)
class PolicyRule:
    clauses: tuple[Clause, ...]
    effect: Effect
    rationale: str = ""
    approver: str | None = None

    def __post_init__(self) -> None:
        if not self.clauses:
            raise PolicySyntaxError("a rule needs at least one match clause")
        if self.effect is Effect.REQUIRE_APPROVAL and not self.approver:
            raise PolicySyntaxError("require-approval rules must name an approver")

    def matches(self, skill: Skill, ctx: ActivationContext) -> bool:
        return all(c.matches(skill, ctx) for c in self.clauses)


@dataclass(frozen=True)
class ActivationPolicy:
    rules: tuple[PolicyRule, ...]
    default_effect: Effect
    default_approver: str | None = None

    def __post_init__(self) -> None:
        if self.default_effect is Effect.REQUIRE_APPROVAL and not self.default_approver:
            raise PolicySyntaxError("a require-approval default must name an approver")

    @classmethod
    def permissive(cls) -> ActivationPolicy:
        return cls(rules=(), default_effect=Effect.ALLOW)


@dataclass(frozen=True)
class Obligation:
    kind: str  # approval | escalate
    target: str
    detail: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"kind": self.kind, "target": self.target, "detail": self.detail}


@dataclass(frozen=True)
class ActivationDecision:
    effect: Effect
    matched_rule: int | None = None
    obligations: tuple[Obligation, ...] = ()
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.effect is Effect.REQUIRE_APPROVAL and not any(o.kind == "approval" for o in self.obligations):
            raise ValueError("RequireApproval decisions must name an approver")

    def to_dict(self) -> dict[str, Any]:
        return {
            "effect": self.effect.value,
            "matched_rule": self.matched_rule,
            "obligations": [o.to_dict() for o in self.obligations],
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ActivationDecision:
        return cls(
            effect=Effect(data["effect"]),
            matched_rule=data.get("matched_rule"),
            obligations=tuple(Obligation(**o) for o in data.get("obligations", [])),
            rationale=data.get("rationale", ""),
        )


def parse_policy(text: str) -> ActivationPolicy:
    """Parse a policy document.

    Each non-blank, non-comment line is either ``rule: <clauses>`` or the
    mandatory ``default: <effect>[; approver=<role>]``.  Inside a rule the
    keys ``effect``, ``approver`` and ``rationale`` configure the rule and
    every other key is a match clause.
    """
    rules: list[PolicyRule] = []
    default: tuple[Effect, str | None] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, rest = line.partition(":")
        head = head.strip().lower()
        if not sep or head not in ("rule", "default"):
            raise PolicySyntaxError(f"line {lineno}: expected 'rule:' or 'default:'")
        if head == "default":
            if default is not None:
                raise PolicySyntaxError(f"line {lineno}: duplicate default")
            effect_text, _, options = rest.partition(";")
            approver = None
            for chunk in filter(None, (c.strip() for c in options.split(";"))):
                k, _, v = chunk.partition("=")
                if k.strip() != "approver":
                    raise PolicySyntaxError(f"line {lineno}: unknown default option {k.strip()!r}")
                approver = v.strip()
            default = (_effect(effect_text.strip(), lineno), approver)
            continue
        meta: dict[str, str] = {}
        clauses: list[Clause] = []
        for chunk in filter(None, (c.strip() for c in rest.split(";"))):
            k, eq, v = chunk.partition("=")
            if eq and k.strip() in ("effect", "approver", "rationale"):
                meta[k.strip()] = v.strip()
            else:
                try:
                    clauses.append(_clause(chunk))
                except PolicySyntaxError as exc:
                    raise PolicySyntaxError(f"line {lineno}: {exc}") from None
        if "effect" not in meta:
            raise PolicySyntaxError(f"line {lineno}: rule has no effect")
        try:
            rules.append(
                PolicyRule(tuple(clauses), _effect(meta["effect"], lineno), meta.get("rationale", ""), meta.get("approver"))
            )
        except PolicySyntaxError as exc:
            raise PolicySyntaxError(f"line {lineno}: {exc}") from None
    if default is None:
        raise PolicySyntaxError("policy has no 'default:' line")
    return ActivationPolicy(tuple(rules), default[0], default[1])


def _effect(text: str, lineno: int) -> Effect:
    try:
        return Effect(text.lower())
    except ValueError:
        raise PolicySyntaxError(f"line {lineno}: unknown effect {text!r}") from None


def load_policy(path: str | os.PathLike[str]) -> ActivationPolicy:
    return parse_policy(Path(path).read_text(encoding="utf-8"))


def gate_applies(condition: str, mode: ApprovalMode, skill: Skill, ctx: ActivationContext) -> bool:
    clauses = parse_clauses(condition)
    if not clauses:
        # an unconditional bypass gate never fires; other modes always do
        return mode is not ApprovalMode.CONDITIONAL_BYPASS
    return all(c.matches(skill, ctx) for c in clauses)


def evaluate(policy: ActivationPolicy, skill: Skill, ctx: ActivationContext) -> ActivationDecision:
    gov = skill.governance
    effect = Effect.ALLOW
    obligations: list[Obligation] = []
    reasons: list[str] = []
    deny_reasons: list[str] = []

    missing = sorted(gov.required_roles - ctx.roles)
    if missing:
        effect = Effect.DENY
        deny_reasons.append(PERMISSION_DENIED)
        reasons.append(f"missing required role(s): {', '.join(missing)}")
    if gov.change_window is not None and not gov.change_window.contains(ctx.now):
        effect = Effect.DENY
        deny_reasons.append(OUTSIDE_WINDOW)
        reasons.append(f"outside change window {gov.change_window}")
    for i, gate in enumerate(gov.approval_gates, 1):
        if gate_applies(gate.condition, gate.mode, skill, ctx):
            effect = Effect.strictest(effect, Effect.REQUIRE_APPROVAL)
            obligations.append(Obligation("approval", gate.approver_role, gate.mode.value))
            reasons.append(f"approval gate {i} ({gate.condition or 'always'})")

    matched: int | None = None
    for index, rule in enumerate(policy.rules):
        if rule.matches(skill, ctx):
            matched, rule_effect, approver = index, rule.effect, rule.approver
            reasons.append(f"rule {index}: {rule.rationale or rule.effect.value}")
            break
    else:
        rule_effect, approver = policy.default_effect, policy.default_approver
        reasons.append(f"default {policy.default_effect.value}")
    if rule_effect is Effect.REQUIRE_APPROVAL:
        obligations.append(Obligation("approval", approver or "", "policy"))
    elif rule_effect is Effect.DENY:
        deny_reasons.append(POLICY_DENIED)
    effect = Effect.strictest(effect, rule_effect)

    if effect is Effect.DENY:
        obligations = [
            Obligation("escalate", esc.target, esc.condition)
            for esc in skill.continuations.on_escalation
            if esc.condition in deny_reasons
        ]
    return ActivationDecision(effect, matched, tuple(obligations), "; ".join(reasons))


def admissible(
    policy: ActivationPolicy, skills: Iterable[Skill], ctx: ActivationContext
) -> set[SkillId]:
    return {s.id for s in skills if evaluate(policy, s, ctx).effect is not Effect.DENY}
