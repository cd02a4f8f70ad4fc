"""Builders shared by the test modules."""

from __future__ import annotations

import os
import stat
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import yaml

from knowact.policy import ActivationContext
from knowact.skill import (
    BlastRadius,
    ChangeWindow,
    Continuation,
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
    TriggerCondition,
    TriggerKind,
    ValidatorSpec,
    parse_skill,
)

FIXTURES = Path(__file__).parent / "fixtures"

DEPLOY = SkillId("platform", "deploy-microservice")
VERIFY = SkillId("platform", "post-deployment-verification")
ROLLBACK = SkillId("platform", "rollback-deployment")
INCIDENT = SkillId("platform", "respond-to-incident")

# 2026-10-13 is a Tuesday, 2026-10-17 a Saturday
TUESDAY_10 = datetime(2026, 10, 13, 10, 0, tzinfo=timezone.utc)
SATURDAY_10 = datetime(2026, 10, 17, 10, 0, tzinfo=timezone.utc)

DEPLOY_CHAIN = ("deploy-microservice", "post-deployment-verification", "rollback-deployment")


def fixture(name: str) -> Skill:
    return parse_skill(FIXTURES / name)


def fixtures(*names: str) -> list[Skill]:
    return [fixture(n) for n in names]


def context(
    roles: Iterable[str] = ("deployer",),
    now: datetime = TUESDAY_10,
    environment: Environment = Environment.PRODUCTION,
    **kw,
) -> ActivationContext:
    return ActivationContext("agent-7", frozenset(roles), environment, now, **kw)


def make_skill(
    name: str,
    namespace: str = "t",
    *,
    on_success: Iterable[str] = (),
    on_failure: Iterable[str] = (),
    escalations: Iterable[tuple[str, str]] = (),
    roles: Iterable[str] = (),
    window: str | None = None,
    tier: ServiceTier = ServiceTier.TIER_3,
    environment: Environment = Environment.DEVELOPMENT,
    body_cost: int = 100,
    validators: Iterable[ValidatorSpec] = (),
    description: str | None = None,
    keywords: Iterable[str] = (),
    writable: Iterable[str] = (),
    scope: MaxScope = MaxScope.SINGLE_SERVICE,
    compliance: Iterable[str] = (),
    package_root: Path | None = None,
) -> Skill:
    """A synthetic in-memory skill; costs are set directly."""
    return Skill(
        id=SkillId(namespace, name, _V1),
        intent=IntentDeclaration(
            description or f"synthetic skill {name}",
            tuple(TriggerCondition(TriggerKind.KEYWORD, k) for k in keywords),
        ),
        procedure=Procedure((f"do {name}",)),
        tools=(),
        org=OrgMetadata("team-a", tier, environment),
        governance=GovernanceConstraints(
            required_roles=frozenset(roles),
            change_window=ChangeWindow.parse(window) if window else None,
            blast_radius=BlastRadius(frozenset(), frozenset(writable), scope),
            compliance_tags=frozenset(compliance),
        ),
        continuations=Continuation(
            tuple(SkillId.parse(t, namespace) for t in on_success),
            tuple(SkillId.parse(t, namespace) for t in on_failure),
            tuple(EscalationTarget(c, t) for c, t in escalations),
        ),
        validators=tuple(validators),
        body_token_cost=body_cost,
        summary_token_cost=min(10, body_cost),
        package_root=package_root,
    )


_V1 = SkillId.parse("x/y@1.0.0").version


def write_script(path: Path, body: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("#!/bin/sh\n" + body + "\n", encoding="utf-8")
    os.chmod(path, path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)


def write_package(
    root: Path,
    skill_id: str,
    *,
    description: str = "Synthetic test skill.",
    steps: Iterable[str] = ("Do the thing.",),
    scripts: dict[str, tuple] | None = None,
    version: str = "1.0.0",
    **frontmatter,
) -> Path:
    """Write a skill package.

    ``scripts`` maps a file name to ``(kind, shell body)`` or
    ``(kind, shell body, timeout seconds)``.
    """
    scripts = scripts or {}
    meta = {
        "id": skill_id,
        "version": version,
        "tier": "Tier-3",
        "environment": "development",
        "owner": "team-a",
        "roles": [],
        "continuations": {},
        "validators": [],
    }
    meta.update({k.replace("_", "-"): v for k, v in frontmatter.items()})
    package = root / skill_id.replace("/", "__") / version
    for file_name, (kind, body, *timeout) in scripts.items():
        write_script(package / "validators" / file_name, body)
        meta["validators"].append(
            {"kind": kind, "path": f"validators/{file_name}", "timeout-seconds": timeout[0] if timeout else 5}
        )
    text = "---\n" + yaml.safe_dump(meta, sort_keys=False) + "---\n"
    text += f"# Intent\n{description}\n\n# Procedure\n"
    text += "".join(f"{i}. {s}\n" for i, s in enumerate(steps, 1))
    text += "\n# Tools\n"
    package.mkdir(parents=True, exist_ok=True)
    (package / "skill.md").write_text(text, encoding="utf-8")
    return package
