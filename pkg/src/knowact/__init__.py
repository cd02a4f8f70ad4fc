"""Governed skill packages: registry, routing topology, activation policy,
validator-backed governance and golden-path simulation."""

from knowact.composer import GoldenPath, OutcomeScript, TaskIntent, WalkTrace, compose, inherit, simulate
from knowact.governance import AuditLog, compute_tier, coverage, run_validators
from knowact.policy import ActivationContext, ActivationPolicy, Effect, evaluate, parse_policy
from knowact.registry import DiscoveryQuery, Registry, SkillCatalog, discover
from knowact.skill import Skill, SkillId, lint_skill, parse_skill
from knowact.topology import build, check

__all__ = [
    "ActivationContext",
    "ActivationPolicy",
    "AuditLog",
    "DiscoveryQuery",
    "Effect",
    "GoldenPath",
    "OutcomeScript",
    "Registry",
    "Skill",
    "SkillCatalog",
    "SkillId",
    "TaskIntent",
    "WalkTrace",
    "build",
    "check",
    "compose",
    "compute_tier",
    "coverage",
    "discover",
    "evaluate",
    "inherit",
    "lint_skill",
    "parse_policy",
    "parse_skill",
    "run_validators",
    "simulate",
]
