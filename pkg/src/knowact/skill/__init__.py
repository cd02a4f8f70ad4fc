from knowact.skill.lint import BudgetConfig, LintFinding, Severity, lint_skill
from knowact.skill.manifest import parse_manifest, parse_skill, serialize_skill
from knowact.skill.model import (
    ApprovalGate,
    ApprovalMode,
    BlastRadius,
    ChangeWindow,
    Continuation,
    DataClassification,
    DensityInput,
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
from knowact.skill.tokens import knowledge_density, summary_view, token_cost, tokenize

__all__ = [
    "ApprovalGate",
    "ApprovalMode",
    "BlastRadius",
    "BudgetConfig",
    "ChangeWindow",
    "Continuation",
    "DataClassification",
    "DensityInput",
    "Environment",
    "EscalationTarget",
    "GovernanceConstraints",
    "IntentDeclaration",
    "LintFinding",
    "MaxScope",
    "OrgMetadata",
    "Procedure",
    "ServiceTier",
    "Severity",
    "Skill",
    "SkillId",
    "ToolBinding",
    "TriggerCondition",
    "TriggerKind",
    "ValidatorKind",
    "ValidatorSpec",
    "Version",
    "knowledge_density",
    "lint_skill",
    "parse_manifest",
    "parse_skill",
    "serialize_skill",
    "summary_view",
    "token_cost",
    "tokenize",
]
