"""Schema and budget lint for parsed skills. Lint reports, it never raises."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from knowact.skill.model import ApprovalMode, Skill

DISCOVERY_BUDGET = 100
BODY_BUDGET = 5000


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class LintFinding:
    code: str
    severity: Severity
    message: str
    subject: str = ""

    @property
    def is_error(self) -> bool:
        return self.severity is Severity.ERROR

    def to_dict(self) -> dict[str, str]:
        return {
            "code": self.code,
            "severity": self.severity.value,
            "message": self.message,
            "subject": self.subject,
        }


@dataclass(frozen=True)
class BudgetConfig:
    discovery_per_skill: int = DISCOVERY_BUDGET
    body_budget: int = BODY_BUDGET

    def __post_init__(self) -> None:
        if self.discovery_per_skill <= 0 or self.body_budget <= 0:
            raise ValueError("budgets must be positive")


def lint_skill(
    skill: Skill, budgets: BudgetConfig = BudgetConfig(), catalog: dict[str, str] | None = None
) -> list[LintFinding]:
    """Check ``skill`` against budget and referential-integrity rules.

    ``catalog`` maps skill keys to owner teams; without it a catalog-resolved
    owner cannot be confirmed and is reported as a warning.
    """
    from knowact.policy import parse_clauses
    from knowact.errors import PolicySyntaxError

    subject = str(skill.id)
    findings: list[LintFinding] = []

    def add(code: str, severity: Severity, message: str) -> None:
        findings.append(LintFinding(code, severity, message, subject))

    if skill.body_token_cost > budgets.body_budget:
        add(
            "BodyExceedsBudget",
            Severity.WARNING,
            f"body costs {skill.body_token_cost} tokens, budget is {budgets.body_budget}",
        )
    if skill.summary_token_cost > budgets.discovery_per_skill:
        add(
            "SummaryExceedsBudget",
            Severity.WARNING,
            f"summary costs {skill.summary_token_cost} tokens, "
            f"discovery budget is {budgets.discovery_per_skill}",
        )

    keys = set(skill.governance.constraint_keys())
    for spec in skill.validators:
        for key in sorted(spec.verifies - keys):
            add(
                "DanglingVerifiesKey",
                Severity.ERROR,
                f"{spec.script_path} verifies '{key}', which is not a declared constraint",
            )

    for i, gate in enumerate(skill.governance.approval_gates, 1):
        if gate.mode is ApprovalMode.CONDITIONAL_BYPASS and not gate.condition.strip():
            add("BypassWithoutCondition", Severity.ERROR, f"approval gate {i} bypasses on an empty condition")
        try:
            parse_clauses(gate.condition)
        except PolicySyntaxError as exc:
            add("MalformedCondition", Severity.ERROR, f"approval gate {i}: {exc}")

    if skill.org.owner_from_catalog and (catalog is None or skill.id.key not in catalog):
        add("OwnerUnresolved", Severity.WARNING, "owner team is resolved from a catalog that was not supplied")
    return findings
