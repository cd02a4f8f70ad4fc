"""Immutable data model for skills (atomic knowledge units)."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, time, timezone
from enum import Enum
from pathlib import Path
from typing import NamedTuple

from knowact.errors import MalformedField

IDENT_RE = re.compile(r"^[a-z0-9-]+$")
TOOL_ID_RE = re.compile(r"^[a-z0-9-]+(/[a-z0-9-]+)+$")
VERSION_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")

# Marker for an owner team that is looked up in the service catalog at runtime.
CATALOG_OWNER = "from-catalog"

DAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
_DAY_ALIASES = {"weekdays": "mon-fri", "weekends": "sat-sun", "daily": "mon-sun"}


class Version(NamedTuple):
    major: int
    minor: int
    patch: int

    @classmethod
    def parse(cls, text: str) -> Version:
        m = VERSION_RE.match(str(text).strip())
        if not m:
            raise MalformedField("version", f"not a semantic version triple: {text!r}")
        return cls(*(int(g) for g in m.groups()))

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"


@dataclass(frozen=True, order=True)
class SkillId:
    """``namespace/name`` plus an optional pinned version.

    Continuation targets are usually unpinned and resolve to the latest
    published version.
    """

    namespace: str
    name: str
    version: Version | None = None

    def __post_init__(self) -> None:
        for part in ("namespace", "name"):
            value = getattr(self, part)
            if not isinstance(value, str) or not IDENT_RE.match(value):
                raise MalformedField(f"id.{part}", f"must be lowercase kebab-case, got {value!r}")

    @classmethod
    def parse(cls, text: str, default_namespace: str | None = None) -> SkillId:
        text = str(text).strip()
        version = None
        if "@" in text:
            text, _, ver = text.partition("@")
            version = Version.parse(ver)
        if "/" in text:
            namespace, _, name = text.partition("/")
        elif default_namespace is not None:
            namespace, name = default_namespace, text
        else:
            raise MalformedField("id", f"expected namespace/name, got {text!r}")
        return cls(namespace, name, version)

    @property
    def key(self) -> str:
        return f"{self.namespace}/{self.name}"

    def unversioned(self) -> SkillId:
        return SkillId(self.namespace, self.name)

    def with_version(self, version: Version) -> SkillId:
        return SkillId(self.namespace, self.name, version)

    def __str__(self) -> str:
        if self.version is None:
            return self.key
        return f"{self.key}@{self.version}"


class TriggerKind(str, Enum):
    KEYWORD = "keyword"
    METADATA_EQUALS = "metadata-equals"
    ENVIRONMENT = "environment"
    ALERT_PATTERN = "alert-pattern"


@dataclass(frozen=True)
class TriggerCondition:
    kind: TriggerKind
    value: str
    key: str = ""

    def __post_init__(self) -> None:
        if not self.value:
            raise MalformedField("triggers", f"{self.kind.value} trigger needs a value")
        if self.kind is TriggerKind.METADATA_EQUALS and not self.key:
            raise MalformedField("triggers", "metadata-equals trigger needs a key")


@dataclass(frozen=True)
class IntentDeclaration:
    description: str
    triggers: tuple[TriggerCondition, ...] = ()

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise MalformedField("intent", "description is empty")


@dataclass(frozen=True)
class Procedure:
    steps: tuple[str, ...]
    constraints: tuple[str, ...] = ()
    anti_patterns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.steps:
            raise MalformedField("procedure", "at least one step is required")

    def step(self, number: int) -> str:
        """Return step ``number`` (1-indexed)."""
        if number < 1:
            raise IndexError(number)
        return self.steps[number - 1]


@dataclass(frozen=True)
class ToolBinding:
    tool_id: str
    params: tuple[tuple[str, str], ...] = ()
    auth: str | None = None

    def __post_init__(self) -> None:
        if not TOOL_ID_RE.match(self.tool_id):
            raise MalformedField("tools", f"bad tool id {self.tool_id!r}")
        names = [name for name, _ in self.params]
        if len(names) != len(set(names)):
            raise MalformedField("tools", f"duplicate parameter name in {self.tool_id}")


class ServiceTier(str, Enum):
    TIER_1 = "Tier-1"
    TIER_2 = "Tier-2"
    TIER_3 = "Tier-3"


class Environment(str, Enum):
    PRODUCTION = "production"
    STAGING = "staging"
    DEVELOPMENT = "development"
    SANDBOX = "sandbox"


class DataClassification(str, Enum):
    PUBLIC = "public"
    INTERNAL = "internal"
    CONFIDENTIAL = "confidential"
    REGULATED = "regulated"


@dataclass(frozen=True)
class OrgMetadata:
    owner_team: str
    service_tier: ServiceTier
    environment: Environment
    sla: str | None = None
    escalation_contact: str | None = None
    cost_center: str | None = None
    data_classification: DataClassification | None = None
    catalog_ref: str | None = None

    def __post_init__(self) -> None:
        if not self.owner_team:
            raise MalformedField("owner", "owner team is required")

    @property
    def owner_from_catalog(self) -> bool:
        return self.owner_team == CATALOG_OWNER


@dataclass(frozen=True)
class ChangeWindow:
    """Weekly recurring window; ``start`` inclusive, ``end`` exclusive, UTC."""

    days: frozenset[int]
    start: time
    end: time

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise MalformedField("change-window", "start must precede end")
        if not self.days or not all(0 <= d <= 6 for d in self.days):
            raise MalformedField("change-window", "days must be a nonempty set of weekdays")

    @classmethod
    def parse(cls, text: str) -> ChangeWindow:
        """Parse ``"mon-fri 09:00-16:00 UTC"`` or ``"mon,wed 10:00-12:00"``."""
        parts = str(text).split()
        if len(parts) == 3 and parts[2].upper() == "UTC":
            parts = parts[:2]
        if len(parts) != 2:
            raise MalformedField("change-window", f"expected '<days> HH:MM-HH:MM UTC', got {text!r}")
        days: set[int] = set()
        spec = _DAY_ALIASES.get(parts[0].lower(), parts[0].lower())
        for chunk in spec.split(","):
            lo, _, hi = chunk.partition("-")
            try:
                a = DAY_NAMES.index(lo)
                b = DAY_NAMES.index(hi) if hi else a
            except ValueError:
                raise MalformedField("change-window", f"unknown day in {chunk!r}") from None
            if b < a:
                raise MalformedField("change-window", f"day range runs backwards: {chunk!r}")
            days.update(range(a, b + 1))
        start_s, sep, end_s = parts[1].partition("-")
        if not sep:
            raise MalformedField("change-window", f"bad time range {parts[1]!r}")
        try:
            start, end = time.fromisoformat(start_s), time.fromisoformat(end_s)
        except ValueError as exc:
            raise MalformedField("change-window", str(exc)) from None
        return cls(frozenset(days), start, end)

    def contains(self, moment: datetime) -> bool:
        if moment.tzinfo is None:
            raise ValueError("change-window checks need an aware UTC timestamp")
        utc = moment.astimezone(timezone.utc)
        return utc.weekday() in self.days and self.start <= utc.time() < self.end

    def intersect(self, other: ChangeWindow) -> ChangeWindow | None:
        days = self.days & other.days
        start, end = max(self.start, other.start), min(self.end, other.end)
        if not days or not start < end:
            return None
        return ChangeWindow(frozenset(days), start, end)

    def __str__(self) -> str:
        runs: list[str] = []
        ordered = sorted(self.days)
        i = 0
        while i < len(ordered):
            j = i
            while j + 1 < len(ordered) and ordered[j + 1] == ordered[j] + 1:
                j += 1
            lo, hi = DAY_NAMES[ordered[i]], DAY_NAMES[ordered[j]]
            runs.append(lo if i == j else f"{lo}-{hi}")
            i = j + 1
        return f"{','.join(runs)} {self.start:%H:%M}-{self.end:%H:%M} UTC"


class ApprovalMode(str, Enum):
    SYNCHRONOUS = "synchronous-blocking"
    ASYNCHRONOUS = "asynchronous-deferral"
    CONDITIONAL_BYPASS = "conditional-bypass"


@dataclass(frozen=True)
class ApprovalGate:
    """Human sign-off requirement.

    ``condition`` uses the clause language of :mod:`knowact.policy`; an empty
    condition means the gate always applies.
    """

    condition: str
    approver_role: str
    mode: ApprovalMode = ApprovalMode.SYNCHRONOUS

    def __post_init__(self) -> None:
        if not self.approver_role:
            raise MalformedField("approvals", "approval gate needs an approver role")


class MaxScope(str, Enum):
    SINGLE_SERVICE = "single-service"
    SERVICE_GROUP = "service-group"
    UNBOUNDED = "unbounded"

    @property
    def severity(self) -> int:
        return list(MaxScope).index(self)


@dataclass(frozen=True)
class BlastRadius:
    """Resource scope. Patterns look like ``<service>/<resource>``."""

    readable: frozenset[str] = frozenset()
    writable: frozenset[str] = frozenset()
    max_scope: MaxScope = MaxScope.SINGLE_SERVICE

    def __post_init__(self) -> None:
        if self.max_scope is MaxScope.SINGLE_SERVICE:
            services = {p.split("/", 1)[0] for p in self.writable}
            if len(services) > 1 or "*" in services:
                raise MalformedField(
                    "blast-radius", f"single-service scope writes to several services: {sorted(services)}"
                )

    @property
    def is_empty(self) -> bool:
        return not self.readable and not self.writable


@dataclass(frozen=True)
class GovernanceConstraints:
    required_roles: frozenset[str] = frozenset()
    approval_gates: tuple[ApprovalGate, ...] = ()
    change_window: ChangeWindow | None = None
    blast_radius: BlastRadius = field(default_factory=BlastRadius)
    compliance_tags: frozenset[str] = frozenset()

    def constraint_keys(self) -> list[str]:
        """The auditable units a validator can claim to verify."""
        keys = []
        if self.required_roles:
            keys.append("required-roles")
        if self.change_window is not None:
            keys.append("change-window")
        if not self.blast_radius.is_empty:
            keys.append("blast-radius")
        keys.extend(f"approval:{i}" for i in range(1, len(self.approval_gates) + 1))
        keys.extend(f"compliance:{tag}" for tag in sorted(self.compliance_tags))
        return keys


@dataclass(frozen=True)
class EscalationTarget:
    condition: str
    target: str

    def __post_init__(self) -> None:
        if not self.target:
            raise MalformedField("continuations.escalation", "escalation target is empty")


@dataclass(frozen=True)
class Continuation:
    on_success: tuple[SkillId, ...] = ()
    on_failure: tuple[SkillId, ...] = ()
    on_escalation: tuple[EscalationTarget, ...] = ()

    def __post_init__(self) -> None:
        for label, ids in (("on-success", self.on_success), ("on-failure", self.on_failure)):
            if len(ids) != len(set(ids)):
                raise MalformedField(f"continuations.{label}", "the same skill is listed twice")

    @property
    def is_terminal(self) -> bool:
        return not self.on_success and not self.on_failure


class ValidatorKind(str, Enum):
    PRE = "pre"
    POST = "post"
    INVARIANT = "invariant"


@dataclass(frozen=True)
class ValidatorSpec:
    kind: ValidatorKind
    script_path: str
    timeout: float
    verifies: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise MalformedField("validators", f"{self.script_path}: timeout must be positive")

    @property
    def name(self) -> str:
        return Path(self.script_path).name


@dataclass(frozen=True)
class Skill:
    id: SkillId
    intent: IntentDeclaration
    procedure: Procedure
    tools: tuple[ToolBinding, ...]
    org: OrgMetadata
    governance: GovernanceConstraints
    continuations: Continuation
    validators: tuple[ValidatorSpec, ...]
    body_token_cost: int = field(default=0, compare=False)
    summary_token_cost: int = field(default=0, compare=False)
    package_root: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.id.version is None:
            raise MalformedField("version", "a skill must carry a version")
        if self.summary_token_cost > self.body_token_cost:
            raise MalformedField("body", "summary costs more tokens than the body")

    def validators_of(self, kind: ValidatorKind) -> list[ValidatorSpec]:
        return [v for v in self.validators if v.kind is kind]


@dataclass(frozen=True)
class DensityInput:
    value: float
    cost: int
