"""Golden-path composition and scripted walk simulation.

A golden path is composed from a task intent: discovery picks the entry
skill, then success and failure continuations are followed transitively,
taking the first admissible target in declared rank order.  The simulator
walks the resulting plan with scripted outcomes in place of a live agent,
running validators and accounting context-window cost at every step.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Protocol, Union

from knowact.errors import (
    BrokenContinuation,
    IllFormedTopology,
    MalformedField,
    NoAdmissibleEntry,
    NotFound,
    ScriptExhausted,
    UnsatisfiableWindow,
)
from knowact.governance import AuditLog, Phase, ValidatorResult, phase_passed, run_validators
from knowact.policy import ActivationContext, ActivationDecision, ActivationPolicy, Effect, Obligation, evaluate
from knowact.registry import DiscoveryQuery, EntrySummary
from knowact.skill import (
    ApprovalGate,
    BlastRadius,
    BudgetConfig,
    DensityInput,
    GovernanceConstraints,
    LintFinding,
    MaxScope,
    Severity,
    Skill,
    SkillId,
    ValidatorKind,
    ValidatorSpec,
    knowledge_density,
)
from knowact.topology import EdgeKind, TopologyGraph, check, neighbors, node_key

DEFAULT_MAX_STEPS = 32


class Catalog(Protocol):
    def __len__(self) -> int: ...

    def resolve(self, skill_id: SkillId) -> Skill: ...

    def discover(
        self, query: DiscoveryQuery, ctx: ActivationContext | None = None, policy: ActivationPolicy | None = None
    ) -> list[tuple[EntrySummary, float]]: ...


class Route(str, Enum):
    TERMINAL = "terminal"
    ESCALATE = "escalate"


Branch = Union[SkillId, Route]


@dataclass(frozen=True)
class TaskIntent:
    text: str
    filters: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("task intent text is empty")


@dataclass(frozen=True)
class PlanNode:
    on_success: Branch
    on_failure: Branch


@dataclass(frozen=True)
class GoldenPath:
    entry: SkillId
    plan: dict[SkillId, PlanNode]
    inherited_validators: frozenset[tuple[SkillId, ValidatorSpec]]
    inherited_constraints: GovernanceConstraints
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        for node in self.plan.values():
            for branch in (node.on_success, node.on_failure):
                if isinstance(branch, SkillId) and branch not in self.plan:
                    raise ValueError(f"plan target {branch} is not a plan key")

    def to_dict(self) -> dict[str, Any]:
        def show(b: Branch) -> str:
            return b.value if isinstance(b, Route) else str(b)

        return {
            "entry": str(self.entry),
            "max_steps": self.max_steps,
            "plan": {
                str(k): {"on_success": show(v.on_success), "on_failure": show(v.on_failure)}
                for k, v in sorted(self.plan.items())
            },
            "inherited_validators": sorted(
                f"{sid}:{spec.kind.value}:{spec.script_path}" for sid, spec in self.inherited_validators
            ),
            "inherited_roles": sorted(self.inherited_constraints.required_roles),
            "inherited_compliance": sorted(self.inherited_constraints.compliance_tags),
            "inherited_change_window": (
                str(self.inherited_constraints.change_window)
                if self.inherited_constraints.change_window
                else None
            ),
            "inherited_max_scope": self.inherited_constraints.blast_radius.max_scope.value,
        }


class _Admissibility:
    def __init__(self, policy: ActivationPolicy, ctx: ActivationContext) -> None:
        self.policy, self.ctx = policy, ctx
        self._cache: dict[SkillId, bool] = {}

    def __call__(self, skill: Skill) -> bool:
        if skill.id not in self._cache:
            self._cache[skill.id] = evaluate(self.policy, skill, self.ctx).effect is not Effect.DENY
        return self._cache[skill.id]


def _branch(
    skill: Skill, kind: EdgeKind, graph: TopologyGraph, catalog: Catalog, ok: _Admissibility
) -> Branch:
    targets = neighbors(graph, skill.id.key, kind)
    for target in targets:
        candidate = catalog.resolve(SkillId.parse(target))
        if ok(candidate):
            return candidate.id
    escalates = bool(skill.continuations.on_escalation)
    if not targets:
        if kind is EdgeKind.FAILURE and escalates:
            return Route.ESCALATE
        return Route.TERMINAL
    if escalates:
        return Route.ESCALATE
    raise BrokenContinuation(f"{skill.id}: no admissible {kind.value} continuation among {targets}")


def compose(
    intent: TaskIntent,
    catalog: Catalog,
    graph: TopologyGraph,
    policy: ActivationPolicy,
    ctx: ActivationContext,
    max_steps: int = DEFAULT_MAX_STEPS,
    entry: SkillId | None = None,
) -> GoldenPath:
    """Compose a golden path for ``intent``.

    ``entry`` skips discovery and starts from the given skill whether or not
    it is admissible; the simulator then records the denial.
    """
    report = check(graph)
    if not report.ok:
        raise IllFormedTopology("; ".join(str(e) for e in report.errors))
    ok = _Admissibility(policy, ctx)

    if entry is None:
        query = DiscoveryQuery(intent.text, intent.filters, limit=max(len(catalog), 1))
        for summary, _score in catalog.discover(query, ctx):
            skill = catalog.resolve(summary.id)
            if ok(skill):
                entry = skill.id
                break
        else:
            raise NoAdmissibleEntry(f"no admissible skill matches {intent.text!r}")
    else:
        entry = catalog.resolve(entry).id

    plan: dict[SkillId, PlanNode] = {}
    queue: deque[SkillId] = deque([entry])
    while queue:
        sid = queue.popleft()
        if sid in plan:
            continue
        skill = catalog.resolve(sid)
        node = PlanNode(
            _branch(skill, EdgeKind.SUCCESS, graph, catalog, ok),
            _branch(skill, EdgeKind.FAILURE, graph, catalog, ok),
        )
        plan[sid] = node
        for branch in (node.on_success, node.on_failure):
            if isinstance(branch, SkillId) and branch not in plan:
                queue.append(branch)

    draft = GoldenPath(entry, plan, frozenset(), GovernanceConstraints(), max_steps)
    validators, constraints = inherit(draft, catalog.resolve)
    return GoldenPath(entry, plan, validators, constraints, max_steps)


def inherit(
    path: GoldenPath, resolve
) -> tuple[frozenset[tuple[SkillId, ValidatorSpec]], GovernanceConstraints]:
    """Union of validators and merged governance over every plan skill."""
    skills = [resolve(sid) for sid in sorted(path.plan)]
    validators = frozenset((s.id, spec) for s in skills for spec in s.validators)

    roles: set[str] = set()
    tags: set[str] = set()
    gates: list[ApprovalGate] = []
    readable: set[str] = set()
    writable: set[str] = set()
    window = None
    windowed = False
    scope = MaxScope.SINGLE_SERVICE
    for skill in skills:
        gov = skill.governance
        roles |= gov.required_roles
        tags |= gov.compliance_tags
        gates.extend(g for g in gov.approval_gates if g not in gates)
        readable |= gov.blast_radius.readable
        writable |= gov.blast_radius.writable
        if gov.blast_radius.max_scope.severity > scope.severity:
            scope = gov.blast_radius.max_scope
        if gov.change_window is not None:
            window = gov.change_window if not windowed else window.intersect(gov.change_window)
            windowed = True
            if window is None:
                raise UnsatisfiableWindow(f"change windows of {path.entry}'s path do not overlap")
    try:
        radius = BlastRadius(frozenset(readable), frozenset(writable), scope)
    except MalformedField:
        # several single-service skills writing to different services
        radius = BlastRadius(frozenset(readable), frozenset(writable), MaxScope.SERVICE_GROUP)
    merged = GovernanceConstraints(
        required_roles=frozenset(roles),
        approval_gates=tuple(gates),
        change_window=window,
        blast_radius=radius,
        compliance_tags=frozenset(tags),
    )
    return validators, merged


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    ESCALATE = "escalate"


@dataclass(frozen=True)
class OutcomeScript:
    outcomes: tuple[Outcome, ...]

    def __post_init__(self) -> None:
        if not self.outcomes:
            raise ValueError("an outcome script needs at least one outcome")

    @classmethod
    def of(cls, *outcomes: str) -> OutcomeScript:
        return cls(tuple(Outcome(o) for o in outcomes))

    @classmethod
    def parse(cls, text: str) -> OutcomeScript:
        items = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
        return cls(tuple(Outcome(i) for i in items))

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> OutcomeScript:
        return cls.parse(Path(path).read_text(encoding="utf-8"))


class Terminal(str, Enum):
    COMPLETED = "completed"
    ESCALATED = "escalated"
    DENIED = "denied"
    STEP_LIMIT = "step-limit"
    VALIDATOR_FAILED = "validator-failed"


@dataclass(frozen=True)
class StepRecord:
    position: int
    skill: SkillId
    decision: ActivationDecision
    pre_results: tuple[ValidatorResult, ...]
    invariant_results: tuple[ValidatorResult, ...]
    outcome: str | None
    post_results: tuple[ValidatorResult, ...]
    next: str
    context_tokens_at_step: int
    cumulative_tokens_injected: int
    density: float
    escalations: tuple[Obligation, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "record": "step",
            "position": self.position,
            "skill": str(self.skill),
            "decision": self.decision.to_dict(),
            "pre_results": [r.to_dict() for r in self.pre_results],
            "invariant_results": [r.to_dict() for r in self.invariant_results],
            "outcome": self.outcome,
            "post_results": [r.to_dict() for r in self.post_results],
            "next": self.next,
            "context_tokens_at_step": self.context_tokens_at_step,
            "cumulative_tokens_injected": self.cumulative_tokens_injected,
            "density": self.density,
            "escalations": [o.to_dict() for o in self.escalations],
        }


@dataclass(frozen=True)
class WalkTrace:
    steps: tuple[StepRecord, ...]
    terminal: Terminal
    peak_context_tokens: int
    detail: str = ""

    def __post_init__(self) -> None:
        expected = max((s.context_tokens_at_step for s in self.steps), default=0)
        if self.peak_context_tokens != expected:
            raise ValueError("peak_context_tokens must equal the per-step maximum")

    @property
    def visited(self) -> list[SkillId]:
        return [s.skill for s in self.steps]

    @property
    def obligations(self) -> list[Obligation]:
        found: list[Obligation] = []
        for step in self.steps:
            found.extend(step.decision.obligations)
            found.extend(step.escalations)
        return found

    def to_dicts(self) -> list[dict[str, Any]]:
        rows = [s.to_dict() for s in self.steps]
        rows.append(
            {
                "record": "terminal",
                "terminal": self.terminal.value,
                "peak_context_tokens": self.peak_context_tokens,
                "steps": len(self.steps),
                "detail": self.detail,
            }
        )
        return rows

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.to_dicts())


@dataclass(frozen=True)
class TraceSummary:
    """What a trace export round-trips to: visited skills, decisions, outcome."""

    visited: tuple[SkillId, ...]
    decisions: tuple[ActivationDecision, ...]
    outcomes: tuple[str | None, ...]
    terminal: Terminal
    peak_context_tokens: int

    @classmethod
    def loads(cls, text: str) -> TraceSummary:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        steps = [r for r in rows if r["record"] == "step"]
        end = next(r for r in rows if r["record"] == "terminal")
        return cls(
            tuple(SkillId.parse(s["skill"]) for s in steps),
            tuple(ActivationDecision.from_dict(s["decision"]) for s in steps),
            tuple(s["outcome"] for s in steps),
            Terminal(end["terminal"]),
            end["peak_context_tokens"],
        )

    @classmethod
    def of(cls, trace: WalkTrace) -> TraceSummary:
        return cls(
            tuple(trace.visited),
            tuple(s.decision for s in trace.steps),
            tuple(s.outcome for s in trace.steps),
            trace.terminal,
            trace.peak_context_tokens,
        )


def _show(branch: Branch) -> str:
    return branch.value if isinstance(branch, Route) else str(branch)


def simulate(
    path: GoldenPath,
    script: OutcomeScript,
    policy: ActivationPolicy,
    ctx: ActivationContext,
    catalog: Catalog,
    budgets: BudgetConfig = BudgetConfig(),
    audit: AuditLog | None = None,
    value_proxy: float = 1.0,
) -> WalkTrace:
    """Walk ``path`` consuming one scripted outcome per executed skill.

    Context cost at a step is every catalog skill's summary at the
    per-skill discovery budget plus the body of the current skill only.
    """
    audit = audit if audit is not None else AuditLog(ctx.agent_id)
    outcomes = deque(script.outcomes)
    discovery_layer = len(catalog) * budgets.discovery_per_skill
    steps: list[StepRecord] = []
    cumulative = 0
    current = path.entry
    terminal: Terminal | None = None
    detail = ""

    while terminal is None:
        if len(steps) >= path.max_steps:
            terminal, detail = Terminal.STEP_LIMIT, f"stopped after {path.max_steps} steps"
            break
        skill = catalog.resolve(current)
        node = path.plan[current]
        position = len(steps) + 1
        tokens = discovery_layer + skill.body_token_cost
        cumulative += skill.body_token_cost
        density = knowledge_density(DensityInput(value_proxy, skill.body_token_cost))
        env = {
            "AGENT_ID": ctx.agent_id,
            "SKILL_ID": str(skill.id),
            "ENVIRONMENT": ctx.environment.value,
            "NOW": ctx.to_dict()["now"],
            "STEP": str(position),
        }

        def record(outcome, nxt, pre=(), inv=(), post=(), escalations=()):
            steps.append(
                StepRecord(
                    position, skill.id, decision, tuple(pre), tuple(inv), outcome, tuple(post),
                    nxt, tokens, cumulative, density, tuple(escalations),
                )
            )

        decision = evaluate(policy, skill, ctx)
        audit.append(str(skill.id), Phase.ACTIVATION, ctx.to_dict(), "evaluate activation policy", decision.effect.value)
        if decision.effect is Effect.DENY or (
            decision.effect is Effect.REQUIRE_APPROVAL and not ctx.approvals_available
        ):
            record(None, Route.TERMINAL.value)
            terminal, detail = Terminal.DENIED, decision.rationale
            break

        pre, _ = run_validators(skill, ValidatorKind.PRE, env, audit)
        inv_before, _ = run_validators(skill, ValidatorKind.INVARIANT, env, audit)
        if not phase_passed(pre + inv_before):
            if isinstance(node.on_failure, SkillId):
                record("failure", str(node.on_failure), pre, inv_before)
                current = node.on_failure
                continue
            record(None, Route.TERMINAL.value, pre, inv_before)
            terminal, detail = Terminal.VALIDATOR_FAILED, "pre-execution validation failed"
            break

        if not outcomes:
            raise ScriptExhausted(f"no scripted outcome left for step {position} ({skill.id})")
        outcome = outcomes.popleft()
        audit.append(str(skill.id), Phase.STEP, {"position": position}, "execute procedure", outcome.value)
        post, _ = run_validators(skill, ValidatorKind.POST, env, audit)
        inv_after, _ = run_validators(skill, ValidatorKind.INVARIANT, env, audit)
        checks_ok = phase_passed(post + inv_after)

        if outcome is Outcome.ESCALATE:
            branch: Branch = Route.ESCALATE
        elif outcome is Outcome.SUCCESS and checks_ok:
            branch = node.on_success
        else:
            branch = node.on_failure
            if outcome is Outcome.SUCCESS and not isinstance(branch, SkillId):
                record(outcome.value, Route.TERMINAL.value, pre, inv_before + inv_after, post)
                terminal, detail = Terminal.VALIDATOR_FAILED, "post-execution validation failed"
                break

        escalations = ()
        if branch is Route.ESCALATE:
            escalations = tuple(
                Obligation("escalate", e.target, e.condition) for e in skill.continuations.on_escalation
            )
        record(outcome.value, _show(branch), pre, inv_before + inv_after, post, escalations)
        if branch is Route.TERMINAL:
            terminal = Terminal.COMPLETED
        elif branch is Route.ESCALATE:
            terminal = Terminal.ESCALATED
        else:
            current = branch

    peak = max((s.context_tokens_at_step for s in steps), default=0)
    return WalkTrace(tuple(steps), terminal, peak, detail)


@dataclass(frozen=True)
class PavedLane:
    name: str
    pinned_sequence: tuple[tuple[EdgeKind | None, SkillId], ...]

    @classmethod
    def parse(cls, name: str, text: str) -> PavedLane:
        """One skill per line; lines after the first may start with the edge
        kind (``success``/``failure``) that leads to them, default success."""
        seq: list[tuple[EdgeKind | None, SkillId]] = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) == 2:
                kind, ref = EdgeKind(parts[0]), parts[1]
            elif len(parts) == 1:
                kind, ref = None, parts[0]
            else:
                raise ValueError(f"lane {name}: cannot read {line!r}")
            if seq and kind is None:
                kind = EdgeKind.SUCCESS
            seq.append((kind, SkillId.parse(ref)))
        return cls(name, tuple(seq))

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> PavedLane:
        path = Path(path)
        return cls.parse(path.stem, path.read_text(encoding="utf-8"))

    @property
    def root(self) -> SkillId | None:
        return self.pinned_sequence[0][1] if self.pinned_sequence else None


def load_lanes(lanes_dir: str | os.PathLike[str]) -> list[PavedLane]:
    lanes_dir = Path(lanes_dir)
    if not lanes_dir.is_dir():
        return []
    return [PavedLane.load(p) for p in sorted(lanes_dir.glob("*.lane"))]


def lint_lane(lane: PavedLane, graph: TopologyGraph, catalog: Catalog) -> list[LintFinding]:
    findings: list[LintFinding] = []

    def err(code: str, message: str) -> None:
        findings.append(LintFinding(code, Severity.ERROR, message, lane.name))

    if not lane.pinned_sequence:
        err("EmptyLane", "lane lists no skills")
        return findings
    for _, sid in lane.pinned_sequence:
        try:
            catalog.resolve(sid)
        except NotFound:
            err("UnresolvableSkill", f"{sid} is not in the registry")
    for (_, prev), (kind, cur) in zip(lane.pinned_sequence, lane.pinned_sequence[1:]):
        kind = kind or EdgeKind.SUCCESS
        targets = neighbors(graph, prev.key, kind) if prev.key in graph.nodes else []
        if cur.key not in {node_key(t) for t in targets}:
            err("MissingEdge", f"no {kind.value} edge {prev.key} -> {cur.key}")
    return findings


def lane_roots(lanes: Iterable[PavedLane]) -> list[str]:
    return [lane.root.key for lane in lanes if lane.root is not None]
