"""Command-line surface of the engine.

Every command reads its inputs from files and flags only, so a run can be
replayed byte for byte.  ``--format machine`` prints one JSON object per
line; human output is meant for terminals.

Exit status for ``simulate``: 0 completed, 3 denied, 4 validator-failed,
5 step-limit, 6 escalated.  Other commands use 0 clean, 1 findings or a
domain error, 2 usage or unreadable input.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from knowact.composer import (
    DEFAULT_MAX_STEPS,
    OutcomeScript,
    PavedLane,
    TaskIntent,
    Terminal,
    compose,
    lane_roots,
    lint_lane,
    load_lanes,
    simulate,
)
from knowact.errors import (
    KnowactError,
    LintGateFailed,
    NoAdmissibleEntry,
    NotFound,
    PolicySyntaxError,
)
from knowact.governance import AuditLog, canonical_line, compute_tier, export_audit, read_audit, strip_timing
from knowact.policy import ActivationContext, ActivationPolicy, evaluate, load_policy
from knowact.registry import FILTER_FIELDS, DiscoveryQuery, Registry
from knowact.skill import BudgetConfig, LintFinding, Severity, SkillId, lint_skill, parse_skill, serialize_skill
from knowact.topology import build, check, serialize

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2

TERMINAL_EXIT = {
    Terminal.COMPLETED: 0,
    Terminal.DENIED: 3,
    Terminal.VALIDATOR_FAILED: 4,
    Terminal.STEP_LIMIT: 5,
    Terminal.ESCALATED: 6,
}


@dataclass(frozen=True)
class CliConfig:
    store_root: Path
    policy_path: Path | None = None
    budgets: BudgetConfig = BudgetConfig()
    max_steps: int = DEFAULT_MAX_STEPS
    output_format: str = "human"

    def __post_init__(self) -> None:
        if self.budgets.discovery_per_skill < 1 or self.budgets.body_budget < 1:
            raise ValueError("budgets must be positive")
        if self.max_steps < 1:
            raise ValueError("--max-steps must be positive")
        if self.output_format not in ("human", "machine"):
            raise ValueError(f"unknown output format {self.output_format!r}")

    @property
    def machine(self) -> bool:
        return self.output_format == "machine"

    def policy(self) -> ActivationPolicy:
        if self.policy_path is None:
            return ActivationPolicy.permissive()
        return load_policy(self.policy_path)


class UsageError(Exception):
    """Bad invocation or unreadable input; maps to exit status 2."""


def _emit(cfg: CliConfig, row: dict[str, Any], human: str) -> None:
    print(canonical_line(row) if cfg.machine else human)


def _context(path: str | None) -> ActivationContext:
    if path is None:
        raise UsageError("--context is required")
    try:
        return ActivationContext.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read context {path}: {exc}") from None


def _registry(cfg: CliConfig, must_exist: bool = True) -> Registry:
    root = cfg.store_root
    if must_exist and not root.is_dir():
        raise UsageError(f"store {root} is not a readable directory")
    return Registry(root)


def cmd_lint(cfg: CliConfig, args: argparse.Namespace) -> int:
    status = EXIT_OK
    for raw in args.paths:
        path = Path(raw)
        if not path.is_dir():
            raise UsageError(f"{path} is not a skill package directory")
        try:
            skill = parse_skill(path)
        except KnowactError as exc:
            findings = [LintFinding(type(exc).__name__, Severity.ERROR, str(exc), str(path))]
            skill = None
        else:
            findings = lint_skill(skill, cfg.budgets)
        for f in findings:
            _emit(
                cfg,
                {"record": "finding", "package": str(path), **f.to_dict()},
                f"{path}: {f.severity.value} {f.code}: {f.message}",
            )
        if skill is not None:
            _emit(
                cfg,
                {
                    "record": "costs",
                    "package": str(path),
                    "skill": str(skill.id),
                    "summary_tokens": skill.summary_token_cost,
                    "discovery_budget": cfg.budgets.discovery_per_skill,
                    "body_tokens": skill.body_token_cost,
                    "body_budget": cfg.budgets.body_budget,
                },
                f"{path}: {skill.id} summary {skill.summary_token_cost}/{cfg.budgets.discovery_per_skill} "
                f"tokens, body {skill.body_token_cost}/{cfg.budgets.body_budget} tokens",
            )
        if any(f.is_error for f in findings):
            status = EXIT_FINDINGS
    return status


def cmd_publish(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg, must_exist=False)
    status = EXIT_OK
    for raw in args.paths:
        if not Path(raw).is_dir():
            raise UsageError(f"{raw} is not a skill package directory")
        try:
            sid = registry.publish(raw, cfg.budgets)
        except LintGateFailed as exc:
            for f in exc.findings:
                _emit(cfg, {"record": "finding", "package": raw, **f.to_dict()}, f"{raw}: {f.code}: {f.message}")
            status = EXIT_FINDINGS
            continue
        except KnowactError as exc:
            _emit(cfg, {"record": "error", "package": raw, "error": type(exc).__name__, "message": str(exc)},
                  f"{raw}: {type(exc).__name__}: {exc}")
            status = EXIT_FINDINGS
            continue
        digest = registry.load_index().entries[sid].package_digest
        _emit(cfg, {"record": "published", "id": str(sid), "digest": digest}, f"published {sid} {digest[:12]}")
    return status


def cmd_resolve(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    skill = registry.resolve(args.skill)
    if cfg.machine:
        tier = compute_tier(skill)
        print(canonical_line({
            "id": str(skill.id),
            "package_root": str(skill.package_root),
            "body_token_cost": skill.body_token_cost,
            "summary_token_cost": skill.summary_token_cost,
            "coverage": tier.coverage,
            "governance_tier": tier.tier.value,
        }))
    else:
        sys.stdout.write(serialize_skill(skill))
    return EXIT_OK


def _filters(items: Sequence[str]) -> tuple[tuple[str, str], ...]:
    out = []
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or key not in FILTER_FIELDS:
            raise UsageError(f"bad filter {item!r}; expected one of {', '.join(FILTER_FIELDS)} as key=value")
        out.append((key, value))
    return tuple(out)


def cmd_discover(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    ctx = _context(args.context) if args.context else None
    policy = cfg.policy() if (ctx is not None and cfg.policy_path is not None) else None
    query = DiscoveryQuery(args.text, _filters(args.filter), args.limit)
    for entry, score in registry.discover(query, ctx, policy):
        _emit(cfg, {"score": score, **entry.to_dict()}, f"{score:7.3f}  {entry.id}  {entry.description}")
    return EXIT_OK


def cmd_topo_check(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    graph = build(registry.latest_skills())
    lanes = load_lanes(registry.lanes_dir)
    report = check(graph, lane_roots(lanes) if lanes else None)
    if cfg.machine:
        print(canonical_line(report.to_dict()))
    else:
        if args.graph:
            sys.stdout.write(serialize(graph))
        for f in report.errors:
            print(f"error {f}")
        for f in report.warnings:
            print(f"warning {f}")
        print(f"{len(graph.nodes)} skills, {len(report.errors)} errors, {len(report.warnings)} warnings")
    return EXIT_OK if report.ok else EXIT_FINDINGS


def cmd_policy_eval(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    ctx = _context(args.context)
    skill = registry.resolve(args.skill)
    decision = evaluate(cfg.policy(), skill, ctx)
    obligations = ", ".join(f"{o.kind}:{o.target}" for o in decision.obligations) or "none"
    _emit(
        cfg,
        {"skill": str(skill.id), **decision.to_dict()},
        f"{skill.id}: {decision.effect.value} ({decision.rationale}); obligations {obligations}",
    )
    return EXIT_OK


def _compose(cfg: CliConfig, args: argparse.Namespace, registry: Registry, ctx: ActivationContext):
    if bool(args.intent) == bool(args.entry):
        raise UsageError("give exactly one of --intent or --entry")
    catalog = registry.catalog()
    graph = build(catalog.skills())
    entry = SkillId.parse(args.entry) if args.entry else None
    intent = TaskIntent(args.intent or args.entry)
    path = compose(intent, catalog, graph, cfg.policy(), ctx, cfg.max_steps, entry=entry)
    return catalog, path


def cmd_compose(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    ctx = _context(args.context)
    try:
        _, path = _compose(cfg, args, registry, ctx)
    except NoAdmissibleEntry as exc:
        print(f"no admissible entry: {exc}", file=sys.stderr)
        return TERMINAL_EXIT[Terminal.DENIED]
    if cfg.machine:
        print(canonical_line(path.to_dict()))
    else:
        print(json.dumps(path.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    ctx = _context(args.context)
    try:
        script = OutcomeScript.load(args.script)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read outcome script {args.script}: {exc}") from None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(ctx.agent_id)
    with registry.lock():
        try:
            catalog, path = _compose(cfg, args, registry, ctx)
        except NoAdmissibleEntry as exc:
            # walk the best lexical match anyway so the denial and its
            # escalation obligations land in the trace and audit log
            hits = registry.discover(DiscoveryQuery(args.intent, limit=1))
            if not hits:
                print(f"denied: {exc}", file=sys.stderr)
                return TERMINAL_EXIT[Terminal.DENIED]
            args.entry, args.intent = str(hits[0][0].id), None
            catalog, path = _compose(cfg, args, registry, ctx)
        trace = simulate(path, script, cfg.policy(), ctx, catalog, cfg.budgets, audit)
    (out_dir / "trace.jsonl").write_text(trace.dumps(), encoding="utf-8")
    export_audit(audit.records, out_dir / "audit.jsonl")
    if cfg.machine:
        sys.stdout.write(trace.dumps())
    else:
        for step in trace.steps:
            print(
                f"{step.position:>3} {step.skill}  {step.decision.effect.value:<16} "
                f"outcome={step.outcome or '-':<8} next={step.next}  context={step.context_tokens_at_step}"
            )
            for ob in step.decision.obligations + step.escalations:
                print(f"      obligation {ob.kind} -> {ob.target} ({ob.detail})")
        print(f"terminal={trace.terminal.value} peak_context_tokens={trace.peak_context_tokens}")
    return TERMINAL_EXIT[trace.terminal]


def cmd_lane_lint(cfg: CliConfig, args: argparse.Namespace) -> int:
    registry = _registry(cfg)
    if args.lanes:
        try:
            lanes = [PavedLane.load(p) for p in args.lanes]
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    else:
        lanes = load_lanes(registry.lanes_dir)
    catalog = registry.catalog()
    graph = build(catalog.skills())
    status = EXIT_OK
    for lane in lanes:
        findings = lint_lane(lane, graph, catalog)
        for f in findings:
            _emit(cfg, {"lane": lane.name, **f.to_dict()}, f"{lane.name}: {f.severity.value} {f.code}: {f.message}")
        if findings:
            status = EXIT_FINDINGS
        elif not cfg.machine:
            print(f"{lane.name}: ok ({len(lane.pinned_sequence)} skills)")
    return status


def cmd_audit_export(cfg: CliConfig, args: argparse.Namespace) -> int:
    try:
        rows = read_audit(args.source)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read audit log {args.source}: {exc}") from None
    if args.strip_timing:
        rows = [strip_timing(r) for r in rows]
    if args.sink == "-":
        for row in sorted(rows, key=lambda r: r["seq"]):
            print(canonical_line(row))
        return EXIT_OK
    count = export_audit(rows, args.sink)
    if not cfg.machine:
        print(f"exported {count} records to {args.sink}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knowact", description="Governed skill registry, topology and simulator.")
    parser.add_argument("--store", default=".knowact", help="registry root directory")
    parser.add_argument("--policy", default=None, help="activation policy file (default: allow everything)")
    parser.add_argument("--format", choices=("human", "machine"), default="human")
    parser.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    parser.add_argument("--discovery-budget", type=int, default=100, help="summary tokens per skill")
    parser.add_argument("--body-budget", type=int, default=5000, help="body tokens per skill")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lint", help="check skill packages")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("publish", help="publish skill packages to the store")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_publish)

    p = sub.add_parser("resolve", help="print a published skill")
    p.add_argument("skill", help="namespace/name[@version]")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("discover", help="rank skills against an intent")
    p.add_argument("text")
    p.add_argument("--filter", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--context", help="activation context JSON; enables policy filtering with --policy")
    p.set_defaults(func=cmd_discover)

    topo = sub.add_parser("topo", help="topology commands").add_subparsers(dest="topo_command", required=True)
    p = topo.add_parser("check", help="check the store's routing graph")
    p.add_argument("--graph", action="store_true", help="also print the edge list")
    p.set_defaults(func=cmd_topo_check)

    pol = sub.add_parser("policy", help="policy commands").add_subparsers(dest="policy_command", required=True)
    p = pol.add_parser("eval", help="evaluate activation of one skill")
    p.add_argument("skill")
    p.add_argument("--context", required=True)
    p.set_defaults(func=cmd_policy_eval)

    for name, func, helptext in (
        ("compose", cmd_compose, "compose a golden path"),
        ("simulate", cmd_simulate, "compose and walk a golden path with scripted outcomes"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--intent")
        p.add_argument("--entry")
        p.add_argument("--context", required=True)
        if name == "simulate":
            p.add_argument("--script", required=True, help="one outcome per line: success, failure or escalate")
            p.add_argument("--out-dir", default=".", help="where trace.jsonl and audit.jsonl are written")
        p.set_defaults(func=func)

    lane = sub.add_parser("lane", help="paved lane commands").add_subparsers(dest="lane_command", required=True)
    p = lane.add_parser("lint", help="check paved lanes against the topology")
    p.add_argument("lanes", nargs="*", help="lane files (default: every lane in the store)")
    p.set_defaults(func=cmd_lane_lint)

    audit = sub.add_parser("audit", help="audit commands").add_subparsers(dest="audit_command", required=True)
    p = audit.add_parser("export", help="re-export an audit log as canonical JSON lines")
    p.add_argument("source")
    p.add_argument("--sink", default="-")
    p.add_argument("--strip-timing", action="store_true", help="drop timestamp and duration fields")
    p.set_defaults(func=cmd_audit_export)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = CliConfig(
            store_root=Path(args.store),
            policy_path=Path(args.policy) if args.policy else None,
            budgets=BudgetConfig(args.discovery_budget, args.body_budget),
            max_steps=args.max_steps,
            output_format=args.format,
        )
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"knowact: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PolicySyntaxError, OSError) as exc:
        print(f"knowact: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"knowact: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotFound as exc:
        print(f"knowact: not found: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    except KnowactError as exc:
        print(f"knowact: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
