"""Knowledge topology: the routing graph induced by continuation declarations.

Nodes are unversioned skill keys (``namespace/name``).  Cycles confined to
success edges are errors; cycles that need a failure edge are warnings,
since rollback paths legitimately point backwards and the walk is bounded
by the simulator's step limit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from knowact.errors import DuplicateSkillId, UnknownNode
from knowact.skill import EscalationTarget, Skill, SkillId


class EdgeKind(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True, order=True)
class Edge:
    source: str
    target: str
    kind: EdgeKind
    rank: int


@dataclass(frozen=True)
class TopologyGraph:
    nodes: frozenset[str]
    edges: tuple[Edge, ...]
    escalations: dict[str, tuple[EscalationTarget, ...]] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        # canonical edge order so equal graphs compare equal
        ordered = tuple(sorted(self.edges, key=lambda e: (e.source, e.kind.value, e.rank, e.target)))
        object.__setattr__(self, "edges", ordered)

    def out_edges(self, node: str, kind: EdgeKind | None = None) -> list[Edge]:
        found = [e for e in self.edges if e.source == node and (kind is None or e.kind is kind)]
        return sorted(found, key=lambda e: (e.kind.value, e.rank))


@dataclass(frozen=True)
class Finding:
    code: str
    subject: tuple[str, ...]
    detail: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "subject": list(self.subject), "detail": self.detail}

    def __str__(self) -> str:
        if self.code.endswith("Cycle"):
            path = " -> ".join(self.subject + self.subject[:1])
        else:
            path = " -> ".join(self.subject)
        return f"{self.code}({path}){': ' + self.detail if self.detail else ''}"


@dataclass(frozen=True)
class TopologyReport:
    errors: tuple[Finding, ...] = ()
    warnings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "errors": [f.to_dict() for f in self.errors],
            "warnings": [f.to_dict() for f in self.warnings],
        }

    @classmethod
    def from_dict(cls, data: dict) -> TopologyReport:
        def load(items):
            return tuple(Finding(i["code"], tuple(i["subject"]), i.get("detail", "")) for i in items)

        return cls(load(data.get("errors", [])), load(data.get("warnings", [])))


def build(skills: Iterable[Skill]) -> TopologyGraph:
    nodes: set[str] = set()
    edges: list[Edge] = []
    escalations: dict[str, tuple[EscalationTarget, ...]] = {}
    versions: dict[str, str] = {}
    for skill in skills:
        key = skill.id.key
        if key in nodes:
            raise DuplicateSkillId(key)
        nodes.add(key)
        versions[key] = str(skill.id.version)
        for kind, targets in (
            (EdgeKind.SUCCESS, skill.continuations.on_success),
            (EdgeKind.FAILURE, skill.continuations.on_failure),
        ):
            for rank, target in enumerate(targets):
                edges.append(Edge(key, str(target), kind, rank))
        if skill.continuations.on_escalation:
            escalations[key] = skill.continuations.on_escalation
    return TopologyGraph(frozenset(nodes), tuple(edges), escalations, versions)


def node_key(target: str) -> str:
    """Strip an ``@version`` pin from an edge target."""
    return target.partition("@")[0]


def _resolves(graph: TopologyGraph, target: str) -> bool:
    key, _, version = target.partition("@")
    if key not in graph.nodes:
        return False
    return not version or graph.versions.get(key) in (None, version)


def simple_cycles(nodes: Iterable[str], adjacency: dict[str, set[str]]) -> list[tuple[str, ...]]:
    """All elementary cycles, each rotated to start at its smallest node.

    For every start node ``s`` the search only visits nodes greater than
    ``s``, so each cycle is found exactly once, from its smallest member.
    """
    ordered = sorted(set(nodes))
    cycles: list[tuple[str, ...]] = []
    for start in ordered:
        stack = [(start, iter(sorted(adjacency.get(start, ()))))]
        path = [start]
        on_path = {start}
        while stack:
            node, children = stack[-1]
            for child in children:
                if child == start:
                    cycles.append(tuple(path))
                elif child > start and child not in on_path:
                    path.append(child)
                    on_path.add(child)
                    stack.append((child, iter(sorted(adjacency.get(child, ())))))
                    break
            else:
                stack.pop()
                on_path.discard(path.pop())
    return sorted(cycles)


def check(graph: TopologyGraph, lane_roots: Iterable[str] | None = None) -> TopologyReport:
    errors: list[Finding] = []
    warnings: list[Finding] = []

    seen: set[tuple[str, str, EdgeKind]] = set()
    ranks: set[tuple[str, EdgeKind, int]] = set()
    for edge in sorted(graph.edges):
        triple = (edge.source, node_key(edge.target), edge.kind)
        if triple in seen:
            errors.append(Finding("DuplicateEdge", (edge.source, edge.target), edge.kind.value))
        seen.add(triple)
        slot = (edge.source, edge.kind, edge.rank)
        if slot in ranks:
            errors.append(Finding("DuplicateEdge", (edge.source, edge.target), f"rank {edge.rank} reused"))
        ranks.add(slot)
        if not _resolves(graph, edge.target):
            errors.append(Finding("DanglingReference", (edge.source, edge.target), edge.kind.value))

    success_adj: dict[str, set[str]] = {}
    any_adj: dict[str, set[str]] = {}
    for edge in graph.edges:
        target = node_key(edge.target)
        if target not in graph.nodes or edge.source not in graph.nodes:
            continue
        any_adj.setdefault(edge.source, set()).add(target)
        if edge.kind is EdgeKind.SUCCESS:
            success_adj.setdefault(edge.source, set()).add(target)

    success_cycles = set(simple_cycles(graph.nodes, success_adj))
    for cycle in sorted(success_cycles):
        errors.append(Finding("SuccessCycle", cycle))
    for cycle in simple_cycles(graph.nodes, any_adj):
        if cycle not in success_cycles:
            warnings.append(Finding("FailureCycle", cycle))

    if lane_roots is not None:
        roots = [r for r in lane_roots if r in graph.nodes]
        reached = _reach(graph, roots)
        for node in sorted(graph.nodes - reached):
            warnings.append(Finding("OrphanSkill", (node,)))
    return TopologyReport(tuple(errors), tuple(warnings))


def _reach(graph: TopologyGraph, roots: Iterable[str]) -> set[str]:
    seen = set(roots)
    queue = deque(sorted(seen))
    while queue:
        node = queue.popleft()
        for edge in graph.out_edges(node):
            target = node_key(edge.target)
            if target in graph.nodes and target not in seen:
                seen.add(target)
                queue.append(target)
    return seen


def neighbors(graph: TopologyGraph, at: str | SkillId, outcome: EdgeKind | str) -> list[str]:
    key = at.key if isinstance(at, SkillId) else at
    if key not in graph.nodes:
        raise UnknownNode(key)
    kind = EdgeKind(outcome)
    return [e.target for e in graph.out_edges(key, kind)]


def reachable_subgraph(graph: TopologyGraph, roots: Iterable[str | SkillId]) -> TopologyGraph:
    keys = [r.key if isinstance(r, SkillId) else r for r in roots]
    for key in keys:
        if key not in graph.nodes:
            raise UnknownNode(key)
    reached = _reach(graph, keys)
    edges = tuple(e for e in graph.edges if e.source in reached and node_key(e.target) in reached)
    return TopologyGraph(
        frozenset(reached),
        edges,
        {k: v for k, v in graph.escalations.items() if k in reached},
        {k: v for k, v in graph.versions.items() if k in reached},
    )


def serialize(graph: TopologyGraph) -> str:
    """Text export: ``node`` lines, ``<src> -<kind>-> <dst>`` edges in rank
    order, then ``<src> -escalate-> <role> | <condition>`` lines."""
    lines = [f"node {n}" for n in sorted(graph.nodes)]
    for edge in sorted(graph.edges, key=lambda e: (e.source, e.kind.value, e.rank)):
        lines.append(f"{edge.source} -{edge.kind.value}-> {edge.target}")
    for source in sorted(graph.escalations):
        for esc in graph.escalations[source]:
            lines.append(f"{source} -escalate-> {esc.target} | {esc.condition}")
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> TopologyGraph:
    nodes: set[str] = set()
    edges: list[Edge] = []
    escalations: dict[str, list[EscalationTarget]] = {}
    counters: dict[tuple[str, EdgeKind], int] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("node "):
            nodes.add(line[5:].strip())
            continue
        source, arrow, rest = line.partition(" -")
        kind_text, sep, target = rest.partition("-> ")
        if not arrow or not sep:
            raise ValueError(f"cannot read topology line {line!r}")
        if kind_text == "escalate":
            role, _, condition = target.partition(" | ")
            escalations.setdefault(source, []).append(EscalationTarget(condition.strip(), role.strip()))
            continue
        kind = EdgeKind(kind_text)
        rank = counters.get((source, kind), 0)
        counters[(source, kind)] = rank + 1
        edges.append(Edge(source, target.strip(), kind, rank))
    return TopologyGraph(frozenset(nodes), tuple(edges), {k: tuple(v) for k, v in escalations.items()})
