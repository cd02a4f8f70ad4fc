"""Versioned, content-addressed skill store with lexical discovery.

Layout::

    <root>/index.json          canonical JSON, rebuildable from blobs
    <root>/blobs/<digest>/     immutable copy of a published package
    <root>/lanes/<name>.lane   paved lanes
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import re
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterator

from knowact.errors import IntegrityError, LintGateFailed, NotFound, VersionConflict
from knowact.policy import ActivationContext, ActivationPolicy, Effect, evaluate
from knowact.skill import (
    BudgetConfig,
    Skill,
    SkillId,
    TriggerCondition,
    TriggerKind,
    Version,
    lint_skill,
    parse_skill,
)

INDEX_NAME = "index.json"
INDEX_FORMAT = 1

KEYWORD_WEIGHT = 2
DESCRIPTION_WEIGHT = 1
TEAM_BONUS = 1

_TERM_RE = re.compile(r"[a-z0-9]+")

FILTER_FIELDS = ("namespace", "name", "tier", "environment", "owner", "role", "compliance")


def terms(text: str) -> set[str]:
    return set(_TERM_RE.findall(text.lower()))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def package_digest(package_root: Path) -> str:
    """SHA-256 over every regular file's relative path, exec bit and bytes."""
    h = hashlib.sha256()
    files = sorted(p for p in package_root.rglob("*") if p.is_file())
    for path in files:
        rel = path.relative_to(package_root).as_posix()
        data = path.read_bytes()
        executable = "x" if os.access(path, os.X_OK) else "-"
        h.update(f"{rel}\0{executable}\0{len(data)}\0".encode())
        h.update(data)
    return h.hexdigest()


@dataclass(frozen=True)
class EntrySummary:
    id: SkillId
    description: str
    triggers: tuple[TriggerCondition, ...]
    tier: str
    environment: str
    owner: str
    required_roles: frozenset[str]
    compliance_tags: frozenset[str]
    summary_token_cost: int
    package_digest: str

    @classmethod
    def from_skill(cls, skill: Skill, digest: str) -> EntrySummary:
        return cls(
            id=skill.id,
            description=skill.intent.description,
            triggers=skill.intent.triggers,
            tier=skill.org.service_tier.value,
            environment=skill.org.environment.value,
            owner=skill.org.owner_team,
            required_roles=skill.governance.required_roles,
            compliance_tags=skill.governance.compliance_tags,
            summary_token_cost=skill.summary_token_cost,
            package_digest=digest,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": str(self.id),
            "description": self.description,
            "triggers": [{"kind": t.kind.value, "key": t.key, "value": t.value} for t in self.triggers],
            "tier": self.tier,
            "environment": self.environment,
            "owner": self.owner,
            "required_roles": sorted(self.required_roles),
            "compliance_tags": sorted(self.compliance_tags),
            "summary_token_cost": self.summary_token_cost,
            "package_digest": self.package_digest,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EntrySummary:
        return cls(
            id=SkillId.parse(data["id"]),
            description=data["description"],
            triggers=tuple(
                TriggerCondition(TriggerKind(t["kind"]), t["value"], t.get("key", "")) for t in data["triggers"]
            ),
            tier=data["tier"],
            environment=data["environment"],
            owner=data["owner"],
            required_roles=frozenset(data["required_roles"]),
            compliance_tags=frozenset(data["compliance_tags"]),
            summary_token_cost=data["summary_token_cost"],
            package_digest=data["package_digest"],
        )

    def field_matches(self, name: str, value: str) -> bool:
        if name == "namespace":
            return self.id.namespace == value
        if name == "name":
            return self.id.name == value
        if name == "tier":
            return self.tier == value
        if name == "environment":
            return self.environment == value
        if name == "owner":
            return self.owner == value
        if name == "role":
            return value in self.required_roles
        if name == "compliance":
            return value in self.compliance_tags
        raise ValueError(f"unknown filter field {name!r}; expected one of {', '.join(FILTER_FIELDS)}")


@dataclass
class RegistryIndex:
    entries: dict[SkillId, EntrySummary]
    version_chains: dict[str, list[Version]]

    @classmethod
    def empty(cls) -> RegistryIndex:
        return cls({}, {})

    @classmethod
    def from_skills(cls, skills: list[Skill], digests: dict[SkillId, str] | None = None) -> RegistryIndex:
        index = cls.empty()
        for skill in skills:
            index.add(EntrySummary.from_skill(skill, (digests or {}).get(skill.id, "")))
        return index

    def add(self, entry: EntrySummary) -> None:
        self.entries[entry.id] = entry
        chain = self.version_chains.setdefault(entry.id.key, [])
        if entry.id.version not in chain:
            chain.append(entry.id.version)
            chain.sort()

    def latest(self) -> list[EntrySummary]:
        """Newest version of every skill, ordered by id."""
        out = []
        for key in sorted(self.version_chains):
            ns, _, name = key.partition("/")
            out.append(self.entries[SkillId(ns, name, self.version_chains[key][-1])])
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": INDEX_FORMAT,
            "entries": {str(k): v.to_dict() for k, v in self.entries.items()},
            "version_chains": {k: [str(v) for v in vs] for k, vs in self.version_chains.items()},
        }

    def dumps(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> RegistryIndex:
        data = json.loads(text)
        entries = {}
        for value in data["entries"].values():
            entry = EntrySummary.from_dict(value)
            entries[entry.id] = entry
        chains = {k: [Version.parse(v) for v in vs] for k, vs in data["version_chains"].items()}
        for key, chain in chains.items():
            if chain != sorted(set(chain)):
                raise IntegrityError(f"version chain for {key} is not strictly increasing")
        return cls(entries, chains)


@dataclass(frozen=True)
class DiscoveryQuery:
    intent_text: str
    filters: tuple[tuple[str, str], ...] = ()
    limit: int = 10

    def __post_init__(self) -> None:
        if self.limit < 1:
            raise ValueError("limit must be at least 1")


def lexical_score(entry: EntrySummary, query_terms: set[str], ctx: ActivationContext | None) -> Fraction:
    """Weighted term overlap, normalised by the number of distinct query terms."""
    desc = terms(entry.description)
    keywords: set[str] = set()
    for trig in entry.triggers:
        if trig.kind is TriggerKind.KEYWORD:
            keywords |= terms(trig.value)
    hits = sum(DESCRIPTION_WEIGHT * (t in desc) + KEYWORD_WEIGHT * (t in keywords) for t in query_terms)
    score = Fraction(hits, len(query_terms)) if query_terms else Fraction(0)
    if ctx is not None and ctx.team is not None and ctx.team == entry.owner:
        score += TEAM_BONUS
    return score


def discover(
    index: RegistryIndex,
    query: DiscoveryQuery,
    ctx: ActivationContext | None = None,
    *,
    policy: ActivationPolicy | None = None,
    load: Callable[[SkillId], Skill] | None = None,
) -> list[tuple[EntrySummary, float]]:
    """Rank the newest version of each skill against ``query``.

    With query terms present, only entries sharing at least one term are
    returned; a term-less query is a pure structured listing.  Passing
    ``policy`` (with ``load`` to materialise skills) drops entries the policy
    denies in ``ctx``.
    """
    qterms = terms(query.intent_text)
    scored: list[tuple[Fraction, EntrySummary]] = []
    for entry in index.latest():
        if not all(entry.field_matches(f, v) for f, v in query.filters):
            continue
        if qterms and lexical_score(entry, qterms, None) == 0:
            continue
        if policy is not None:
            if load is None or ctx is None:
                raise ValueError("policy filtering needs a context and a skill loader")
            if evaluate(policy, load(entry.id), ctx).effect is Effect.DENY:
                continue
        scored.append((lexical_score(entry, qterms, ctx), entry))
    scored.sort(key=lambda pair: (-pair[0], pair[1].id.namespace, pair[1].id.name))
    return [(entry, float(score)) for score, entry in scored[: query.limit]]


class Registry:
    """A skill store rooted at a directory."""

    def __init__(self, root: str | os.PathLike[str]) -> None:
        self.root = Path(root)
        self.blobs = self.root / "blobs"
        self.index_path = self.root / INDEX_NAME
        self.lanes_dir = self.root / "lanes"

    def ensure(self) -> None:
        self.blobs.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def lock(self) -> Iterator[None]:
        self.ensure()
        with open(self.root / ".lock", "a+") as handle:
            fcntl.flock(handle, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(handle, fcntl.LOCK_UN)

    def load_index(self) -> RegistryIndex:
        if not self.index_path.exists():
            return RegistryIndex.empty()
        return RegistryIndex.loads(self.index_path.read_text(encoding="utf-8"))

    def _write_index(self, index: RegistryIndex) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".index-", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(index.dumps())
        os.replace(tmp, self.index_path)

    def publish(self, package: str | os.PathLike[str], budgets: BudgetConfig = BudgetConfig()) -> SkillId:
        package = Path(package)
        skill = parse_skill(package)
        errors = [f for f in lint_skill(skill, budgets, catalog={}) if f.is_error]
        if errors:
            raise LintGateFailed(errors)
        digest = package_digest(package)
        with self.lock():
            index = self.load_index()
            existing = index.entries.get(skill.id)
            if existing is not None:
                if existing.package_digest == digest:
                    return skill.id
                raise VersionConflict(f"{skill.id} is already published with different contents")
            target = self.blobs / digest
            if not target.exists():
                staging = Path(tempfile.mkdtemp(dir=self.blobs, prefix=".stage-"))
                shutil.copytree(package, staging / "pkg")
                os.replace(staging / "pkg", target)
                staging.rmdir()
            index.add(EntrySummary.from_skill(skill, digest))
            self._write_index(index)
        return skill.id

    def resolve(self, skill_id: SkillId | str) -> Skill:
        if isinstance(skill_id, str):
            skill_id = SkillId.parse(skill_id)
        index = self.load_index()
        chain = index.version_chains.get(skill_id.key)
        if not chain:
            raise NotFound(f"no skill named {skill_id.key}")
        version = skill_id.version or chain[-1]
        full = skill_id.with_version(version)
        entry = index.entries.get(full)
        if entry is None:
            raise NotFound(f"{full} is not published")
        blob = self.blobs / entry.package_digest
        if not blob.is_dir() or package_digest(blob) != entry.package_digest:
            raise IntegrityError(f"stored package for {full} does not match digest {entry.package_digest}")
        return parse_skill(blob)

    def latest_skills(self) -> list[Skill]:
        return [self.resolve(e.id) for e in self.load_index().latest()]

    def rebuild_index(self) -> RegistryIndex:
        """Reconstruct the index purely from stored blobs."""
        index = RegistryIndex.empty()
        if self.blobs.is_dir():
            for blob in sorted(p for p in self.blobs.iterdir() if p.is_dir() and not p.name.startswith(".")):
                digest = package_digest(blob)
                if digest != blob.name:
                    raise IntegrityError(f"blob {blob.name} has digest {digest}")
                index.add(EntrySummary.from_skill(parse_skill(blob), digest))
        return index

    def discover(
        self,
        query: DiscoveryQuery,
        ctx: ActivationContext | None = None,
        policy: ActivationPolicy | None = None,
    ) -> list[tuple[EntrySummary, float]]:
        return discover(self.load_index(), query, ctx, policy=policy, load=self.resolve)

    def catalog(self) -> SkillCatalog:
        """Snapshot of the newest version of every skill."""
        index = self.load_index()
        return SkillCatalog(self.latest_skills(), index)


class SkillCatalog:
    """Immutable in-memory snapshot used by topology, composer and simulator."""

    def __init__(self, skills: list[Skill], index: RegistryIndex | None = None) -> None:
        self._skills = {s.id.key: s for s in skills}
        if len(self._skills) != len(skills):
            raise ValueError("catalog snapshot holds two versions of the same skill")
        self.index = index or RegistryIndex.from_skills(skills)

    def __len__(self) -> int:
        return len(self._skills)

    def __contains__(self, skill_id: object) -> bool:
        return isinstance(skill_id, SkillId) and self._get(skill_id) is not None

    def _get(self, skill_id: SkillId) -> Skill | None:
        skill = self._skills.get(skill_id.key)
        if skill is None or (skill_id.version is not None and skill_id.version != skill.id.version):
            return None
        return skill

    def resolve(self, skill_id: SkillId) -> Skill:
        skill = self._get(skill_id)
        if skill is None:
            raise NotFound(str(skill_id))
        return skill

    def skills(self) -> list[Skill]:
        return [self._skills[k] for k in sorted(self._skills)]

    def discover(
        self,
        query: DiscoveryQuery,
        ctx: ActivationContext | None = None,
        policy: ActivationPolicy | None = None,
    ) -> list[tuple[EntrySummary, float]]:
        return discover(self.index, query, ctx, policy=policy, load=self.resolve)
