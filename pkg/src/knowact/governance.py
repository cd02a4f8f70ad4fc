"""Validator execution, audit records, validator coverage and governance tiers."""

from __future__ import annotations

import hashlib
import json
import os
import signal
import subprocess
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable

from knowact.errors import PackageNotMaterialized, SinkUnwritable
from knowact.skill import (
    Environment,
    MaxScope,
    ServiceTier,
    Skill,
    ValidatorKind,
    ValidatorSpec,
)

# Fields that legitimately differ between two replays of the same run.
TIMING_FIELDS = frozenset({"timestamp", "duration_s"})


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    TIMEOUT = "timeout"
    SCRIPT_ERROR = "script-error"


@dataclass(frozen=True)
class ValidatorResult:
    spec: ValidatorSpec
    verdict: Verdict
    exit_detail: int | str
    captured_log: str
    duration_s: float

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.spec.kind.value,
            "script": self.spec.script_path,
            "verdict": self.verdict.value,
            "exit_detail": self.exit_detail,
            "captured_log": self.captured_log,
            "duration_s": round(self.duration_s, 6),
        }


class Phase(str, Enum):
    ACTIVATION = "activation-decision"
    PRE = "pre"
    STEP = "step"
    POST = "post"
    INVARIANT = "invariant"


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def digest_of(obj: Any) -> str:
    data = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    timestamp: datetime
    agent_id: str
    skill: str
    phase: Phase
    inputs_digest: str
    action: str
    outcome: str
    validator_results: tuple[ValidatorResult, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp.astimezone(timezone.utc).isoformat().replace("+00:00", "Z"),
            "agent_id": self.agent_id,
            "skill": self.skill,
            "phase": self.phase.value,
            "inputs_digest": self.inputs_digest,
            "action": self.action,
            "outcome": self.outcome,
            "validator_results": [r.to_dict() for r in self.validator_results],
        }


def canonical_line(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def strip_timing(obj: Any) -> Any:
    """Drop :data:`TIMING_FIELDS` at every nesting level."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


class AuditLog:
    """Append-only record sequence for one run."""

    def __init__(self, agent_id: str, clock: Callable[[], datetime] = utc_now) -> None:
        self.agent_id = agent_id
        self.clock = clock
        self._records: list[AuditRecord] = []

    def append(
        self,
        skill: str,
        phase: Phase,
        inputs: Any,
        action: str,
        outcome: str,
        results: Iterable[ValidatorResult] = (),
    ) -> AuditRecord:
        record = AuditRecord(
            seq=len(self._records),
            timestamp=self.clock(),
            agent_id=self.agent_id,
            skill=skill,
            phase=phase,
            inputs_digest=digest_of(inputs),
            action=action,
            outcome=outcome,
            validator_results=tuple(results),
        )
        self._records.append(record)
        return record

    @property
    def records(self) -> tuple[AuditRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)


def _run_script(script: Path, spec: ValidatorSpec, env: dict[str, str], cwd: Path) -> ValidatorResult:
    proc_env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), **{str(k): str(v) for k, v in env.items()}}
    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            [str(script)],
            cwd=cwd,
            env=proc_env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except OSError as exc:
        return ValidatorResult(spec, Verdict.SCRIPT_ERROR, exc.strerror or str(exc), "", time.monotonic() - started)
    try:
        out, err = proc.communicate(timeout=spec.timeout)
    except subprocess.TimeoutExpired:
        # kill the whole process group so grandchildren release the pipes
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
        log = (out + err).decode("utf-8", "replace")
        return ValidatorResult(spec, Verdict.TIMEOUT, f"killed after {spec.timeout}s", log, time.monotonic() - started)
    log = (out + err).decode("utf-8", "replace")
    verdict = Verdict.PASS if proc.returncode == 0 else Verdict.FAIL
    return ValidatorResult(spec, verdict, proc.returncode, log, time.monotonic() - started)


def run_validators(
    skill: Skill,
    kind: ValidatorKind | str,
    env: dict[str, str] | None = None,
    audit: AuditLog | None = None,
) -> tuple[list[ValidatorResult], list[AuditRecord]]:
    """Run ``skill``'s validators of ``kind`` sequentially in declared order.

    Each run appends exactly one audit record.  The phase passes iff every
    verdict is ``pass`` (see :func:`phase_passed`).
    """
    kind = ValidatorKind(kind)
    specs = skill.validators_of(kind)
    env = dict(env or {})
    if specs and (skill.package_root is None or not Path(skill.package_root).is_dir()):
        raise PackageNotMaterialized(str(skill.id))
    audit = audit if audit is not None else AuditLog(env.get("AGENT_ID", "unknown"))
    results: list[ValidatorResult] = []
    records: list[AuditRecord] = []
    for spec in specs:
        root = Path(skill.package_root).resolve()
        result = _run_script(root / spec.script_path, spec, env, root)
        results.append(result)
        records.append(
            audit.append(
                str(skill.id),
                Phase(kind.value),
                {"script": spec.script_path, "env": env},
                f"run {spec.script_path}",
                result.verdict.value,
                [result],
            )
        )
    return results, records


def phase_passed(results: Iterable[ValidatorResult]) -> bool:
    return all(r.passed for r in results)


def export_audit(records: Iterable[AuditRecord | dict[str, Any]], sink: str | os.PathLike[str]) -> int:
    """Write records as newline-delimited canonical JSON, ordered by ``seq``."""
    rows = [r.to_dict() if isinstance(r, AuditRecord) else r for r in records]
    rows.sort(key=lambda r: r["seq"])
    text = "".join(canonical_line(r) + "\n" for r in rows)
    try:
        Path(sink).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise SinkUnwritable(f"{sink}: {exc.strerror or exc}") from None
    return len(rows)


def read_audit(path: str | os.PathLike[str]) -> list[dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def coverage(skill: Skill) -> float:
    """Share of declared constraint keys that some validator verifies."""
    keys = set(skill.governance.constraint_keys())
    if not keys:
        return 1.0
    verified: set[str] = set()
    for spec in skill.validators:
        verified |= spec.verifies
    return len(keys & verified) / len(keys)


class Tier(str, Enum):
    AUTONOMOUS = "Autonomous"
    NOTIFY = "Notify"
    APPROVAL_GATED = "ApprovalGated"
    HUMAN_IN_LOOP = "HumanInLoop"

    @property
    def strictness(self) -> int:
        return list(Tier).index(self)


@dataclass(frozen=True)
class GovernanceTier:
    tier: Tier
    coverage: float
    basis: str
    capped: bool = field(default=False)


def compute_tier(skill: Skill) -> GovernanceTier:
    cov = coverage(skill)
    kinds = {v.kind for v in skill.validators}
    if cov == 1.0:
        if kinds == set(ValidatorKind) and skill.governance.blast_radius.max_scope is MaxScope.SINGLE_SERVICE:
            tier, basis = Tier.AUTONOMOUS, "full coverage, all validator kinds, single-service scope"
        else:
            tier, basis = Tier.NOTIFY, "full coverage without all validator kinds or a single-service scope"
    elif cov > 0:
        tier, basis = Tier.APPROVAL_GATED, f"partial coverage {cov:.3f}"
    else:
        tier, basis = Tier.HUMAN_IN_LOOP, "no declared constraint is verified by a validator"
    capped = False
    if (
        skill.org.service_tier is ServiceTier.TIER_1
        and skill.org.environment is Environment.PRODUCTION
    ):
        if tier.strictness < Tier.APPROVAL_GATED.strictness:
            tier, capped = Tier.APPROVAL_GATED, True
        basis += "; Tier-1 production cap (ApprovalGated or stricter)"
    return GovernanceTier(tier, cov, basis, capped)
