from __future__ import annotations

import dataclasses
import json
import time
from datetime import datetime, timezone

import pytest

from knowact.errors import PackageNotMaterialized, SinkUnwritable
from knowact.governance import (
    AuditLog,
    Phase,
    Tier,
    Verdict,
    compute_tier,
    coverage,
    export_audit,
    phase_passed,
    read_audit,
    run_validators,
    strip_timing,
)
from knowact.skill import (
    ApprovalGate,
    Environment,
    MaxScope,
    ServiceTier,
    ValidatorKind,
    ValidatorSpec,
    parse_skill,
)
from support import fixture, make_skill, write_package


def spec(kind: str, verifies=(), name="v.sh") -> ValidatorSpec:
    return ValidatorSpec(ValidatorKind(kind), f"validators/{name}", 5, frozenset(verifies))


class TestRunValidators:
    def test_deploy_pre_phase(self):
        audit = AuditLog("agent-7")
        results, records = run_validators(fixture("deploy-microservice"), "pre", {"AGENT_ID": "agent-7"}, audit)
        assert [r.spec.name for r in results] == ["check-change-window.sh", "verify-ci-green.sh"]
        assert phase_passed(results)
        assert [r.seq for r in records] == [0, 1]
        assert all(r.phase is Phase.PRE for r in records)
        assert results[0].captured_log == "check-change-window.sh ok\n"

    def test_failure(self, tmp_path):
        skill = parse_skill(write_package(tmp_path, "t/a", scripts={"bad.sh": ("post", "echo nope >&2; exit 3")}))
        (result,), _ = run_validators(skill, "post")
        assert result.verdict is Verdict.FAIL
        assert result.exit_detail == 3
        assert result.captured_log == "nope\n"
        assert not phase_passed([result])

    def test_timeout(self, tmp_path):
        skill = parse_skill(write_package(tmp_path, "t/a", scripts={"slow.sh": ("pre", "sleep 30", 0.3)}))
        started = time.monotonic()
        (result,), _ = run_validators(skill, "pre")
        assert result.verdict is Verdict.TIMEOUT
        assert time.monotonic() - started < 5

    def test_environment_is_explicit(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LEAKED", "yes")
        skill = parse_skill(
            write_package(tmp_path, "t/a", scripts={"env.sh": ("pre", 'echo "$STEP:${LEAKED:-unset}"')})
        )
        (result,), _ = run_validators(skill, "pre", {"STEP": "4"})
        assert result.captured_log == "4:unset\n"

    def test_script_error(self, tmp_path):
        pkg = write_package(tmp_path, "t/a", scripts={"gone.sh": ("pre", "exit 0")})
        skill = parse_skill(pkg)
        (pkg / "validators" / "gone.sh").write_text("#!/nonexistent/interpreter\n")
        (result,), _ = run_validators(skill, "pre")
        assert result.verdict is Verdict.SCRIPT_ERROR

    def test_not_materialized(self):
        skill = make_skill("a", validators=[spec("pre")])
        with pytest.raises(PackageNotMaterialized):
            run_validators(skill, "pre")

    def test_no_validators_of_kind(self):
        results, records = run_validators(fixture("minimal"), "invariant")
        assert results == [] and records == []
        assert phase_passed(results)


class TestCoverage:
    def four_keys(self, verified):
        validators = [spec("pre", [k], f"{i}.sh") for i, k in enumerate(verified)]
        skill = make_skill(
            "a",
            roles=["deployer"],
            window="mon-fri 09:00-16:00",
            writable=["svc/deploy"],
            compliance=["SOX"],
            validators=validators,
        )
        assert len(skill.governance.constraint_keys()) == 4
        return skill

    def test_full(self):
        assert coverage(self.four_keys(["required-roles", "change-window", "blast-radius", "compliance:SOX"])) == 1.0

    def test_half(self):
        assert coverage(self.four_keys(["required-roles", "change-window"])) == 0.5

    def test_vacuous(self):
        assert coverage(fixture("minimal")) == 1.0

    def test_deploy(self):
        # keys: required-roles, change-window, blast-radius, approval:1
        assert coverage(fixture("deploy-microservice")) == 0.5


class TestTier:
    def test_deploy_is_approval_gated(self):
        result = compute_tier(fixture("deploy-microservice"))
        assert result.tier is Tier.APPROVAL_GATED
        assert "Tier-1 production cap" in result.basis

    def test_cap_is_decisive_at_full_coverage(self):
        deploy = fixture("deploy-microservice")
        covered = ["required-roles", "change-window", "blast-radius", "approval:1"]
        validators = [
            dataclasses.replace(v, verifies=frozenset(covered)) if v.kind is ValidatorKind.PRE else v
            for v in deploy.validators
        ]
        full = dataclasses.replace(deploy, validators=tuple(validators))
        assert coverage(full) == 1.0
        result = compute_tier(full)
        assert result.tier is Tier.APPROVAL_GATED and result.capped
        tier3 = dataclasses.replace(full, org=dataclasses.replace(full.org, service_tier=ServiceTier.TIER_3))
        assert compute_tier(tier3).tier is Tier.AUTONOMOUS

    def test_zero_coverage(self):
        assert compute_tier(make_skill("a", roles=["x"])).tier is Tier.HUMAN_IN_LOOP

    def test_partial(self):
        skill = make_skill("a", roles=["x"], compliance=["SOX"], validators=[spec("pre", ["required-roles"])])
        assert compute_tier(skill).tier is Tier.APPROVAL_GATED

    def test_notify_without_all_kinds(self):
        skill = make_skill("a", roles=["x"], validators=[spec("pre", ["required-roles"])])
        assert compute_tier(skill).tier is Tier.NOTIFY

    def test_notify_on_wide_scope(self):
        validators = [spec(k, ["required-roles"], f"{k}.sh") for k in ("pre", "post", "invariant")]
        narrow = make_skill("a", roles=["x"], validators=validators)
        wide = make_skill("a", roles=["x"], validators=validators, scope=MaxScope.UNBOUNDED)
        assert compute_tier(narrow).tier is Tier.AUTONOMOUS
        assert compute_tier(wide).tier is Tier.NOTIFY

    def test_gate_adds_constraint_key(self):
        skill = make_skill("a", environment=Environment.PRODUCTION)
        gated = dataclasses.replace(
            skill,
            governance=dataclasses.replace(skill.governance, approval_gates=(ApprovalGate("", "owner"),)),
        )
        assert gated.governance.constraint_keys() == ["approval:1"]


def fixed_clock():
    moment = datetime(2026, 10, 13, 10, tzinfo=timezone.utc)
    return lambda: moment


class TestExport:
    def records(self, n):
        log = AuditLog("agent-7", fixed_clock())
        for i in range(n):
            log.append("t/a@1.0.0", Phase.STEP, {"i": i}, "execute", "success")
        return log.records

    def test_three_records(self, tmp_path):
        sink = tmp_path / "audit.jsonl"
        assert export_audit(self.records(3), sink) == 3
        lines = sink.read_text().splitlines()
        assert [json.loads(line)["seq"] for line in lines] == [0, 1, 2]

    def test_empty(self, tmp_path):
        sink = tmp_path / "audit.jsonl"
        assert export_audit([], sink) == 0
        assert sink.exists() and sink.read_text() == ""

    def test_twice_identical(self, tmp_path):
        records = self.records(3)
        export_audit(records, tmp_path / "a")
        export_audit(records, tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_sorted_by_seq(self, tmp_path):
        records = list(reversed(self.records(3)))
        export_audit(records, tmp_path / "a")
        assert [r["seq"] for r in read_audit(tmp_path / "a")] == [0, 1, 2]

    def test_unwritable(self, tmp_path):
        with pytest.raises(SinkUnwritable):
            export_audit(self.records(1), tmp_path / "missing-dir" / "audit.jsonl")

    def test_strip_timing(self):
        row = self.records(1)[0].to_dict()
        row["validator_results"] = [{"verdict": "pass", "duration_s": 0.1}]
        stripped = strip_timing(row)
        assert "timestamp" not in stripped
        assert stripped["validator_results"] == [{"verdict": "pass"}]
