from __future__ import annotations

import json

import pytest

from knowact.cli import main
from knowact.composer import TraceSummary
from knowact.governance import read_audit, strip_timing
from knowact.topology import TopologyReport
from support import DEPLOY_CHAIN, FIXTURES, TUESDAY_10, context, write_package


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_context(path, roles=("deployer",), **kw):
    ctx = context(roles=roles, now=TUESDAY_10, **kw)
    path.write_text(json.dumps(ctx.to_dict()))
    return path


@pytest.fixture
def store(tmp_path, capsys):
    root = tmp_path / "store"
    code, _, _ = run(capsys, "--store", root, "publish", *(FIXTURES / n for n in DEPLOY_CHAIN))
    assert code == 0
    return root


@pytest.fixture
def files(tmp_path):
    ok = tmp_path / "ok.txt"
    ok.write_text("success\nsuccess\n")
    fail = tmp_path / "fail.txt"
    fail.write_text("failure\nsuccess\n")
    return {
        "ok": ok,
        "fail": fail,
        "ctx": write_context(tmp_path / "ctx.json"),
        "norole": write_context(tmp_path / "norole.json", roles=()),
    }


class TestLint:
    def test_deploy_clean(self, capsys):
        code, out, _ = run(capsys, "lint", FIXTURES / "deploy-microservice")
        assert code == 0
        assert "summary 31/100 tokens, body 590/5000 tokens" in out

    def test_missing_procedure(self, capsys):
        code, out, _ = run(capsys, "lint", FIXTURES / "broken-missing-procedure")
        assert code == 1 and "MissingComponent" in out

    def test_no_args(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["lint"])
        assert info.value.code == 2

    def test_unreadable(self, capsys, tmp_path):
        code, _, err = run(capsys, "lint", tmp_path / "nope")
        assert code == 2 and "not a skill package" in err

    def test_machine_format(self, capsys):
        code, out, _ = run(capsys, "--format", "machine", "lint", FIXTURES / "minimal")
        rows = [json.loads(line) for line in out.splitlines()]
        assert code == 0
        assert rows[-1]["record"] == "costs" and rows[-1]["discovery_budget"] == 100

    def test_tight_budget_warns(self, capsys):
        code, out, _ = run(capsys, "--body-budget", "500", "lint", FIXTURES / "deploy-microservice")
        assert code == 0 and "BodyExceedsBudget" in out


class TestTopo:
    def test_fixture_store(self, capsys, store):
        code, out, _ = run(capsys, "--store", store, "--format", "machine", "topo", "check")
        assert code == 0
        assert TopologyReport.from_dict(json.loads(out)) == TopologyReport()

    def test_success_cycle(self, capsys, tmp_path):
        a = write_package(tmp_path, "t/a", continuations={"on-success": ["b"]})
        b = write_package(tmp_path, "t/b", continuations={"on-success": ["a"]})
        root = tmp_path / "cyc"
        run(capsys, "--store", root, "publish", a, b)
        code, out, _ = run(capsys, "--store", root, "topo", "check")
        assert code == 1 and "SuccessCycle(t/a -> t/b -> t/a)" in out

    def test_empty_store(self, capsys, tmp_path):
        (tmp_path / "empty").mkdir()
        code, out, _ = run(capsys, "--store", tmp_path / "empty", "--format", "machine", "topo", "check")
        assert code == 0 and json.loads(out) == {"errors": [], "warnings": []}

    def test_missing_store(self, capsys, tmp_path):
        code, _, _ = run(capsys, "--store", tmp_path / "nowhere", "topo", "check")
        assert code == 2


class TestSimulate:
    def simulate(self, capsys, store, script, ctx, out_dir, *extra):
        return run(
            capsys, "--store", store, "--format", "machine", *extra,
            "simulate", "--intent", "deploy payments", "--script", script, "--context", ctx, "--out-dir", out_dir,
        )

    def test_success(self, capsys, store, files, tmp_path):
        code, out, _ = self.simulate(capsys, store, files["ok"], files["ctx"], tmp_path / "r")
        assert code == 0
        summary = TraceSummary.loads(out)
        assert [s.name for s in summary.visited] == ["deploy-microservice", "post-deployment-verification"]
        assert (tmp_path / "r" / "trace.jsonl").read_text() == out
        assert read_audit(tmp_path / "r" / "audit.jsonl")[0]["phase"] == "activation-decision"

    def test_failure_routes_to_rollback(self, capsys, store, files, tmp_path):
        code, out, _ = self.simulate(capsys, store, files["fail"], files["ctx"], tmp_path / "r")
        assert code == 0
        assert [s.name for s in TraceSummary.loads(out).visited] == ["deploy-microservice", "rollback-deployment"]

    def test_missing_role_denied(self, capsys, store, files, tmp_path):
        code, out, _ = self.simulate(capsys, store, files["ok"], files["norole"], tmp_path / "r")
        assert code == 3
        (decision,) = TraceSummary.loads(out).decisions
        assert [(o.kind, o.target) for o in decision.obligations] == [("escalate", "team-lead")]

    def test_escalated(self, capsys, tmp_path):
        pkg = write_package(
            tmp_path,
            "t/page",
            continuations={"escalation": [{"condition": "step-failed", "target": "on-call"}]},
        )
        root = tmp_path / "esc"
        run(capsys, "--store", root, "publish", pkg)
        script = tmp_path / "s.txt"
        script.write_text("failure\n")
        ctx = write_context(tmp_path / "c.json", roles=())
        code, out, _ = run(
            capsys, "--store", root, "simulate", "--entry", "t/page", "--script", script,
            "--context", ctx, "--out-dir", tmp_path / "r",
        )
        assert code == 6 and "terminal=escalated" in out

    def test_step_limit(self, capsys, tmp_path):
        a = write_package(tmp_path, "t/a", continuations={"on-failure": ["b"]})
        b = write_package(tmp_path, "t/b", continuations={"on-success": ["a"]})
        root = tmp_path / "loop"
        run(capsys, "--store", root, "publish", a, b)
        script = tmp_path / "s.txt"
        script.write_text("failure\nsuccess\n" * 10)
        ctx = write_context(tmp_path / "c.json", roles=())
        code, _, _ = run(
            capsys, "--store", root, "--max-steps", "4", "simulate", "--entry", "t/a",
            "--script", script, "--context", ctx, "--out-dir", tmp_path / "r",
        )
        assert code == 5

    def test_validator_failed(self, capsys, tmp_path):
        pkg = write_package(tmp_path, "t/gated", scripts={"gate.sh": ("pre", "exit 1")})
        root = tmp_path / "vf"
        run(capsys, "--store", root, "publish", pkg)
        script = tmp_path / "s.txt"
        script.write_text("success\n")
        ctx = write_context(tmp_path / "c.json", roles=())
        code, _, _ = run(
            capsys, "--store", root, "simulate", "--entry", "t/gated", "--script", script,
            "--context", ctx, "--out-dir", tmp_path / "r",
        )
        assert code == 4

    def test_deterministic(self, capsys, store, files, tmp_path):
        self.simulate(capsys, store, files["fail"], files["ctx"], tmp_path / "a")
        self.simulate(capsys, store, files["fail"], files["ctx"], tmp_path / "b")
        for name in ("trace.jsonl", "audit.jsonl"):
            a, b = ((tmp_path / d / name).read_text().splitlines() for d in "ab")
            assert [strip_timing(json.loads(x)) for x in a] == [strip_timing(json.loads(x)) for x in b]

    def test_policy_file(self, capsys, store, files, tmp_path):
        policy = tmp_path / "freeze.policy"
        policy.write_text("rule: effect=deny; rationale=release freeze; skill-environment=production\ndefault: allow\n")
        code, _, _ = self.simulate(capsys, store, files["ok"], files["ctx"], tmp_path / "r", "--policy", policy)
        assert code == 3

    def test_bad_policy(self, capsys, store, files, tmp_path):
        policy = tmp_path / "bad.policy"
        policy.write_text("rule: effect=allow; role=x\n")
        code, _, err = self.simulate(capsys, store, files["ok"], files["ctx"], tmp_path / "r", "--policy", policy)
        assert code == 2 and "default" in err


class TestOtherCommands:
    def test_resolve(self, capsys, store):
        code, out, _ = run(capsys, "--store", store, "resolve", "platform/deploy-microservice")
        assert code == 0 and out.startswith("---\nid: platform/deploy-microservice")
        code, out, _ = run(capsys, "--store", store, "--format", "machine", "resolve", "platform/deploy-microservice")
        assert json.loads(out)["governance_tier"] == "ApprovalGated"
        code, _, _ = run(capsys, "--store", store, "resolve", "platform/nothing")
        assert code == 1

    def test_discover(self, capsys, store):
        code, out, _ = run(capsys, "--store", store, "--format", "machine", "discover", "deploy payments service")
        rows = [json.loads(line) for line in out.splitlines()]
        assert code == 0 and rows[0]["id"] == "platform/deploy-microservice@1.0.0"

    def test_discover_bad_filter(self, capsys, store):
        code, _, _ = run(capsys, "--store", store, "discover", "x", "--filter", "colour=red")
        assert code == 2

    def test_policy_eval(self, capsys, store, files):
        code, out, _ = run(
            capsys, "--store", store, "--format", "machine",
            "policy", "eval", "platform/deploy-microservice", "--context", files["norole"],
        )
        assert code == 0 and json.loads(out)["effect"] == "deny"

    def test_compose(self, capsys, store, files):
        code, out, _ = run(
            capsys, "--store", store, "--format", "machine", "compose", "--intent", "deploy payments",
            "--context", files["ctx"],
        )
        plan = json.loads(out)["plan"]
        assert code == 0 and len(plan) == 3

    def test_lane_lint(self, capsys, store):
        lanes = store / "lanes"
        lanes.mkdir()
        (lanes / "release.lane").write_text("platform/deploy-microservice\nplatform/post-deployment-verification\n")
        code, out, _ = run(capsys, "--store", store, "lane", "lint")
        assert code == 0 and "release: ok" in out
        (lanes / "bad.lane").write_text("platform/post-deployment-verification\nplatform/deploy-microservice\n")
        code, out, _ = run(capsys, "--store", store, "lane", "lint")
        assert code == 1 and "MissingEdge" in out

    def test_audit_export(self, capsys, store, files, tmp_path):
        run(capsys, "--store", store, "simulate", "--intent", "deploy", "--script", files["ok"],
            "--context", files["ctx"], "--out-dir", tmp_path / "r")
        code, out, _ = run(capsys, "audit", "export", tmp_path / "r" / "audit.jsonl", "--strip-timing")
        rows = [json.loads(line) for line in out.splitlines()]
        assert code == 0 and all("timestamp" not in r for r in rows)
        code, _, _ = run(capsys, "audit", "export", tmp_path / "r" / "audit.jsonl", "--sink", tmp_path / "copy.jsonl")
        assert code == 0 and (tmp_path / "copy.jsonl").read_text() == (tmp_path / "r" / "audit.jsonl").read_text()
