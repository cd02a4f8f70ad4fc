from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from knowact.errors import PolicySyntaxError
from knowact.policy import (
    ActivationContext,
    ActivationDecision,
    ActivationPolicy,
    Effect,
    admissible,
    evaluate,
    parse_policy,
)
from knowact.skill import Environment
from support import SATURDAY_10, TUESDAY_10, context, fixture, fixtures, make_skill


@pytest.fixture(scope="module")
def deploy():
    return fixture("deploy-microservice")


class TestEvaluateExamples:
    def test_tier1_requires_approval(self, deploy):
        decision = evaluate(ActivationPolicy.permissive(), deploy, context())
        assert decision.effect is Effect.REQUIRE_APPROVAL
        assert [(o.kind, o.target) for o in decision.obligations] == [("approval", "service-owner")]

    def test_missing_role_denies(self, deploy):
        decision = evaluate(ActivationPolicy.permissive(), deploy, context(roles=()))
        assert decision.effect is Effect.DENY
        assert [(o.kind, o.target) for o in decision.obligations] == [("escalate", "team-lead")]

    def test_closed_window_denies(self, deploy):
        decision = evaluate(ActivationPolicy.permissive(), deploy, context(now=SATURDAY_10))
        assert decision.effect is Effect.DENY
        assert "outside change window" in decision.rationale
        # the declared escalation is for permission-denied only
        assert decision.obligations == ()

    def test_default_deny(self):
        policy = ActivationPolicy((), Effect.DENY)
        decision = evaluate(policy, make_skill("free"), context(roles=()))
        assert decision.effect is Effect.DENY
        assert decision.matched_rule is None


class TestRules:
    policy = parse_policy(
        """
        # production freeze during incidents, except for responders
        rule: effect=deny; rationale=incident freeze; incident=true; role!=incident-responder
        rule: effect=require-approval; approver=sre-lead; rationale=prod changes; skill-environment=production
        rule: effect=allow; ctx-environment=development|staging
        default: deny
        """
    )

    def test_first_match_wins(self):
        skill = make_skill("a", environment=Environment.PRODUCTION)
        decision = evaluate(self.policy, skill, context(roles=()))
        assert decision.effect is Effect.REQUIRE_APPROVAL
        assert decision.matched_rule == 1
        assert decision.obligations[0].target == "sre-lead"

    def test_negated_clause(self):
        skill = make_skill("a", environment=Environment.PRODUCTION)
        frozen = evaluate(self.policy, skill, context(roles=(), incident_active=True))
        responder = evaluate(self.policy, skill, context(roles=["incident-responder"], incident_active=True))
        assert frozen.effect is Effect.DENY and frozen.matched_rule == 0
        assert responder.matched_rule == 1

    def test_default(self):
        decision = evaluate(self.policy, make_skill("a"), context(roles=()))
        assert decision.effect is Effect.DENY and decision.matched_rule is None

    def test_strictest_effect_wins(self, deploy):
        lenient = parse_policy("default: allow")
        assert evaluate(lenient, deploy, context()).effect is Effect.REQUIRE_APPROVAL

    def test_time_clause(self):
        policy = parse_policy("rule: effect=deny; outside=mon-fri 09:00-17:00\ndefault: allow")
        skill = make_skill("a")
        assert evaluate(policy, skill, context(now=TUESDAY_10)).effect is Effect.ALLOW
        assert evaluate(policy, skill, context(now=SATURDAY_10)).effect is Effect.DENY


@pytest.mark.parametrize(
    "text",
    [
        "rule: effect=allow; role=x",
        "rule: effect=allow; colour=blue\ndefault: deny",
        "rule: role=x\ndefault: deny",
        "rule: effect=require-approval; role=x\ndefault: deny",
        "rule: effect=maybe; role=x\ndefault: deny",
        "default: allow\ndefault: deny",
        "permit everything",
    ],
)
def test_policy_syntax_errors(text):
    with pytest.raises(PolicySyntaxError):
        parse_policy(text)


class TestAdmissible:
    def test_incident_responder(self):
        skills = fixtures("deploy-microservice", "respond-to-incident")
        ctx = context(roles=["incident-responder"])
        assert admissible(ActivationPolicy.permissive(), skills, ctx) == {skills[1].id}

    def test_everything(self):
        skills = fixtures("deploy-microservice", "respond-to-incident")
        ctx = context(roles=["deployer", "incident-responder"])
        assert admissible(ActivationPolicy.permissive(), skills, ctx) == {s.id for s in skills}

    def test_empty(self):
        assert admissible(ActivationPolicy.permissive(), [], context()) == set()


class TestContext:
    def test_requires_utc(self):
        with pytest.raises(ValueError):
            ActivationContext("a", frozenset(), Environment.PRODUCTION, datetime(2026, 10, 13, 10))
        with pytest.raises(ValueError):
            ActivationContext(
                "a", frozenset(), Environment.PRODUCTION, datetime(2026, 10, 13, 10, tzinfo=timezone(timedelta(hours=2)))
            )

    def test_dict_requires_marker(self):
        with pytest.raises(ValueError):
            ActivationContext.from_dict({"environment": "production", "now": "2026-10-13T10:00:00"})

    def test_round_trip(self):
        ctx = context(team="payments")
        assert ActivationContext.from_dict(ctx.to_dict()) == ctx


def test_decision_round_trip(deploy):
    decision = evaluate(ActivationPolicy.permissive(), deploy, context(roles=()))
    assert ActivationDecision.from_dict(decision.to_dict()) == decision
