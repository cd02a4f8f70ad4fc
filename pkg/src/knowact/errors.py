"""Exception types shared across the engine."""

from __future__ import annotations


class KnowactError(Exception):
    """Base class for every error raised by the engine."""


class MissingComponent(KnowactError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"missing schema component: {name}")


class MalformedField(KnowactError):
    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ScriptNotFound(KnowactError):
    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"validator script not found: {path}")


class ZeroCost(KnowactError):
    """Density is undefined for an artifact that costs no tokens."""


class LintGateFailed(KnowactError):
    def __init__(self, findings: list) -> None:
        self.findings = findings
        codes = ", ".join(f.code for f in findings)
        super().__init__(f"lint gate failed: {codes}")


class VersionConflict(KnowactError):
    pass


class NotFound(KnowactError):
    pass


class IntegrityError(KnowactError):
    """A stored package no longer matches its recorded digest."""


class DuplicateSkillId(KnowactError):
    pass


class UnknownNode(KnowactError):
    pass


class PolicySyntaxError(KnowactError):
    pass


class PackageNotMaterialized(KnowactError):
    pass


class SinkUnwritable(KnowactError):
    pass


class NoAdmissibleEntry(KnowactError):
    pass


class BrokenContinuation(KnowactError):
    pass


class IllFormedTopology(KnowactError):
    pass


class UnsatisfiableWindow(KnowactError):
    pass


class ScriptExhausted(KnowactError):
    pass
