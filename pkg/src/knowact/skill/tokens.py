"""Deterministic token accounting and knowledge density.

Tokens are maximal runs of word characters (letters, digits, underscore);
every other non-whitespace character is a token on its own.  This is not an
LLM tokenizer, only a stable cost unit.
"""

from __future__ import annotations

import re

from knowact.errors import ZeroCost
from knowact.skill.model import DensityInput, Skill

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

DEFAULT_VALUE = 1.0


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def token_cost(text: str) -> int:
    return len(_TOKEN_RE.findall(text))


def knowledge_density(item: DensityInput) -> float:
    """Task value per token of the artifact."""
    if item.cost <= 0:
        raise ZeroCost(f"cost must be positive, got {item.cost}")
    return item.value / item.cost


def summary_view(skill: Skill) -> str:
    """The always-loaded discovery layer: name plus intent description."""
    description = " ".join(skill.intent.description.split())
    return f"{skill.id.name}: {description}"
