"""Semantic firewall: the policy gate between validation and agent logic.

Runs after a message has already proven semantically valid.  Checks, in
order: known injection signatures over every string leaf, concept-level
authorization (first matching rule wins, else the default effect), value
constraints gated on sender credentials, and per-sender sliding-window rate
limits.  Only an allowed message is recorded against rate-limit windows.

Verdicts are a pure function of (policy set, sender, credentials, message,
clock); concept-authorization decisions are cached per
(sender, context hash, concept) without changing any verdict.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Any, Optional

from .snl import ValidatedMessage

ALLOW = "allow"
DENY = "deny"


class PolicyError(Exception):
    pass


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConceptAuth:
    rule_id: str
    agent_pattern: str   # glob over agent ids
    concept: str
    effect: str          # allow | deny

    def matches(self, sender: str, concepts: frozenset) -> bool:
        return fnmatchcase(sender, self.agent_pattern) and self.concept in concepts


@dataclass(frozen=True)
class RateLimit:
    rule_id: str
    agent_pattern: str
    concept: str
    max_count: int
    window_ms: int
    performative: Optional[str] = None  # optionally pin to one performative

    def __post_init__(self):
        if self.max_count < 1 or self.window_ms < 1:
            raise PolicyError(f"rule {self.rule_id!r}: max_count and window_ms must be >= 1")

    def matches(self, sender: str, msg: ValidatedMessage) -> bool:
        if not fnmatchcase(sender, self.agent_pattern):
            return False
        if self.performative is not None and msg.envelope.performative.value != self.performative:
            return False
        return self.concept in msg.concept_names()


_COMPARATORS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "=": lambda a, b: a == b,
}


@dataclass(frozen=True)
class ValueConstraint:
    rule_id: str
    domain: str           # context domain this rule guards
    field_path: str       # dotted path into message content
    comparator: str
    threshold: float
    required_credential: str

    def __post_init__(self):
        if self.comparator not in _COMPARATORS:
            raise PolicyError(f"rule {self.rule_id!r}: unknown comparator {self.comparator!r}")

    def triggered(self, msg: ValidatedMessage) -> bool:
        if msg.context_urn.domain != self.domain:
            return False
        value = resolve_path(msg.content, self.field_path)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return False
        return _COMPARATORS[self.comparator](value, self.threshold)


@dataclass(frozen=True)
class InjectionSignature:
    signature_id: str
    pattern: str
    kind: str = "substring"  # substring | regex, both case-insensitive

    def matches(self, text: str) -> bool:
        if self.kind == "regex":
            return re.search(self.pattern, text, re.IGNORECASE) is not None
        return self.pattern.lower() in text.lower()


DEFAULT_SIGNATURES = (
    InjectionSignature("injection-001", "ignore all previous instructions"),
)


@dataclass(frozen=True)
class PolicySet:
    rules: tuple = ()
    default_effect: str = ALLOW
    injection_signatures: tuple = DEFAULT_SIGNATURES

    def __post_init__(self):
        if self.default_effect not in (ALLOW, DENY):
            raise PolicyError(f"bad default effect {self.default_effect!r}")

    @classmethod
    def from_document(cls, doc: dict) -> "PolicySet":
        rules = []
        for rdoc in doc.get("rules", []):
            rtype = rdoc.get("type")
            if rtype == "concept_auth":
                rules.append(ConceptAuth(
                    rule_id=rdoc["id"],
                    agent_pattern=rdoc["agent_pattern"],
                    concept=rdoc["concept"],
                    effect=rdoc["effect"],
                ))
            elif rtype == "rate_limit":
                rules.append(RateLimit(
                    rule_id=rdoc["id"],
                    agent_pattern=rdoc["agent_pattern"],
                    concept=rdoc["concept"],
                    max_count=rdoc["max_count"],
                    window_ms=rdoc["window_ms"],
                    performative=rdoc.get("performative"),
                ))
            elif rtype == "value_constraint":
                rules.append(ValueConstraint(
                    rule_id=rdoc["id"],
                    domain=rdoc["domain"],
                    field_path=rdoc["field_path"],
                    comparator=rdoc["comparator"],
                    threshold=rdoc["threshold"],
                    required_credential=rdoc["required_credential"],
                ))
            else:
                raise PolicyError(f"unknown rule type {rtype!r}")
        signatures = tuple(
            InjectionSignature(
                signature_id=sdoc["id"],
                pattern=sdoc["pattern"],
                kind=sdoc.get("kind", "substring"),
            )
            for sdoc in doc.get("signatures", [])
        ) or DEFAULT_SIGNATURES
        return cls(
            rules=tuple(rules),
            default_effect=doc.get("default_effect", ALLOW),
            injection_signatures=signatures,
        )


def load_policy(path) -> PolicySet:
    with open(path, "r", encoding="utf-8") as fh:
        return PolicySet.from_document(json.load(fh))


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Allow:
    pass


@dataclass(frozen=True)
class Deny:
    rule_id: str
    reason: str


@dataclass(frozen=True)
class Quarantine:
    signature_id: str
    matched_path: str


FirewallVerdict = Any  # Allow | Deny | Quarantine


def resolve_path(content: Any, path: str) -> Any:
    """Follow a dotted path through maps and lists; None when absent."""
    node = content
    if path == "$":
        return node
    for part in path.split("."):
        if isinstance(node, dict):
            if part not in node:
                return None
            node = node[part]
        elif isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                return None
            node = node[int(part)]
        else:
            return None
    return node


def scan_injection(content: Any, signatures=DEFAULT_SIGNATURES) -> list:
    """Match every string leaf against the signature list.

    Returns [(signature_id, dotted_path)] for all hits, in content order.
    """
    hits = []

    def walk(node, path):
        if isinstance(node, str):
            for sig in signatures:
                if sig.matches(node):
                    hits.append((sig.signature_id, path))
        elif isinstance(node, dict):
            for key, value in node.items():
                walk(value, key if path == "$" else f"{path}.{key}")
        elif isinstance(node, list):
            for i, value in enumerate(node):
                walk(value, f"{path}.{i}" if path != "$" else str(i))

    walk(content, "$")
    return hits


# ---------------------------------------------------------------------------
# Stateful engine
# ---------------------------------------------------------------------------

class SemanticFirewall:
    """Policy engine with rate-limit windows, a decision cache, and an audit log."""

    def __init__(self, policies: PolicySet):
        self.policies = policies
        self._windows: dict = {}     # (rule_id, sender) -> deque of admit timestamps
        self._auth_cache: dict = {}  # (sender, hash, concept) -> first matching rule index
        self.audit: list = []

    # -- individual checks -------------------------------------------------

    def _auth_rule_index(self, sender: str, context_hash: bytes, concept: str) -> Optional[int]:
        key = (sender, context_hash, concept)
        if key in self._auth_cache:
            return self._auth_cache[key]
        found = None
        for i, rule in enumerate(self.policies.rules):
            if isinstance(rule, ConceptAuth) and rule.matches(sender, frozenset({concept})):
                found = i
                break
        self._auth_cache[key] = found
        return found

    def _check_concept_auth(self, sender: str, msg: ValidatedMessage) -> Optional[Deny]:
        indices = [
            idx
            for concept in sorted(msg.concept_names())
            if (idx := self._auth_rule_index(sender, msg.context_hash, concept)) is not None
        ]
        if not indices:
            if self.policies.default_effect == DENY:
                return Deny(rule_id="default", reason="no concept authorization matched")
            return None
        rule = self.policies.rules[min(indices)]
        if rule.effect == DENY:
            return Deny(rule_id=rule.rule_id, reason=f"concept {rule.concept!r} denied")
        return None

    def _check_value_constraints(
        self, sender: str, credentials: frozenset, msg: ValidatedMessage
    ) -> Optional[Deny]:
        for rule in self.policies.rules:
            if not isinstance(rule, ValueConstraint):
                continue
            if rule.triggered(msg) and rule.required_credential not in credentials:
                return Deny(
                    rule_id=rule.rule_id,
                    reason=(
                        f"{rule.field_path} {rule.comparator} {rule.threshold} requires "
                        f"credential {rule.required_credential!r}"
                    ),
                )
        return None

    def _check_rate_limits(self, sender: str, msg: ValidatedMessage, now: int) -> Optional[Deny]:
        for rule in self.policies.rules:
            if not isinstance(rule, RateLimit) or not rule.matches(sender, msg):
                continue
            window = self._windows.setdefault((rule.rule_id, sender), deque())
            while window and window[0] <= now - rule.window_ms:
                window.popleft()
            if len(window) >= rule.max_count:
                return Deny(
                    rule_id=rule.rule_id,
                    reason=f"over {rule.max_count} per {rule.window_ms} ms",
                )
        return None

    def _record_admit(self, sender: str, msg: ValidatedMessage, now: int) -> None:
        for rule in self.policies.rules:
            if isinstance(rule, RateLimit) and rule.matches(sender, msg):
                self._windows.setdefault((rule.rule_id, sender), deque()).append(now)

    # -- the verdict -----------------------------------------------------------

    def evaluate(
        self, sender: str, credentials, msg: ValidatedMessage, now: int
    ) -> FirewallVerdict:
        """Total verdict function; Allow also consumes rate-limit quota."""
        credentials = frozenset(credentials)

        hits = scan_injection(msg.content, self.policies.injection_signatures)
        if hits:
            signature_id, path = hits[0]
            verdict = Quarantine(signature_id=signature_id, matched_path=path)
            self._audit(now, sender, "quarantine", signature_id, path, msg.content)
            return verdict

        denied = self._check_concept_auth(sender, msg)
        if denied is None:
            denied = self._check_value_constraints(sender, credentials, msg)
        if denied is None:
            denied = self._check_rate_limits(sender, msg, now)
        if denied is not None:
            self._audit(now, sender, "deny", denied.rule_id, "-")
            return denied

        self._record_admit(sender, msg, now)
        self._audit(now, sender, "allow", "-", "-")
        return Allow()

    def _audit(self, ts, agent, verdict, rule_id, path, content=None) -> None:
        line = f"{ts} | {agent} | {verdict} | {rule_id} | {path}"
        if content is not None:
            # quarantined payloads are preserved verbatim for later analysis
            line += " | " + json.dumps(content, sort_keys=True, ensure_ascii=False)
        self.audit.append(line)
