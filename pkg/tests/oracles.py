"""Independent oracles used to freeze expected values.

Everything in this file is deliberately written against the stdlib (json,
hashlib) or as literal hand-enumerated tables, NOT against the package under
test.  The package must agree with these; these must never import from it.
"""

from __future__ import annotations

import hashlib
import json


# ---------------------------------------------------------------------------
# Canonical serialization oracle (stdlib json path)
# ---------------------------------------------------------------------------

def oracle_canonical_text(value) -> str:
    """Canonical form via json.dumps: sorted keys, no whitespace, raw UTF-8."""
    return json.dumps(
        value,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )


def oracle_canonical_bytes(value) -> bytes:
    return oracle_canonical_text(value).encode("utf-8")


def oracle_sha256(value) -> bytes:
    return hashlib.sha256(oracle_canonical_bytes(value)).digest()


def oracle_frame(value) -> bytes:
    """4-byte big-endian length prefix followed by canonical UTF-8 text."""
    body = oracle_canonical_bytes(value)
    return len(body).to_bytes(4, "big") + body


# ---------------------------------------------------------------------------
# Reply legality oracle: hand-enumerated, one table per interaction pattern.
#
# Table maps received performative -> set of legal reply performatives.
# A performative absent from a table means the pattern never carries it, so
# nothing is a legal reply to it and it is never a legal reply itself.
# ---------------------------------------------------------------------------

ALL_PERFORMATIVES = [
    "REQUEST", "AGREE", "REFUSE", "INFORM",
    "PROPOSE", "ACCEPT", "REJECT", "COUNTER_PROPOSE",
    "QUERY", "SUBSCRIBE", "PUBLISH",
]

REPLY_ORACLE = {
    "RequestReply": {
        "REQUEST": {"AGREE", "REFUSE"},
        "AGREE": set(),
        "REFUSE": set(),
        "INFORM": set(),
        "QUERY": {"INFORM", "REFUSE"},
    },
    "PublishSubscribe": {
        "SUBSCRIBE": {"AGREE", "REFUSE"},
        "AGREE": set(),
        "REFUSE": set(),
        "INFORM": set(),
        "PUBLISH": set(),
    },
    "Aggregation": {
        "REQUEST": {"AGREE", "REFUSE"},
        "QUERY": {"INFORM", "REFUSE"},
        "AGREE": set(),
        "REFUSE": set(),
        "INFORM": set(),
    },
    "CollaborationGroup": {
        "REQUEST": {"AGREE", "REFUSE"},
        "AGREE": set(),
        "REFUSE": set(),
        "INFORM": set(),
        "PROPOSE": {"ACCEPT", "REJECT", "COUNTER_PROPOSE"},
        "ACCEPT": set(),
        "REJECT": set(),
        "COUNTER_PROPOSE": {"ACCEPT", "REJECT", "COUNTER_PROPOSE"},
        "QUERY": {"INFORM", "REFUSE"},
        "SUBSCRIBE": {"AGREE", "REFUSE"},
        "PUBLISH": set(),
    },
}


def oracle_legal_reply(pattern: str, received: str, reply: str) -> bool:
    table = REPLY_ORACLE[pattern]
    if received not in table or reply not in table:
        return False
    return reply in table[received]


# ---------------------------------------------------------------------------
# Brute-force sliding-window counter.
#
# Window convention: an event at time t falls inside the window ending at
# time `end` iff  end - window_ms < t <= end.
# ---------------------------------------------------------------------------

def oracle_max_window_count(timestamps, window_ms: int) -> int:
    """Max number of events inside any sliding window, by brute force."""
    ts = sorted(timestamps)
    best = 0
    for end in ts:
        count = sum(1 for t in ts if end - window_ms < t <= end)
        best = max(best, count)
    return best


def oracle_admits_within_bound(timestamps, window_ms: int, max_count: int) -> bool:
    return oracle_max_window_count(timestamps, window_ms) <= max_count


# ---------------------------------------------------------------------------
# Context-document compatibility diff.
#
# Works on plain document dicts (the on-disk shape), not on package types.
# "Compatible" means: the new document keeps every old task, concept, param,
# property and alias byte-for-byte, and anything it adds is an optional
# field, a whole new task/concept, or a new alias key.
# ---------------------------------------------------------------------------

def _fields_compatible(old_fields: dict, new_fields: dict) -> bool:
    for name, spec in old_fields.items():
        if name not in new_fields:
            return False
        if oracle_canonical_text(spec) != oracle_canonical_text(new_fields[name]):
            return False
    for name, spec in new_fields.items():
        if name not in old_fields and spec.get("required", False):
            return False
    return True


def oracle_doc_compatible(old_doc: dict, new_doc: dict) -> bool:
    old_tasks = old_doc.get("tasks", {})
    new_tasks = new_doc.get("tasks", {})
    for name, task in old_tasks.items():
        if name not in new_tasks:
            return False
        if not _fields_compatible(task.get("params", {}), new_tasks[name].get("params", {})):
            return False
    old_concepts = old_doc.get("concepts", {})
    new_concepts = new_doc.get("concepts", {})
    for name, concept in old_concepts.items():
        if name not in new_concepts:
            return False
        if not _fields_compatible(
            concept.get("properties", {}), new_concepts[name].get("properties", {})
        ):
            return False
    old_aliases = old_doc.get("aliases", {})
    new_aliases = new_doc.get("aliases", {})
    for field, table in old_aliases.items():
        if field not in new_aliases:
            return False
        for surface, candidates in table.items():
            if new_aliases[field].get(surface) != candidates:
                return False
    return True
