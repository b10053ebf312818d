"""Message layer: envelopes, performatives, interaction patterns, canonical bytes.

Everything here is syntax: this layer guarantees that messages parse, that
communicative intent is explicit, and that conversations follow their
interaction pattern.  It knows nothing about what the content means.

All types in this module are immutable values after construction and can be
shared freely across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional


class WireError(Exception):
    """Base class for message-layer failures."""


class MalformedFrame(WireError):
    """Byte sequence is not a parseable frame."""


class InvalidEnvelope(WireError):
    """Frame parsed, but the envelope violates a structural invariant."""


class UnknownPerformative(WireError):
    """Performative string outside the closed 11-value registry."""


class NonCanonicalizable(WireError):
    """Value cannot be given a canonical byte form (NaN, infinity, bad type)."""


class IllegalMove(WireError):
    """A conversation received a performative that its pattern forbids."""


# ---------------------------------------------------------------------------
# Content values and canonical encoding
# ---------------------------------------------------------------------------

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

_STRING_ESCAPES = {
    '"': '\\"',
    "\\": "\\\\",
    "\b": "\\b",
    "\f": "\\f",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
}


def check_content_value(value: Any, path: str = "$") -> None:
    """Verify that `value` is a well-formed interchange tree.

    Allowed: None, bool, 64-bit int, finite float, str, list, and dict with
    unique string keys.  Raises NonCanonicalizable with the offending path.
    """
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise NonCanonicalizable(f"{path}: integer outside 64-bit range")
        return
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise NonCanonicalizable(f"{path}: non-finite number")
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            check_content_value(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise NonCanonicalizable(f"{path}: non-string map key {key!r}")
            check_content_value(item, f"{path}.{key}")
        return
    raise NonCanonicalizable(f"{path}: unsupported type {type(value).__name__}")


def _canon_string(s: str) -> str:
    out = ['"']
    for ch in s:
        esc = _STRING_ESCAPES.get(ch)
        if esc is not None:
            out.append(esc)
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _canon(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise NonCanonicalizable("integer outside 64-bit range")
        return str(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise NonCanonicalizable("non-finite number")
        return repr(value)
    if isinstance(value, str):
        return _canon_string(value)
    if isinstance(value, list):
        return "[" + ",".join(_canon(item) for item in value) + "]"
    if isinstance(value, dict):
        pairs = []
        for key in sorted(value.keys()):
            if not isinstance(key, str):
                raise NonCanonicalizable(f"non-string map key {key!r}")
            pairs.append(_canon_string(key) + ":" + _canon(value[key]))
        return "{" + ",".join(pairs) + "}"
    raise NonCanonicalizable(f"unsupported type {type(value).__name__}")


def canonicalize(value: Any) -> bytes:
    """Deterministic byte form: sorted keys, minimal numbers, no whitespace.

    Structurally equal values yield identical bytes regardless of map
    insertion order.  These bytes are what gets framed, hashed and signed.
    """
    return _canon(value).encode("utf-8")


# ---------------------------------------------------------------------------
# Performative registry
# ---------------------------------------------------------------------------

class PerformativeClass(Enum):
    TRANSACTIONAL = "Transactional"
    NEGOTIATION = "Negotiation"
    INFORMATION = "Information"


class Performative(Enum):
    """The 11 standardized speech acts. The registry is closed."""

    REQUEST = "REQUEST"
    AGREE = "AGREE"
    REFUSE = "REFUSE"
    INFORM = "INFORM"
    PROPOSE = "PROPOSE"
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    COUNTER_PROPOSE = "COUNTER_PROPOSE"
    QUERY = "QUERY"
    SUBSCRIBE = "SUBSCRIBE"
    PUBLISH = "PUBLISH"

    @property
    def speech_class(self) -> PerformativeClass:
        return _PERFORMATIVE_CLASSES[self]

    @classmethod
    def parse(cls, text: str) -> "Performative":
        try:
            return cls(text)
        except ValueError:
            raise UnknownPerformative(f"unknown performative {text!r}") from None


_PERFORMATIVE_CLASSES = {
    Performative.REQUEST: PerformativeClass.TRANSACTIONAL,
    Performative.AGREE: PerformativeClass.TRANSACTIONAL,
    Performative.REFUSE: PerformativeClass.TRANSACTIONAL,
    Performative.INFORM: PerformativeClass.TRANSACTIONAL,
    Performative.PROPOSE: PerformativeClass.NEGOTIATION,
    Performative.ACCEPT: PerformativeClass.NEGOTIATION,
    Performative.REJECT: PerformativeClass.NEGOTIATION,
    Performative.COUNTER_PROPOSE: PerformativeClass.NEGOTIATION,
    Performative.QUERY: PerformativeClass.INFORMATION,
    Performative.SUBSCRIBE: PerformativeClass.INFORMATION,
    Performative.PUBLISH: PerformativeClass.INFORMATION,
}

# Which performatives solicit a direct reply, and with what.
_REPLY_SETS = {
    Performative.REQUEST: frozenset({Performative.AGREE, Performative.REFUSE}),
    Performative.PROPOSE: frozenset(
        {Performative.ACCEPT, Performative.REJECT, Performative.COUNTER_PROPOSE}
    ),
    Performative.COUNTER_PROPOSE: frozenset(
        {Performative.ACCEPT, Performative.REJECT, Performative.COUNTER_PROPOSE}
    ),
    Performative.QUERY: frozenset({Performative.INFORM, Performative.REFUSE}),
    Performative.SUBSCRIBE: frozenset({Performative.AGREE, Performative.REFUSE}),
}


# ---------------------------------------------------------------------------
# Envelope
# ---------------------------------------------------------------------------

PROTOCOL_VERSION = "A2A/1.0"
TOPIC_PREFIX = "topic:"

_URN_SHAPE = re.compile(r"^urn:contexts:[^:]+:v\d+\.\d+$")


@dataclass(frozen=True)
class Envelope:
    """The standard envelope every agent message travels in.

    `receiver_ids` is a single agent id for 1:1 traffic, several ids for a
    group, or a single `topic:` name for publish-subscribe fan-out.
    `context_urn` stays absent until a semantic session has been locked for
    the conversation; after the lock every message must carry it.
    """

    message_id: str
    conversation_id: str
    sender_id: str
    receiver_ids: tuple
    performative: Performative
    content: Any
    timestamp: int
    context_urn: Optional[str] = None
    in_reply_to: Optional[str] = None
    protocol_version: str = PROTOCOL_VERSION

    def __post_init__(self):
        object.__setattr__(self, "receiver_ids", tuple(self.receiver_ids))
        self._validate()

    def _validate(self) -> None:
        for name in ("message_id", "conversation_id", "sender_id", "protocol_version"):
            v = getattr(self, name)
            if not isinstance(v, str) or not v:
                raise InvalidEnvelope(f"{name} must be a nonempty string")
        if not self.receiver_ids:
            raise InvalidEnvelope("receiver_ids must be nonempty")
        if not all(isinstance(r, str) and r for r in self.receiver_ids):
            raise InvalidEnvelope("receiver_ids must be nonempty strings")
        if not isinstance(self.performative, Performative):
            raise InvalidEnvelope("performative must be a Performative")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int):
            raise InvalidEnvelope("timestamp must be an integer (ms)")
        if self.timestamp < 0:
            raise InvalidEnvelope("timestamp must be non-negative")
        if self.in_reply_to is not None and (
            not isinstance(self.in_reply_to, str) or not self.in_reply_to
        ):
            raise InvalidEnvelope("in_reply_to must be a nonempty string when present")
        if self.context_urn is not None and not _URN_SHAPE.match(self.context_urn):
            raise InvalidEnvelope(f"context_urn {self.context_urn!r} is not a context URN")
        try:
            check_content_value(self.content)
        except NonCanonicalizable as exc:
            raise InvalidEnvelope(f"content: {exc}") from None

    def to_document(self) -> dict:
        doc = {
            "protocol_version": self.protocol_version,
            "message_id": self.message_id,
            "conversation_id": self.conversation_id,
            "sender_id": self.sender_id,
            "receiver_ids": list(self.receiver_ids),
            "performative": self.performative.value,
            "content": self.content,
            "timestamp": self.timestamp,
        }
        if self.context_urn is not None:
            doc["context_urn"] = self.context_urn
        if self.in_reply_to is not None:
            doc["in_reply_to"] = self.in_reply_to
        return doc

    @classmethod
    def from_document(cls, doc: Any) -> "Envelope":
        if not isinstance(doc, dict):
            raise InvalidEnvelope("envelope document must be a map")
        required = {
            "protocol_version", "message_id", "conversation_id",
            "sender_id", "receiver_ids", "performative", "content", "timestamp",
        }
        optional = {"context_urn", "in_reply_to"}
        keys = set(doc.keys())
        missing = required - keys
        if missing:
            raise InvalidEnvelope(f"missing fields: {sorted(missing)}")
        unknown = keys - required - optional
        if unknown:
            raise InvalidEnvelope(f"unknown fields: {sorted(unknown)}")
        if not isinstance(doc["performative"], str):
            raise InvalidEnvelope("performative must be a string")
        performative = Performative.parse(doc["performative"])
        receivers = doc["receiver_ids"]
        if not isinstance(receivers, list):
            raise InvalidEnvelope("receiver_ids must be a list")
        return cls(
            message_id=doc["message_id"],
            conversation_id=doc["conversation_id"],
            sender_id=doc["sender_id"],
            receiver_ids=tuple(receivers),
            performative=performative,
            content=doc["content"],
            timestamp=doc["timestamp"],
            context_urn=doc.get("context_urn"),
            in_reply_to=doc.get("in_reply_to"),
            protocol_version=doc["protocol_version"],
        )


def encode_envelope(env: Envelope) -> bytes:
    """Frame: 4-byte big-endian length prefix + canonical UTF-8 text."""
    body = canonicalize(env.to_document())
    return len(body).to_bytes(4, "big") + body


def decode_envelope(data: bytes) -> Envelope:
    """Exact inverse of encode_envelope.

    Raises MalformedFrame when the bytes do not contain exactly one
    well-formed frame of valid JSON text, InvalidEnvelope when the document
    violates envelope invariants, and UnknownPerformative for a performative
    string outside the registry.
    """
    import json

    if not isinstance(data, (bytes, bytearray)):
        raise MalformedFrame("expected bytes")
    if len(data) < 4:
        raise MalformedFrame("frame shorter than length prefix")
    declared = int.from_bytes(data[:4], "big")
    body = bytes(data[4:])
    if len(body) != declared:
        raise MalformedFrame(
            f"frame length mismatch: declared {declared}, got {len(body)}"
        )
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFrame(f"invalid UTF-8: {exc}") from None

    def reject_duplicates(pairs):
        out = {}
        for key, value in pairs:
            if key in out:
                raise InvalidEnvelope(f"duplicate map key {key!r}")
            out[key] = value
        return out

    try:
        doc = json.loads(text, object_pairs_hook=reject_duplicates)
    except InvalidEnvelope:
        raise
    except ValueError as exc:
        raise MalformedFrame(f"invalid document text: {exc}") from None
    return Envelope.from_document(doc)


# ---------------------------------------------------------------------------
# Interaction patterns
# ---------------------------------------------------------------------------

class Role(Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"
    PUBLISHER = "publisher"
    SUBSCRIBER = "subscriber"
    LEADER = "leader"
    MEMBER = "member"


@dataclass(frozen=True)
class PatternSpec:
    """State machine skeleton for one interaction pattern.

    `employs` is the closed set of performatives the pattern carries at all;
    `openers` says which performatives each role may emit unsolicited.
    Replies are governed by the shared solicitation table, filtered to the
    employed set.
    """

    arity: str
    roles: tuple
    employs: frozenset
    openers: dict


class InteractionPattern(Enum):
    REQUEST_REPLY = "RequestReply"
    PUBLISH_SUBSCRIBE = "PublishSubscribe"
    AGGREGATION = "Aggregation"
    COLLABORATION_GROUP = "CollaborationGroup"

    @property
    def spec(self) -> PatternSpec:
        return _PATTERN_SPECS[self]


_P = Performative

_PATTERN_SPECS = {
    InteractionPattern.REQUEST_REPLY: PatternSpec(
        arity="1:1",
        roles=(Role.INITIATOR, Role.RESPONDER),
        employs=frozenset({_P.REQUEST, _P.AGREE, _P.REFUSE, _P.INFORM, _P.QUERY}),
        openers={
            Role.INITIATOR: frozenset({_P.REQUEST, _P.QUERY, _P.INFORM}),
            Role.RESPONDER: frozenset({_P.QUERY, _P.INFORM}),
        },
    ),
    InteractionPattern.PUBLISH_SUBSCRIBE: PatternSpec(
        arity="1:N",
        roles=(Role.PUBLISHER, Role.SUBSCRIBER),
        employs=frozenset({_P.SUBSCRIBE, _P.AGREE, _P.REFUSE, _P.INFORM, _P.PUBLISH}),
        openers={
            Role.PUBLISHER: frozenset({_P.PUBLISH, _P.INFORM}),
            Role.SUBSCRIBER: frozenset({_P.SUBSCRIBE}),
        },
    ),
    InteractionPattern.AGGREGATION: PatternSpec(
        arity="N:1",
        roles=(Role.LEADER, Role.MEMBER),
        employs=frozenset({_P.REQUEST, _P.QUERY, _P.AGREE, _P.REFUSE, _P.INFORM}),
        openers={
            Role.LEADER: frozenset({_P.REQUEST, _P.QUERY, _P.INFORM}),
            Role.MEMBER: frozenset({_P.INFORM}),
        },
    ),
    InteractionPattern.COLLABORATION_GROUP: PatternSpec(
        arity="N:N",
        roles=(Role.MEMBER,),
        employs=frozenset(_P),
        openers={
            Role.MEMBER: frozenset(
                {_P.PROPOSE, _P.REQUEST, _P.QUERY, _P.INFORM, _P.PUBLISH, _P.SUBSCRIBE}
            ),
        },
    ),
}


def legal_reply(
    pattern: InteractionPattern, received: Performative, reply: Performative
) -> bool:
    """True iff `reply` is a legal direct reply to `received` in `pattern`.

    Total function.  Performatives that solicit nothing (INFORM, PUBLISH,
    and all acknowledgements) admit no reply at all; answering them means
    starting a new exchange, not replying.
    """
    spec = pattern.spec
    if received not in spec.employs or reply not in spec.employs:
        return False
    return reply in _REPLY_SETS.get(received, frozenset())


class ConversationTracker:
    """Replays one conversation and enforces its pattern's state machine.

    Feed every envelope of a conversation, in order, to observe().  Raises
    IllegalMove as soon as a message is not a legal move for the sender's
    role; afterwards the tracker stays in the error state.
    """

    def __init__(self, pattern: InteractionPattern):
        self.pattern = pattern
        self.initiator: Optional[str] = None
        self.roles: dict = {}
        self.seen_ids: set = set()
        self.pending: dict = {}
        self.subscribed: set = set()
        self.errored = False

    def _role_for(self, sender: str) -> Role:
        if sender in self.roles:
            if self.initiator is None:
                self.initiator = sender
            return self.roles[sender]
        if self.pattern is InteractionPattern.COLLABORATION_GROUP:
            role = Role.MEMBER
        elif self.pattern is InteractionPattern.PUBLISH_SUBSCRIBE:
            # First sender's role was fixed by its opening performative;
            # every later participant takes the opposite side.
            first_role = self.roles.get(self.initiator)
            role = Role.PUBLISHER if first_role is Role.SUBSCRIBER else Role.SUBSCRIBER
        elif self.initiator is None:
            role = (
                Role.INITIATOR
                if self.pattern is InteractionPattern.REQUEST_REPLY
                else Role.LEADER
            )
        else:
            role = (
                Role.RESPONDER
                if self.pattern is InteractionPattern.REQUEST_REPLY
                else Role.MEMBER
            )
        self.roles[sender] = role
        if self.initiator is None:
            self.initiator = sender
        return role

    def _fail(self, message: str):
        self.errored = True
        raise IllegalMove(message)

    def observe(self, env: Envelope) -> None:
        if self.errored:
            self._fail("conversation already in error state")
        if env.message_id in self.seen_ids:
            self._fail(f"duplicate message id {env.message_id}")
        sender = env.sender_id
        perf = env.performative
        # Special case: the first message of a publish-subscribe conversation
        # fixes who is publisher and who is subscriber.
        if self.pattern is InteractionPattern.PUBLISH_SUBSCRIBE and self.initiator is None:
            self.roles[sender] = (
                Role.SUBSCRIBER if perf is Performative.SUBSCRIBE else Role.PUBLISHER
            )
        role = self._role_for(sender)
        spec = self.pattern.spec

        if perf not in spec.employs:
            self._fail(f"{perf.value} is not carried by {self.pattern.value}")

        if env.in_reply_to is not None:
            if env.in_reply_to not in self.seen_ids:
                self._fail(f"reply to unseen message {env.in_reply_to}")
            pending = self.pending.pop(env.in_reply_to, None)
            if pending is None:
                self._fail(f"message {env.in_reply_to} does not solicit a reply")
            solicited, solicitor = pending
            if sender == solicitor:
                self._fail("senders may not answer their own solicitation")
            if not legal_reply(self.pattern, solicited, perf):
                self._fail(
                    f"{perf.value} is not a legal reply to {solicited.value}"
                )
            if solicited is Performative.SUBSCRIBE and perf is Performative.AGREE:
                self.subscribed.add(solicitor)
            if perf in _REPLY_SETS:  # counter-proposals solicit in turn
                self.pending[env.message_id] = (perf, sender)
        else:
            allowed = spec.openers.get(role, frozenset())
            stream_ok = (
                self.pattern is InteractionPattern.PUBLISH_SUBSCRIBE
                and role is Role.PUBLISHER
                and perf in (Performative.INFORM, Performative.PUBLISH)
            )
            if perf not in allowed and not stream_ok:
                self._fail(
                    f"{role.value} may not open with {perf.value} in {self.pattern.value}"
                )
            if perf in _REPLY_SETS:
                self.pending[env.message_id] = (perf, sender)

        self.seen_ids.add(env.message_id)


def mint_conversation_id(sender_id: str, first_message_id: str) -> str:
    """Conversation ids are minted by the initiator from its first message."""
    return f"{sender_id}/{first_message_id}"
