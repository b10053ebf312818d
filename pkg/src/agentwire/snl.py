"""Semantic negotiation layer: handshake, grounding, validation, clarification.

The semantic handshake costs exactly three control messages (hello, select,
lock) and produces a SemanticSession binding both agents to one context hash.
From then on every payload crossing the session is validated against the
locked schema before any agent logic sees it, ambiguous values are resolved
by a protocol-level query/inform round instead of free-form chat, and
resolved ambiguities are cached so they cost nothing the next time.

Control messages ride ordinary envelopes: the handshake uses QUERY/INFORM
with a reserved `snl` content flag, clarification uses QUERY/INFORM whose
content carries the `ambiguous_parameter` / `parameter_options` shapes of
the built-in meta context.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .authority import SignedContext, TrustStore, VerificationError, verify_signed_context
from .context import (
    Ambiguous,
    Complete,
    ContextUrn,
    Missing,
    SharedContext,
    UnknownTask,
    ValidationReport,
    Violation,
    UNKNOWN_CONCEPT,
    context_hash,
    format_urn,
    parse_urn,
    validate_content,
    validate_task_params,
    ground_task,
)
from .context import KIND_MISMATCH
from .wire import Envelope, Performative, mint_conversation_id

CONTROL_CONCEPTS = ("ambiguous_parameter", "parameter_options")

# Simulated ms an endpoint waits in one handshake phase before giving up.
HANDSHAKE_TIMEOUT_MS = 5000

DEFAULT_OPTION_CAP = 16


class SnlError(Exception):
    """Base class for negotiation-layer failures."""


class EmptyCapabilities(SnlError):
    pass


class NoCommonContext(SnlError):
    pass


class DowngradeRefused(SnlError):
    pass


class UntrustedContext(SnlError):
    pass


class NotOffered(SnlError):
    pass


class WrongState(SnlError):
    pass


class HashMismatch(SnlError):
    pass


class ContextMismatch(SnlError):
    pass


class MissingParams(SnlError):
    def __init__(self, params):
        super().__init__(f"missing or unusable parameters: {list(params)}")
        self.params = tuple(params)


class UnknownParameter(SnlError):
    pass


class NoOptions(SnlError):
    pass


class ChoiceNotOffered(SnlError):
    pass


class MalformedControl(SnlError):
    pass


class SemanticallyInvalid(SnlError):
    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


class Disposition(Enum):
    """What to do with a semantically invalid message."""

    REJECT = "reject"
    DISAMBIGUATE = "disambiguate"


# ---------------------------------------------------------------------------
# Handshake messages
# ---------------------------------------------------------------------------

def _dedup_keep_first(urns) -> tuple:
    seen = set()
    out = []
    for urn in urns:
        if urn not in seen:
            seen.add(urn)
            out.append(urn)
    return tuple(out)


@dataclass(frozen=True)
class SnlHello:
    supported: tuple            # ContextUrn, preference order
    min_versions: dict          # domain -> (major, minor)
    nonce: bytes                # 16 bytes

    def to_content(self) -> dict:
        return {
            "snl": True,
            "phase": "hello",
            "supported": [format_urn(u) for u in self.supported],
            "min_versions": {d: list(v) for d, v in sorted(self.min_versions.items())},
            "nonce": self.nonce.hex(),
        }

    @classmethod
    def from_content(cls, content: Any) -> "SnlHello":
        try:
            supported = tuple(parse_urn(u) for u in content["supported"])
            min_versions = {
                d: (int(v[0]), int(v[1])) for d, v in content["min_versions"].items()
            }
            nonce = bytes.fromhex(content["nonce"])
        except Exception as exc:
            raise MalformedControl(f"bad hello: {exc}") from None
        return cls(supported=supported, min_versions=min_versions, nonce=nonce)


@dataclass(frozen=True)
class SnlSelect:
    chosen: ContextUrn
    signed_context: SignedContext
    responder_nonce: bytes

    def to_content(self) -> dict:
        return {
            "snl": True,
            "phase": "select",
            "chosen": format_urn(self.chosen),
            "signed_context": self.signed_context.to_document(),
            "nonce": self.responder_nonce.hex(),
        }

    @classmethod
    def from_content(cls, content: Any) -> "SnlSelect":
        try:
            chosen = parse_urn(content["chosen"])
            signed_context = SignedContext.from_document(content["signed_context"])
            nonce = bytes.fromhex(content["nonce"])
        except Exception as exc:
            raise MalformedControl(f"bad select: {exc}") from None
        return cls(chosen=chosen, signed_context=signed_context, responder_nonce=nonce)


@dataclass(frozen=True)
class SnlLock:
    urn: ContextUrn
    context_hash: bytes

    def to_content(self) -> dict:
        return {
            "snl": True,
            "phase": "lock",
            "urn": format_urn(self.urn),
            "context_hash": self.context_hash.hex(),
        }

    @classmethod
    def from_content(cls, content: Any) -> "SnlLock":
        try:
            urn = parse_urn(content["urn"])
            digest = bytes.fromhex(content["context_hash"])
        except Exception as exc:
            raise MalformedControl(f"bad lock: {exc}") from None
        if len(digest) != 32:
            raise MalformedControl("context_hash must be 32 bytes")
        return cls(urn=urn, context_hash=digest)


def is_snl_control(content: Any) -> bool:
    return isinstance(content, dict) and content.get("snl") is True


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

class SessionState(Enum):
    IDLE = "Idle"
    HELLO_SENT = "HelloSent"
    SELECTED = "Selected"
    LOCKED = "Locked"
    FAILED = "Failed"


@dataclass
class SemanticSession:
    """Negotiation state with one peer.

    After the lock, `urn` and `context_hash` never change for the lifetime
    of the session; only the disambiguation cache and counters do.
    """

    peer: Optional[str] = None
    state: SessionState = SessionState.IDLE
    urn: Optional[ContextUrn] = None
    context_hash: Optional[bytes] = None
    context: Optional[SharedContext] = None
    established_at: Optional[int] = None
    validated_count: int = 0
    fail_reason: Optional[str] = None
    offered: tuple = ()
    min_versions: dict = field(default_factory=dict)
    disambiguation_cache: dict = field(default_factory=dict)   # (param, surface) -> value
    received_options: dict = field(default_factory=dict)       # (param, surface) -> tuple
    pending_clarifications: dict = field(default_factory=dict)  # param -> surface

    def fail(self, reason: str) -> None:
        if self.state is SessionState.LOCKED:
            raise WrongState("locked sessions do not fail")
        self.state = SessionState.FAILED
        self.fail_reason = reason

    def _lock(self, urn: ContextUrn, digest: bytes, ctx: SharedContext, now: int) -> None:
        self.state = SessionState.LOCKED
        self.urn = urn
        self.context_hash = digest
        self.context = ctx
        self.established_at = now


# ---------------------------------------------------------------------------
# Handshake operations
# ---------------------------------------------------------------------------

def begin_handshake(
    supported,
    min_versions: Optional[dict] = None,
    *,
    peer: Optional[str] = None,
    rng: Optional[random.Random] = None,
) -> tuple:
    """Build the opening hello and a session in HelloSent.

    Duplicate URNs are dropped, keeping the first (most preferred) position.
    """
    min_versions = dict(min_versions or {})
    supported = _dedup_keep_first(supported)
    if not supported:
        raise EmptyCapabilities("no contexts to offer")
    domains = {u.domain for u in supported}
    for domain in min_versions:
        if domain not in domains:
            raise EmptyCapabilities(
                f"min version for {domain!r} without offering that domain"
            )
    rng = rng or random
    hello = SnlHello(
        supported=supported, min_versions=min_versions, nonce=rng.randbytes(16)
    )
    session = SemanticSession(
        peer=peer,
        state=SessionState.HELLO_SENT,
        offered=supported,
        min_versions=min_versions,
    )
    return hello, session


def select_common_context(local_supported, local_min_versions: dict, hello: SnlHello) -> ContextUrn:
    """Pick the context both sides accept; pure function of its inputs.

    The responder scans its own preference order; the first URN also present
    in the hello fixes the domain, and within that domain the highest shared
    version wins.  If every shared version of that domain sits below either
    side's minimum, the negotiation is refused outright rather than falling
    back to another version or domain.
    """
    local_supported = _dedup_keep_first(local_supported)
    hello_set = set(hello.supported)
    first_common = next((u for u in local_supported if u in hello_set), None)
    if first_common is None:
        raise NoCommonContext("capability lists do not intersect")
    domain = first_common.domain
    shared = [u for u in local_supported if u.domain == domain and u in hello_set]
    chosen = max(shared, key=lambda u: u.version)
    floors = [
        m for m in (local_min_versions.get(domain), hello.min_versions.get(domain))
        if m is not None
    ]
    if any(chosen.version < tuple(m) for m in floors):
        raise DowngradeRefused(
            f"best shared {format_urn(chosen)} is below a required minimum version"
        )
    return chosen


def handle_hello(
    local_supported,
    local_min_versions: dict,
    hello: SnlHello,
    store: TrustStore,
    context_repo: dict,
    *,
    peer: Optional[str] = None,
    rng: Optional[random.Random] = None,
    now: int = 0,
) -> tuple:
    """Responder side: choose a context and return (SnlSelect, session).

    The signed context attached to the select is verified against the
    responder's own trust store first; an unverifiable copy is never offered.
    """
    local_min_versions = dict(local_min_versions or {})
    chosen = select_common_context(local_supported, local_min_versions, hello)
    sc = context_repo.get(chosen)
    if sc is None:
        raise UntrustedContext(f"no signed copy of {format_urn(chosen)} available")
    try:
        verify_signed_context(store, sc, now_ms=now)
    except VerificationError as exc:
        raise UntrustedContext(str(exc)) from exc
    rng = rng or random
    select = SnlSelect(
        chosen=chosen, signed_context=sc, responder_nonce=rng.randbytes(16)
    )
    session = SemanticSession(
        peer=peer,
        state=SessionState.SELECTED,
        urn=chosen,
        context_hash=context_hash(sc.context),
        context=sc.context,
        min_versions=local_min_versions,
    )
    return select, session


def handle_select(
    session: SemanticSession, select: SnlSelect, store: TrustStore, *, now: int = 0
) -> SnlLock:
    """Initiator side: verify the selection and lock the session.

    The returned lock echoes the context hash so both endpoints bind to
    byte-identical schema content, not merely the same URN.
    """
    if session.state is not SessionState.HELLO_SENT:
        raise WrongState(f"cannot handle select in state {session.state.value}")
    if select.chosen not in session.offered:
        session.fail("NotOffered")
        raise NotOffered(f"{format_urn(select.chosen)} was never offered")
    if select.signed_context.urn != select.chosen:
        session.fail("UntrustedContext")
        raise UntrustedContext("signed context does not match the chosen URN")
    try:
        verify_signed_context(store, select.signed_context, now_ms=now)
    except VerificationError as exc:
        session.fail("UntrustedContext")
        raise UntrustedContext(str(exc)) from exc
    floor = session.min_versions.get(select.chosen.domain)
    if floor is not None and select.chosen.version < tuple(floor):
        session.fail("DowngradeRefused")
        raise DowngradeRefused(
            f"{format_urn(select.chosen)} is below our minimum version"
        )
    digest = context_hash(select.signed_context.context)
    session._lock(select.chosen, digest, select.signed_context.context, now)
    return SnlLock(urn=select.chosen, context_hash=digest)


def handle_lock(session: SemanticSession, lock: SnlLock, *, now: int = 0) -> None:
    """Responder side: confirm the echoed hash and complete the handshake."""
    if session.state is not SessionState.SELECTED:
        raise WrongState(f"cannot handle lock in state {session.state.value}")
    if lock.urn != session.urn or lock.context_hash != session.context_hash:
        session.fail("HashMismatch")
        raise HashMismatch("lock does not match the selected context")
    session.state = SessionState.LOCKED
    session.established_at = now


# ---------------------------------------------------------------------------
# Validated messages
# ---------------------------------------------------------------------------

class MessageKind(Enum):
    TASK_REQUEST = "task_request"
    SNL_CONTROL = "snl_control"
    COORDINATIVE = "coordinative"
    ACK = "ack"


@dataclass(frozen=True)
class ValidatedMessage:
    envelope: Envelope
    kind: MessageKind
    context_urn: ContextUrn
    context_hash: bytes
    task: Optional[str] = None
    concepts: dict = field(default_factory=dict)  # entry name -> concept_type
    control_concept: Optional[str] = None

    @property
    def content(self) -> Any:
        return self.envelope.content

    def concept_names(self) -> frozenset:
        """The concepts this message exercises, for authorization policy."""
        names = set(self.concepts.values())
        if self.control_concept:
            names.add(self.control_concept)
        if self.task:
            names.add(self.task)
        return frozenset(names)


_META_CONTEXT_CACHE: list = []


def meta_context() -> SharedContext:
    """The built-in schema for clarification control messages."""
    if not _META_CONTEXT_CACHE:
        from .builtin import builtin_context

        _META_CONTEXT_CACHE.append(builtin_context("urn:contexts:snl-meta:v1.0"))
    return _META_CONTEXT_CACHE[0]


def validate_control_content(content: dict) -> ValidationReport:
    concept_name = content.get("concept")
    meta = meta_context()
    concept = meta.concepts.get(concept_name)
    if concept is None:
        return ValidationReport(
            (Violation("concept", UNKNOWN_CONCEPT, str(concept_name)),)
        )
    fields_only = {k: v for k, v in content.items() if k != "concept"}
    from .context import _check_against_fields  # shared field checker

    return ValidationReport(tuple(_check_against_fields(concept.properties, fields_only, "$")))


_ACK_PERFORMATIVES = frozenset(
    {
        Performative.AGREE,
        Performative.REFUSE,
        Performative.ACCEPT,
        Performative.REJECT,
        Performative.SUBSCRIBE,
    }
)


def validate_incoming(session: SemanticSession, env: Envelope) -> ValidatedMessage:
    """Check an incoming envelope's content against the locked context.

    Dispatch: clarification control shapes validate against the built-in
    meta schema, task REQUESTs against their TaskDef, coordinative payloads
    (INFORM/PUBLISH/PROPOSE/COUNTER_PROPOSE) against the concept
    definitions.  Acknowledgement performatives carry no schema of their own
    and pass through after the context check.

    Raises ContextMismatch when the envelope names the wrong context or none
    at all, and SemanticallyInvalid with a violation report otherwise.
    """
    if session.state is not SessionState.LOCKED:
        raise WrongState("no locked session")
    if env.context_urn is None:
        raise ContextMismatch("message carries no context URN")
    if parse_urn(env.context_urn) != session.urn:
        raise ContextMismatch(
            f"message context {env.context_urn} != session {format_urn(session.urn)}"
        )

    content = env.content
    kind: MessageKind
    task: Optional[str] = None
    concepts: dict = {}
    control_concept: Optional[str] = None

    if isinstance(content, dict) and content.get("concept") in CONTROL_CONCEPTS:
        report = validate_control_content(content)
        if not report.valid:
            raise SemanticallyInvalid(report)
        kind = MessageKind.SNL_CONTROL
        control_concept = content["concept"]
        if control_concept == "parameter_options":
            param = content["parameter"]
            surface = session.pending_clarifications.get(param)
            if surface is not None:
                session.received_options[(param, surface)] = tuple(content["options"])
    elif env.performative is Performative.REQUEST:
        if not isinstance(content, dict) or not isinstance(content.get("task"), str):
            raise SemanticallyInvalid(
                ValidationReport((Violation("task", KIND_MISMATCH, "missing task name"),))
            )
        task = content["task"]
        if task not in session.context.tasks:
            raise SemanticallyInvalid(
                ValidationReport((Violation("task", UNKNOWN_CONCEPT, task),))
            )
        extra = set(content) - {"task", "params"}
        if extra:
            raise SemanticallyInvalid(
                ValidationReport(
                    (Violation(sorted(extra)[0], KIND_MISMATCH, "unexpected field"),)
                )
            )
        report = validate_task_params(session.context, task, content.get("params", {}))
        if not report.valid:
            raise SemanticallyInvalid(report)
        kind = MessageKind.TASK_REQUEST
    elif env.performative in _ACK_PERFORMATIVES:
        kind = MessageKind.ACK
    else:
        report = validate_content(session.context, content)
        if not report.valid:
            raise SemanticallyInvalid(report)
        kind = MessageKind.COORDINATIVE
        if isinstance(content, dict):
            concepts = {name: entry["concept_type"] for name, entry in content.items()}

    session.validated_count += 1
    return ValidatedMessage(
        envelope=env,
        kind=kind,
        context_urn=session.urn,
        context_hash=session.context_hash,
        task=task,
        concepts=concepts,
        control_concept=control_concept,
    )


# ---------------------------------------------------------------------------
# Outbound grounding and clarification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundedRequest:
    envelope: Envelope
    bindings: dict


@dataclass(frozen=True)
class ClarificationNeeded:
    envelope: Envelope
    param: str
    surface: str
    candidates: tuple


def apply_disambiguation_cache(session: SemanticSession, bindings: dict) -> dict:
    out = {}
    for name, value in bindings.items():
        if isinstance(value, str):
            out[name] = session.disambiguation_cache.get((name, value), value)
        else:
            out[name] = value
    return out


def ground_outgoing(
    session: SemanticSession,
    task: str,
    bindings: dict,
    *,
    sender_id: str,
    message_id: str,
    conversation_id: str,
    now: int,
):
    """Ground a task invocation into a sendable envelope.

    Cached disambiguations substitute silently.  A remaining ambiguity turns
    into a protocol-level QUERY instead of sending the ambiguous value;
    missing or unusable parameters are surfaced to agent logic and nothing
    is sent.
    """
    if session.state is not SessionState.LOCKED:
        raise WrongState("no locked session")
    if task not in session.context.tasks:
        raise UnknownTask(f"task {task!r} not in locked context")
    effective = apply_disambiguation_cache(session, bindings)
    result = ground_task(session.context, task, effective)
    if isinstance(result, Missing):
        raise MissingParams(result.params)
    common = dict(
        message_id=message_id,
        conversation_id=conversation_id,
        sender_id=sender_id,
        receiver_ids=(session.peer,),
        timestamp=now,
        context_urn=format_urn(session.urn),
    )
    if isinstance(result, Complete):
        env = Envelope(
            performative=Performative.REQUEST,
            content={"task": task, "params": result.bindings},
            **common,
        )
        return GroundedRequest(envelope=env, bindings=result.bindings)
    assert isinstance(result, Ambiguous)
    session.pending_clarifications[result.param] = result.surface
    env = Envelope(
        performative=Performative.QUERY,
        content={
            "concept": "ambiguous_parameter",
            "parameter": result.param,
            "value": result.surface,
        },
        **common,
    )
    return ClarificationNeeded(
        envelope=env,
        param=result.param,
        surface=result.surface,
        candidates=result.candidates,
    )


def answer_clarification(
    session: SemanticSession,
    query_content: dict,
    *,
    sender_id: str,
    message_id: str,
    conversation_id: str,
    in_reply_to: str,
    now: int,
    option_cap: int = DEFAULT_OPTION_CAP,
) -> Envelope:
    """Answer an ambiguous_parameter query with the schema-derived options.

    Options come from the locked context's alias table; a value without an
    alias entry falls back to the field's full enumeration when that is
    small enough to be useful.
    """
    if session.state is not SessionState.LOCKED:
        raise WrongState("no locked session")
    if not isinstance(query_content, dict) or query_content.get("concept") != "ambiguous_parameter":
        raise MalformedControl("not an ambiguous_parameter query")
    param = query_content.get("parameter")
    surface = query_content.get("value")
    spec = session.context.find_field(param) if isinstance(param, str) else None
    if spec is None:
        raise UnknownParameter(f"parameter {param!r} not defined in locked context")
    candidates = session.context.alias_candidates(param, surface)
    if candidates is None:
        if spec.enum is not None and len(spec.enum) <= option_cap:
            candidates = spec.enum
        else:
            raise NoOptions(f"no options known for {param!r}={surface!r}")
    content = {
        "concept": "parameter_options",
        "parameter": param,
        "options": list(candidates),
    }
    return Envelope(
        message_id=message_id,
        conversation_id=conversation_id,
        sender_id=sender_id,
        receiver_ids=(session.peer,),
        performative=Performative.INFORM,
        content=content,
        timestamp=now,
        context_urn=format_urn(session.urn),
        in_reply_to=in_reply_to,
    )


def resolve_choice(
    session: SemanticSession, parameter: str, surface: str, choice: str
) -> SemanticSession:
    """Cache a disambiguation so future groundings resolve silently."""
    options = session.received_options.get((parameter, surface))
    if options is None or choice not in options:
        raise ChoiceNotOffered(
            f"{choice!r} was not among the offered options for {parameter!r}"
        )
    session.disambiguation_cache[(parameter, surface)] = choice
    session.pending_clarifications.pop(parameter, None)
    return session


# ---------------------------------------------------------------------------
# Per-agent endpoint glue
# ---------------------------------------------------------------------------

@dataclass
class ControlOutcome:
    """What an incoming control message produced."""

    replies: list = field(default_factory=list)
    locked: bool = False
    completed: bool = False          # responder saw a valid lock
    failed_reason: Optional[str] = None


class SnlEndpoint:
    """One agent's negotiation state across all of its peers.

    Owns the per-peer session table and the message-id mint, and turns the
    pure handshake operations into envelope traffic.  Completed sessions are
    cached by (peer, urn, context hash); a changed hash forces a fresh
    handshake instead of silently reusing stale schema bytes.
    """

    def __init__(
        self,
        agent_id: str,
        supported,
        min_versions: Optional[dict] = None,
        *,
        trust_store: TrustStore,
        context_repo: dict,
        rng: Optional[random.Random] = None,
        disposition: Disposition = Disposition.REJECT,
        option_cap: int = DEFAULT_OPTION_CAP,
    ):
        self.agent_id = agent_id
        self.supported = _dedup_keep_first(supported)
        self.min_versions = dict(min_versions or {})
        self.trust_store = trust_store
        self.context_repo = context_repo
        self.rng = rng or random.Random()
        self.disposition = disposition
        self.option_cap = option_cap
        self.sessions: dict = {}        # peer -> SemanticSession
        self.conversations: dict = {}   # peer -> conversation id
        self._counter = 0

    # -- envelope plumbing ---------------------------------------------------

    def next_message_id(self) -> str:
        self._counter += 1
        return f"m-{self._counter:04d}"

    def make_envelope(
        self,
        performative: Performative,
        receivers,
        content: Any,
        *,
        conversation_id: str,
        now: int,
        context_urn: Optional[str] = None,
        in_reply_to: Optional[str] = None,
    ) -> Envelope:
        return Envelope(
            message_id=self.next_message_id(),
            conversation_id=conversation_id,
            sender_id=self.agent_id,
            receiver_ids=tuple(receivers),
            performative=performative,
            content=content,
            timestamp=now,
            context_urn=context_urn,
            in_reply_to=in_reply_to,
        )

    def session_for(self, peer: str) -> Optional[SemanticSession]:
        return self.sessions.get(peer)

    def locked_session(self, peer: str) -> SemanticSession:
        session = self.sessions.get(peer)
        if session is None or session.state is not SessionState.LOCKED:
            raise WrongState(f"no locked session with {peer!r}")
        return session

    def has_locked_session(self, peer: str) -> bool:
        session = self.sessions.get(peer)
        return session is not None and session.state is SessionState.LOCKED

    # -- handshake -----------------------------------------------------------

    def start_handshake(self, peer: str, now: int) -> Envelope:
        hello, session = begin_handshake(
            self.supported, self.min_versions, peer=peer, rng=self.rng
        )
        self.sessions[peer] = session
        message_id = self.next_message_id()
        conversation_id = mint_conversation_id(self.agent_id, message_id)
        self.conversations[peer] = conversation_id
        return Envelope(
            message_id=message_id,
            conversation_id=conversation_id,
            sender_id=self.agent_id,
            receiver_ids=(peer,),
            performative=Performative.QUERY,
            content=hello.to_content(),
            timestamp=now,
        )

    def _refusal(self, env: Envelope, reason: str, now: int) -> Envelope:
        from .wire import InteractionPattern, legal_reply

        replyable = legal_reply(
            InteractionPattern.COLLABORATION_GROUP, env.performative, Performative.REFUSE
        )
        return self.make_envelope(
            Performative.REFUSE,
            (env.sender_id,),
            {"snl": True, "phase": "refuse", "reason": reason},
            conversation_id=env.conversation_id,
            now=now,
            in_reply_to=env.message_id if replyable else None,
        )

    def process_control(self, env: Envelope, now: int) -> ControlOutcome:
        """Advance the handshake with one incoming control envelope."""
        peer = env.sender_id
        content = env.content
        if not is_snl_control(content):
            raise MalformedControl("not a control message")
        phase = content.get("phase")

        if phase == "hello":
            hello = SnlHello.from_content(content)
            self.conversations[peer] = env.conversation_id
            try:
                select, session = handle_hello(
                    self.supported,
                    self.min_versions,
                    hello,
                    self.trust_store,
                    self.context_repo,
                    peer=peer,
                    rng=self.rng,
                    now=now,
                )
            except (NoCommonContext, DowngradeRefused, UntrustedContext) as exc:
                failed = SemanticSession(peer=peer, state=SessionState.HELLO_SENT)
                failed.fail(type(exc).__name__)
                self.sessions[peer] = failed
                return ControlOutcome(
                    replies=[self._refusal(env, type(exc).__name__, now)],
                    failed_reason=type(exc).__name__,
                )
            self.sessions[peer] = session
            reply = self.make_envelope(
                Performative.INFORM,
                (peer,),
                select.to_content(),
                conversation_id=env.conversation_id,
                now=now,
                in_reply_to=env.message_id,
            )
            return ControlOutcome(replies=[reply])

        if phase == "select":
            session = self.sessions.get(peer)
            if session is None:
                raise WrongState(f"select from {peer!r} without a handshake")
            select = SnlSelect.from_content(content)
            try:
                lock = handle_select(session, select, self.trust_store, now=now)
            except SnlError as exc:
                return ControlOutcome(
                    replies=[self._refusal(env, type(exc).__name__, now)],
                    failed_reason=type(exc).__name__,
                )
            reply = self.make_envelope(
                Performative.INFORM,
                (peer,),
                lock.to_content(),
                conversation_id=env.conversation_id,
                now=now,
            )
            return ControlOutcome(replies=[reply], locked=True)

        if phase == "lock":
            session = self.sessions.get(peer)
            if session is None:
                raise WrongState(f"lock from {peer!r} without a handshake")
            lock = SnlLock.from_content(content)
            try:
                handle_lock(session, lock, now=now)
            except SnlError as exc:
                return ControlOutcome(failed_reason=type(exc).__name__)
            return ControlOutcome(locked=True, completed=True)

        if phase == "refuse":
            session = self.sessions.get(peer)
            reason = str(content.get("reason", "Refused"))
            if session is not None and session.state not in (
                SessionState.LOCKED,
                SessionState.FAILED,
            ):
                session.fail(reason)
            return ControlOutcome(failed_reason=reason)

        raise MalformedControl(f"unknown control phase {phase!r}")

    def check_timeout(self, peer: str, armed_state: SessionState) -> Optional[str]:
        """Fail the session if it is still stuck in `armed_state`."""
        session = self.sessions.get(peer)
        if session is not None and session.state is armed_state:
            session.fail("Timeout")
            return "Timeout"
        return None

    # -- post-lock traffic -----------------------------------------------------

    def ground_outgoing(self, peer: str, task: str, bindings: dict, now: int):
        session = self.locked_session(peer)
        conversation_id = self.conversations[peer]
        return ground_outgoing(
            session,
            task,
            bindings,
            sender_id=self.agent_id,
            message_id=self.next_message_id(),
            conversation_id=conversation_id,
            now=now,
        )

    def answer_clarification(self, env: Envelope, now: int) -> Envelope:
        session = self.locked_session(env.sender_id)
        return answer_clarification(
            session,
            env.content,
            sender_id=self.agent_id,
            message_id=self.next_message_id(),
            conversation_id=env.conversation_id,
            in_reply_to=env.message_id,
            now=now,
            option_cap=self.option_cap,
        )

    def validate_incoming(self, env: Envelope) -> ValidatedMessage:
        session = self.locked_session(env.sender_id)
        return validate_incoming(session, env)

    def refuse_invalid(self, env: Envelope, report: ValidationReport, now: int) -> Envelope:
        """Build the rejection notice for a semantically invalid message.

        The refusal stands alone (no in_reply_to) when the offending
        performative does not admit replies; the report rides in content.
        """
        from .wire import legal_reply, InteractionPattern

        replyable = legal_reply(
            InteractionPattern.COLLABORATION_GROUP, env.performative, Performative.REFUSE
        )
        return self.make_envelope(
            Performative.REFUSE,
            (env.sender_id,),
            {
                "refused_message_id": env.message_id,
                "reason": "SemanticallyInvalid",
                "violations": [str(v) for v in report.violations],
            },
            conversation_id=env.conversation_id,
            now=now,
            context_urn=env.context_urn,
            in_reply_to=env.message_id if replyable else None,
        )
