"""Deterministic in-process network: seeded delivery, adversaries, metrics.

A single-threaded discrete-event loop connects agent programs over
configured links.  Events are ordered by (timestamp, sequence number), all
randomness flows from one seeded generator in send order, and two runs with
identical inputs produce byte-identical traces.  Adversaries attach to one
link or one node and transform, observe or inject traffic in flight.
"""

from __future__ import annotations

import dataclasses
import heapq
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Union

from .context import ContextUrn, format_urn
from .snl import CONTROL_CONCEPTS, is_snl_control
from .wire import Envelope, TOPIC_PREFIX, decode_envelope, encode_envelope


class ConfigError(Exception):
    pass


class StepLimitExceeded(Exception):
    pass


class UnknownTarget(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkConfig:
    latency_ms: int = 10
    drop_probability: float = 0.0
    opaque_to_adversary: bool = False  # models an encrypted link

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError(f"drop_probability {self.drop_probability} outside [0, 1]")
        if self.latency_ms < 0:
            raise ConfigError("latency must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    max_steps: int = 500_000


class Topology:
    def __init__(self):
        self.nodes: set = set()
        self._links: dict = {}   # frozenset({a, b}) -> LinkConfig
        self.topics: dict = {}   # topic name -> sorted list of member ids

    def add_node(self, node_id: str) -> "Topology":
        self.nodes.add(node_id)
        return self

    def add_link(self, a: str, b: str, config: Optional[LinkConfig] = None) -> "Topology":
        self.nodes.update((a, b))
        self._links[frozenset((a, b))] = config or LinkConfig()
        return self

    def add_topic(self, topic: str, members) -> "Topology":
        self.topics[topic] = sorted(members)
        self.nodes.update(members)
        return self

    def link(self, a: str, b: str) -> Optional[LinkConfig]:
        return self._links.get(frozenset((a, b)))

    def connected(self, participants) -> bool:
        participants = set(participants)
        if len(participants) <= 1:
            return True
        adjacency: dict = {}
        for pair in self._links:
            a, b = sorted(pair)
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
        start = sorted(participants)[0]
        seen = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for neighbor in adjacency.get(node, ()):
                if neighbor not in seen:
                    seen.add(neighbor)
                    frontier.append(neighbor)
        return participants <= seen


# ---------------------------------------------------------------------------
# Adversaries
# ---------------------------------------------------------------------------

@dataclass
class HelloStripper:
    """On-path attacker that removes capabilities from handshake hellos."""

    link: tuple                 # (a, b), applies in both directions
    strip: frozenset            # of ContextUrn

    def transform(self, env: Envelope) -> Envelope:
        content = env.content
        if not is_snl_control(content) or content.get("phase") != "hello":
            return env
        stripped = {format_urn(u) for u in self.strip}
        stripped_domains = {u.domain for u in self.strip}
        new_content = dict(content)
        new_content["supported"] = [
            u for u in content["supported"] if u not in stripped
        ]
        # A capable attacker also erases the version floor it is bypassing,
        # so the victim's own minimum is the only remaining defense.
        new_content["min_versions"] = {
            d: v for d, v in content["min_versions"].items()
            if d not in stripped_domains
        }
        return replace(env, content=new_content)


@dataclass
class ContextPoisoner:
    """On-path attacker that swaps the signed schema served at selection."""

    link: tuple
    substitute: Any             # SignedContext

    def transform(self, env: Envelope) -> Envelope:
        content = env.content
        if not is_snl_control(content) or content.get("phase") != "select":
            return env
        new_content = dict(content)
        new_content["chosen"] = format_urn(self.substitute.urn)
        new_content["signed_context"] = self.substitute.to_document()
        return replace(env, content=new_content)


@dataclass
class Flooder:
    """Node-attached attacker that injects templated envelopes at a fixed rate.

    `template` is called with the simulated time and returns the next
    envelope to inject, or None to skip a tick (for instance while its
    session is still being negotiated).
    """

    node: str
    target: str
    template: Callable[[int], Optional[Envelope]]
    rate_per_s: float
    duration_ms: int
    start_ms: int = 0

    @property
    def interval_ms(self) -> int:
        return max(1, round(1000.0 / self.rate_per_s))


@dataclass
class InjectionSender:
    """Compromised node whose outgoing coordinative payloads carry an implant."""

    node: str
    payload: str
    field_path: str

    def transform(self, env: Envelope) -> Envelope:
        if is_snl_control(env.content) or not isinstance(env.content, dict):
            return env
        if isinstance(env.content.get("concept"), str):
            return env  # leave control shapes alone
        parts = self.field_path.split(".")
        content = _set_path(env.content, parts, self.payload)
        if content is None:
            return env
        return replace(env, content=content)


def _set_path(node, parts, value):
    """Copy-on-write set of a dotted path; None when the path is absent."""
    if not parts:
        return value
    head, rest = parts[0], parts[1:]
    if isinstance(node, dict) and head in node:
        updated = _set_path(node[head], rest, value)
        if updated is None:
            return None
        out = dict(node)
        out[head] = updated
        return out
    return None


Adversary = Union[HelloStripper, ContextPoisoner, Flooder, InjectionSender]


# ---------------------------------------------------------------------------
# Metrics and trace
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    """Layer-tagged counters; all monotone while a simulation runs.

    `envelopes_sent` counts transmitted copies (a publish fanning out to two
    subscribers counts twice) so that sent = delivered + dropped + in-flight
    holds at any instant.
    """

    envelopes_sent: int = 0
    delivered: int = 0
    dropped: int = 0
    handshakes_completed: int = 0
    snl_messages: int = 0
    validations_ok: int = 0
    validations_failed: int = 0
    firewall_denied: int = 0
    firewall_quarantined: int = 0
    logic_invocations: int = 0
    sessions_failed: dict = field(default_factory=dict)

    def fail_session(self, reason: str) -> None:
        self.sessions_failed[reason] = self.sessions_failed.get(reason, 0) + 1

    def snapshot(self) -> "Metrics":
        copy = dataclasses.replace(self, sessions_failed=dict(self.sessions_failed))
        return copy

    def as_kv(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "sessions_failed":
                continue
            lines.append(f"{f.name}={getattr(self, f.name)}")
        for reason in sorted(self.sessions_failed):
            lines.append(f"sessions_failed.{reason}={self.sessions_failed[reason]}")
        return "\n".join(lines)


@dataclass
class TraceEvent:
    ts: int
    edge: str
    layer: str
    performative: str
    verdicts: list
    summary: str
    kind: str = "deliver"          # deliver | drop | timer
    sender: str = ""
    receiver: str = ""
    envelope: Optional[Envelope] = None

    def format(self) -> str:
        verdicts = ",".join(self.verdicts) if self.verdicts else "-"
        return (
            f"{self.ts:06d} | {self.edge} | {self.layer} | "
            f"{self.performative} | {verdicts} | {self.summary}"
        )


def _layer_of(env: Envelope) -> str:
    content = env.content
    if is_snl_control(content):
        return "L9"
    if isinstance(content, dict) and content.get("concept") in CONTROL_CONCEPTS:
        return "L9"
    return "L8"


def _summary_of(env: Envelope) -> str:
    content = env.content
    if is_snl_control(content):
        phase = content.get("phase", "?")
        if phase == "hello":
            return f"snl hello {len(content.get('supported', []))} contexts"
        if phase == "select":
            return f"snl select {content.get('chosen')}"
        if phase == "lock":
            return f"snl lock {content.get('urn')}"
        return f"snl {phase} {content.get('reason', '')}".rstrip()
    if isinstance(content, dict):
        concept = content.get("concept")
        if concept == "ambiguous_parameter":
            return f"clarify {content.get('parameter')}={content.get('value')!r}"
        if concept == "parameter_options":
            return f"options {content.get('parameter')}"
        if isinstance(content.get("task"), str):
            return f"task {content['task']}"
        if content and all(isinstance(v, dict) for v in content.values()):
            return "concepts " + ",".join(sorted(content))
    return env.performative.value.lower()


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

class Agent:
    """Base agent program; subclasses override the three callbacks."""

    def __init__(self, agent_id: str):
        self.agent_id = agent_id

    def on_start(self, api: "SimApi") -> None:
        pass

    def on_envelope(self, api: "SimApi", env: Envelope) -> None:
        pass

    def on_timer(self, api: "SimApi", tag: str) -> None:
        pass


class SimApi:
    """The one handle an agent callback gets to interact with the network."""

    def __init__(self, sim: "Simulation"):
        self._sim = sim

    @property
    def now(self) -> int:
        return self._sim.now

    @property
    def metrics(self) -> Metrics:
        return self._sim.metrics

    def send(self, env: Envelope) -> None:
        self._sim.send(env)

    def set_timer(self, delay_ms: int, tag: str, agent_id: str) -> None:
        self._sim.schedule_timer(agent_id, delay_ms, tag)

    def note(self, token: str) -> None:
        self._sim.note(token)

    def note_locked(self, agent_id: str, urn: ContextUrn) -> None:
        self._sim.locks.append((self._sim.now, agent_id, urn))
        self.note(f"locked:{format_urn(urn)}")

    def note_session_failed(self, reason: str) -> None:
        self._sim.metrics.fail_session(reason)
        self.note(f"failed:{reason}")


# ---------------------------------------------------------------------------
# The event loop
# ---------------------------------------------------------------------------

_DELIVER, _TIMER, _FLOOD = 0, 1, 2


class Simulation:
    def __init__(self, config: SimConfig, topology: Topology, agents):
        self.config = config
        self.topology = topology
        self.agents = {}
        for agent in agents:
            if agent.agent_id in self.agents:
                raise ConfigError(f"duplicate agent id {agent.agent_id!r}")
            if agent.agent_id not in topology.nodes:
                raise ConfigError(f"agent {agent.agent_id!r} is not in the topology")
            self.agents[agent.agent_id] = agent
        if not topology.connected(self.agents):
            raise ConfigError("topology is not connected for the participating agents")
        self.rng = random.Random(config.seed)
        self.metrics = Metrics()
        self.events: list = []        # TraceEvent, in processing order
        self.locks: list = []         # (ts, agent, urn)
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self._steps = 0
        self._api = SimApi(self)
        self._current: Optional[TraceEvent] = None
        self._link_adversaries: dict = {}   # frozenset pair -> [adversary]
        self._node_adversaries: dict = {}   # node -> [adversary]

    # -- wiring ---------------------------------------------------------------

    def attach_adversary(self, adversary: Adversary) -> None:
        if isinstance(adversary, (HelloStripper, ContextPoisoner)):
            a, b = adversary.link
            if self.topology.link(a, b) is None:
                raise UnknownTarget(f"no link {a!r} <-> {b!r}")
            self._link_adversaries.setdefault(frozenset((a, b)), []).append(adversary)
        elif isinstance(adversary, InjectionSender):
            if adversary.node not in self.topology.nodes:
                raise UnknownTarget(f"no node {adversary.node!r}")
            self._node_adversaries.setdefault(adversary.node, []).append(adversary)
        elif isinstance(adversary, Flooder):
            if adversary.node not in self.topology.nodes:
                raise UnknownTarget(f"no node {adversary.node!r}")
            if adversary.target not in self.topology.nodes:
                raise UnknownTarget(f"no node {adversary.target!r}")
            self._push(adversary.start_ms, _FLOOD, adversary)
        else:
            raise UnknownTarget(f"unsupported adversary {type(adversary).__name__}")

    def _push(self, ts: int, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (ts, self._seq, kind, payload))

    def schedule_timer(self, agent_id: str, delay_ms: int, tag: str) -> None:
        self._push(self.now + delay_ms, _TIMER, (agent_id, tag))

    def note(self, token: str) -> None:
        if self._current is not None:
            self._current.verdicts.append(token)

    # -- sending ----------------------------------------------------------------

    def _expand_receivers(self, env: Envelope) -> list:
        receivers = []
        for rid in env.receiver_ids:
            if rid.startswith(TOPIC_PREFIX):
                topic = rid[len(TOPIC_PREFIX):]
                members = self.topology.topics.get(topic)
                if members is None:
                    raise UnknownTarget(f"no topic {topic!r}")
                receivers.extend(m for m in members if m != env.sender_id)
            else:
                receivers.append(rid)
        return receivers

    def send(self, env: Envelope) -> None:
        for adversary in self._node_adversaries.get(env.sender_id, ()):
            env = adversary.transform(env)
        for receiver in self._expand_receivers(env):
            link = self.topology.link(env.sender_id, receiver)
            if link is None:
                raise UnknownTarget(f"no link {env.sender_id!r} -> {receiver!r}")
            copy = env
            if not link.opaque_to_adversary:
                for adversary in self._link_adversaries.get(
                    frozenset((env.sender_id, receiver)), ()
                ):
                    copy = adversary.transform(copy)
            self.metrics.envelopes_sent += 1
            if is_snl_control(copy.content):
                self.metrics.snl_messages += 1
            if link.drop_probability > 0 and self.rng.random() < link.drop_probability:
                self.metrics.dropped += 1
                self.events.append(
                    TraceEvent(
                        ts=self.now,
                        edge=f"{env.sender_id}->{receiver}",
                        layer=_layer_of(copy),
                        performative=copy.performative.value,
                        verdicts=["dropped"],
                        summary=_summary_of(copy),
                        kind="drop",
                        sender=env.sender_id,
                        receiver=receiver,
                        envelope=copy,
                    )
                )
                continue
            frame = encode_envelope(copy)
            self._push(self.now + link.latency_ms, _DELIVER, (frame, env.sender_id, receiver))

    # -- the loop -----------------------------------------------------------------

    def run(self) -> tuple:
        for agent_id in sorted(self.agents):
            self.agents[agent_id].on_start(self._api)
        while self._queue:
            self._steps += 1
            if self._steps > self.config.max_steps:
                raise StepLimitExceeded(f"exceeded {self.config.max_steps} steps")
            ts, _, kind, payload = heapq.heappop(self._queue)
            self.now = ts
            if kind == _DELIVER:
                self._process_delivery(payload)
            elif kind == _TIMER:
                self._process_timer(payload)
            else:
                self._process_flood_tick(payload)
        return self.events, self.metrics

    def _process_delivery(self, payload) -> None:
        frame, sender, receiver = payload
        env = decode_envelope(frame)
        self.metrics.delivered += 1
        event = TraceEvent(
            ts=self.now,
            edge=f"{sender}->{receiver}",
            layer=_layer_of(env),
            performative=env.performative.value,
            verdicts=["delivered"],
            summary=_summary_of(env),
            sender=sender,
            receiver=receiver,
            envelope=env,
        )
        self.events.append(event)
        agent = self.agents.get(receiver)
        if agent is None:
            event.verdicts.append("no-agent")
            return
        self._current = event
        try:
            agent.on_envelope(self._api, env)
        finally:
            self._current = None

    def _process_timer(self, payload) -> None:
        agent_id, tag = payload
        event = TraceEvent(
            ts=self.now,
            edge=f"@{agent_id}",
            layer="-",
            performative="-",
            verdicts=["timer"],
            summary=tag,
            kind="timer",
            receiver=agent_id,
        )
        self.events.append(event)
        agent = self.agents.get(agent_id)
        if agent is None:
            return
        self._current = event
        try:
            agent.on_timer(self._api, tag)
        finally:
            self._current = None

    def _process_flood_tick(self, flooder: Flooder) -> None:
        if self.now < flooder.start_ms + flooder.duration_ms:
            env = flooder.template(self.now)
            if env is not None:
                self.send(env)
            self._push(self.now + flooder.interval_ms, _FLOOD, flooder)

    @property
    def in_flight(self) -> int:
        return sum(1 for (_, _, kind, _) in self._queue if kind == _DELIVER)


def run(config: SimConfig, topology: Topology, agents, adversaries=()) -> tuple:
    """Build a simulation, attach adversaries, run to quiescence.

    Returns (trace events, metrics).  Identical inputs give identical
    traces, byte for byte.
    """
    sim = Simulation(config, topology, agents)
    for adversary in adversaries:
        sim.attach_adversary(adversary)
    return sim.run()


def snapshot_metrics(sim: Simulation) -> Metrics:
    """Consistent copy of the counters at the current simulated time."""
    return sim.metrics.snapshot()


def write_trace(events, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.format() + "\n")
