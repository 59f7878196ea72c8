"""Simulation events, protocol events and the JSON-lines trace format.

One event per line::

    {"slot": 3, "seq": 17, "kind": "deliver", "node": 4, "payload": "1a2b...", "detail": {...}}

``kind`` is one of :data:`EVENT_KINDS`. ``payload`` is the lowercase hex of
the packet involved (empty when there is none). Protocol events are stored
as ``kind="protocol_event"`` with ``detail = {"event", "key", "subject"}``;
attacker knowledge growth as ``kind="attacker_knowledge_update"`` with
``detail = {"atoms": [hex, ...]}``. Everything an :class:`EventTrace`
exposes is derived from the event list, so a trace read back from disk is
equivalent to the one the simulator produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

EVENT_KINDS = (
    "send",
    "deliver",
    "drop",
    "state_transition",
    "protocol_event",
    "intruder_alert",
    "attacker_knowledge_update",
)

# Protocol event names. Relay events carry the relay id in ``subject``.
SOURCE_RUNNING = "SourceRunning"
MME_RUNNING = "mmeRunning"
DESTINATION_RUNNING = "DestinationRunning"
CLIENT_RUNNING = "ClientRunning"
SOURCE_COMMIT = "SourceCommit"
MME_COMMIT = "mmeCommit"
DESTINATION_COMMIT = "DestinationCommit"
ACCEPTS_SERVER_CLIENT = "acceptsServerClient"
ACCEPTS_SERVER_DESTINATION = "acceptsServerDestination"
TERM_DESTINATION = "termDestination"
REACHABLE = "Reachable"


@dataclass(frozen=True)
class ProtocolEvent:
    kind: str
    key: bytes = b""
    slot: int = 0
    subject: Optional[Any] = None


@dataclass(frozen=True)
class SimEvent:
    slot: int
    seq: int
    kind: str
    node: Optional[int] = None
    payload: bytes = b""
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "slot": self.slot,
                "seq": self.seq,
                "kind": self.kind,
                "node": self.node,
                "payload": self.payload.hex(),
                "detail": self.detail,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "SimEvent":
        raw = json.loads(line)
        if raw.get("kind") not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {raw.get('kind')!r}")
        return cls(
            slot=int(raw["slot"]),
            seq=int(raw["seq"]),
            kind=raw["kind"],
            node=raw.get("node"),
            payload=bytes.fromhex(raw.get("payload", "")),
            detail=dict(raw.get("detail") or {}),
        )


@dataclass
class EventTrace:
    events: list[SimEvent] = field(default_factory=list)

    @property
    def protocol_events(self) -> list[ProtocolEvent]:
        out = []
        for ev in self.events:
            if ev.kind != "protocol_event":
                continue
            d = ev.detail
            out.append(ProtocolEvent(d["event"], bytes.fromhex(d.get("key", "")), ev.slot, d.get("subject")))
        return out

    @property
    def attacker_knowledge(self) -> frozenset[bytes]:
        atoms = set()
        for ev in self.events:
            if ev.kind == "attacker_knowledge_update":
                atoms.update(bytes.fromhex(a) for a in ev.detail.get("atoms", ()))
        return frozenset(atoms)

    def of_kind(self, kind: str) -> list[SimEvent]:
        return [ev for ev in self.events if ev.kind == kind]

    def meta(self) -> dict:
        """Detail of the leading ``run_start`` record, or {} if absent."""
        for ev in self.events:
            if ev.kind == "state_transition" and ev.detail.get("what") == "run_start":
                return ev.detail
        return {}

    def dumps(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self.events)

    @classmethod
    def loads(cls, text: str) -> "EventTrace":
        return cls([SimEvent.from_json(line) for line in text.splitlines() if line.strip()])

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def read(cls, path) -> "EventTrace":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def protocol_event_detail(ev: ProtocolEvent) -> dict:
    return {"event": ev.kind, "key": ev.key.hex(), "subject": ev.subject}


def collect(events: Iterable[ProtocolEvent], kind: str) -> list[ProtocolEvent]:
    return [ev for ev in events if ev.kind == kind]
