"""Trace-level security checks: reachability, correspondence, secrecy, key agreement.

These are necessary conditions evaluated over one simulated run, not proofs.
Every check reads only the :class:`~d2dsec.trace.EventTrace`, so a trace
written to disk can be checked later without the simulator state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from . import trace as ev
from .crypto import BLOCK, Crypto, KeyKind, SymKey
from .errors import FieldOverflow, MalformedPacket, TruncatedPacket
from .tesla import TeslaCommitment, disclosure_slot, locate_disclosed_key
from .trace import EventTrace
from .wire import MSG_REPLY, KeyDisclosure, decode, reply_keys


@dataclass(frozen=True)
class CorrespondencePair:
    name: str
    commit: str
    running: str
    infrastructure_only: bool = False
    match_subject: bool = False


CORRESPONDENCE_PAIRS = (
    CorrespondencePair("source_commit_mme_running", ev.SOURCE_COMMIT, ev.MME_RUNNING, infrastructure_only=True),
    CorrespondencePair("mme_commit_source_running", ev.MME_COMMIT, ev.SOURCE_RUNNING, infrastructure_only=True),
    CorrespondencePair("destination_commit_source_running", ev.DESTINATION_COMMIT, ev.SOURCE_RUNNING),
    CorrespondencePair("term_destination_source_running", ev.TERM_DESTINATION, ev.SOURCE_RUNNING),
    CorrespondencePair(
        "accepts_destination_destination_running", ev.ACCEPTS_SERVER_DESTINATION, ev.DESTINATION_RUNNING
    ),
    CorrespondencePair("source_commit_destination_running", ev.SOURCE_COMMIT, ev.DESTINATION_RUNNING),
    CorrespondencePair(
        "accepts_client_client_running", ev.ACCEPTS_SERVER_CLIENT, ev.CLIENT_RUNNING, match_subject=True
    ),
)


def check_reachability(trace: EventTrace, role: str) -> bool:
    return any(pe.kind == ev.REACHABLE and pe.subject == role for pe in trace.protocol_events)


def check_correspondence(
    trace: EventTrace, commit_kind: str, running_kind: str, injective: bool = False, match_subject: bool = False
) -> bool:
    """Every ``commit_kind`` event is preceded by a ``running_kind`` event with the same key.

    With ``injective`` each running event may justify only one commit. Commits
    are matched in trace order to the earliest unused earlier running event,
    which finds a complete matching whenever one exists because any running
    event usable by one commit is usable by every later commit with that key.
    ``match_subject`` additionally requires equal subjects (relay ids).
    """
    used: set[int] = set()
    runnings: list[tuple[int, ev.ProtocolEvent]] = []
    for index, pe in enumerate(trace.protocol_events):
        if pe.kind == running_kind:
            runnings.append((index, pe))
        if pe.kind != commit_kind:
            continue
        match = None
        for r_index, r in runnings:
            if r.key != pe.key or (match_subject and r.subject != pe.subject):
                continue
            if injective and r_index in used:
                continue
            match = r_index
            break
        if match is None:
            return False
        used.add(match)
    return True


def check_secrecy(trace: EventTrace, secret: bytes) -> bool:
    """True iff ``secret`` (zero-padded to one block) is outside the attacker's knowledge."""
    padded = secret.ljust(BLOCK, b"\0") if len(secret) < BLOCK else secret
    knowledge = trace.attacker_knowledge
    return secret not in knowledge and padded not in knowledge


def check_key_agreement(trace: EventTrace) -> bool:
    """Source, destination and MME all committed, and to one identical key."""
    events = trace.protocol_events
    keys = []
    for kind in (ev.SOURCE_COMMIT, ev.DESTINATION_COMMIT, ev.MME_COMMIT):
        found = {pe.key for pe in events if pe.kind == kind}
        if not found:
            return False
        keys.append(found)
    return len(set().union(*keys)) == 1


def commitments_from_trace(trace: EventTrace) -> dict[int, TeslaCommitment]:
    out = {}
    for owner, c in trace.meta().get("commitments", {}).items():
        out[int(owner)] = TeslaCommitment(
            int(owner),
            SymKey(bytes.fromhex(c["key0"]), KeyKind.TESLA),
            c["start"],
            c["interval_len"],
            c["length"],
            c["delay"],
        )
    return out


def disclosure_violations(trace: EventTrace) -> list[tuple[int, int, int]]:
    """(slot, owner, interval) for every TESLA key sent before its disclosure slot.

    Scans all D2D transmissions for disclosed keys (key disclosure packets
    and keys appended to replies) and locates each in its owner's chain.
    """
    commitments = commitments_from_trace(trace)
    crypto = Crypto()
    located: dict[bytes, Optional[tuple[int, int]]] = {}
    violations = []
    for event in trace.of_kind("send"):
        if event.detail.get("channel") != "d2d" or not event.payload:
            continue
        try:
            packet = decode(event.payload)
        except (TruncatedPacket, MalformedPacket, FieldOverflow, ValueError):
            continue
        if isinstance(packet, KeyDisclosure):
            candidates = [packet.key]
        elif event.payload[0] >> 4 == MSG_REPLY:
            candidates = list(reply_keys(packet))
        else:
            continue
        for key in candidates:
            if key not in located:
                located[key] = None
                for owner, commitment in commitments.items():
                    i = locate_disclosed_key(crypto, commitment, key)
                    if i is not None:
                        located[key] = (owner, i)
                        break
            hit = located[key]
            if hit is not None and event.slot < disclosure_slot(commitments[hit[0]], hit[1]):
                violations.append((event.slot, hit[0], hit[1]))
    return violations


def check_disclosure_safety(trace: EventTrace) -> bool:
    return not disclosure_violations(trace)


# -- suite ------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    scenario: str
    passed: bool

    def line(self) -> str:
        return f"CHECK {self.name} {self.scenario} {'true' if self.passed else 'false'}"


def present_roles(trace: EventTrace) -> list[str]:
    roles = set(trace.meta().get("roles", {}).values())
    return [r for r in ("source", "destination", "relay", "mme") if r in roles]


def run_checks(trace: EventTrace) -> list[CheckResult]:
    """All applicable checks for the scenario recorded in the trace header."""
    meta = trace.meta()
    if not meta:
        raise ValueError("trace has no run_start record")
    scenario = meta["config"]["scenario"]
    infrastructure = scenario in ("DD2D", "RD2D")
    results = []
    for role in present_roles(trace):
        results.append(CheckResult(f"reachability_{role}", scenario, check_reachability(trace, role)))
    for pair in CORRESPONDENCE_PAIRS:
        if pair.infrastructure_only and not infrastructure:
            continue
        if pair.match_subject and "relay" not in present_roles(trace):
            continue
        for injective in (False, True):
            name = f"{'injective' if injective else 'correspondence'}_{pair.name}"
            ok = check_correspondence(trace, pair.commit, pair.running, injective, pair.match_subject)
            results.append(CheckResult(name, scenario, ok))
    results.append(CheckResult("secrecy_m", scenario, check_secrecy(trace, bytes.fromhex(meta["message"]))))
    if infrastructure:
        results.append(CheckResult("key_agreement", scenario, check_key_agreement(trace)))
    results.append(CheckResult("disclosure_safety", scenario, check_disclosure_safety(trace)))
    return results


def format_summary(results: Iterable[CheckResult]) -> str:
    results = list(results)
    width = max((len(r.name) for r in results), default=4)
    lines = [f"{'check':<{width}}  scenario  result"]
    lines += [f"{r.name:<{width}}  {r.scenario:<8}  {'true' if r.passed else 'false'}" for r in results]
    return "\n".join(lines)
