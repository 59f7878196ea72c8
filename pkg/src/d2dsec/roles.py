"""Source, Relay, Destination and MME state machines for the four scenarios.

The machines are driven by :mod:`d2dsec.netsim` but can be exercised
directly: every operation takes the role state, the packet or request, and
the current slot, and either returns the outgoing value or raises a
:class:`~d2dsec.errors.ProtocolReject` subclass. Protocol events for the
correspondence checks are appended to ``state.events``.

Key usage per scenario:

==========  =====================  ==========================  ==================
scenario    request MAC key        reply MAC key               session key K
==========  =====================  ==========================  ==================
DD2D/RD2D   K                      K                           issued by the MME
DD2DW/RD2DW source TESLA key       destination TESLA key       pre-shared
==========  =====================  ==========================  ==================

Relays MAC with their own TESLA interval key and reveal it on the reply path.
"""

from __future__ import annotations

import enum
import random
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from . import trace as ev
from .crypto import Crypto, KeyKind, SymKey
from .errors import (
    BadDisclosedKey,
    BadHashChain,
    BadRelayMac,
    BadReplyMac,
    BadSourceMac,
    DisclosureTooEarly,
    NoPendingRequest,
    NoSessionKey,
    NotInProximity,
    ReplayedId,
    StaleTimestamp,
    UnknownSubscriber,
)
from .tesla import (
    TeslaChain,
    TeslaCommitment,
    current_interval,
    disclosure_slot,
    key_for_interval,
    locate_disclosed_key,
)
from .wire import (
    Hop,
    RelayedReplyPacket,
    RelayedRequestPacket,
    ReplyPacket,
    RequestPacket,
    encode,
    reply_base,
    reply_hops,
    reply_keys,
    reply_mac_input,
    request_base,
    request_hops,
    request_mac_input,
)

NodeId = int
TIME_TAG_MOD = 16
DEFAULT_WINDOW = 2
REPLAY_CACHE_CAPACITY = 1024
PENDING_CAPACITY = 64
ZERO = bytes(32)

AnyRequest = Union[RequestPacket, RelayedRequestPacket]
AnyReply = Union[ReplyPacket, RelayedReplyPacket]


class Scenario(enum.Enum):
    DD2D = "DD2D"
    RD2D = "RD2D"
    DD2DW = "DD2DW"
    RD2DW = "RD2DW"

    @property
    def relayed(self) -> bool:
        return self in (Scenario.RD2D, Scenario.RD2DW)

    @property
    def infrastructure(self) -> bool:
        return self in (Scenario.DD2D, Scenario.RD2D)


class SourcePhase(enum.Enum):
    IDLE = "idle"
    AWAITING_KEY = "awaiting_key"
    SENT_REQUEST = "sent_request"
    GOT_REPLY = "got_reply"
    FAILED = "failed"


class DestinationPhase(enum.Enum):
    IDLE = "idle"
    AWAITING_KEY = "awaiting_key"
    REPLIED = "replied"
    FAILED = "failed"


# -- freshness and replay ---------------------------------------------------


def tag_age(tag: int, now: int) -> int:
    """Age in slots of a 4-bit time tag, unwrapped against ``now``."""
    return (now - tag) % TIME_TAG_MOD


def check_fresh(tag: int, now: int, window: int, hops: int = 0) -> None:
    """Reject tags older than ``window`` plus one slot per relay hop carried.

    Every hop costs one slot of propagation, so a packet that crossed ``h``
    relays is at least ``h + 1`` slots old on arrival.
    """
    age = tag_age(tag, now)
    if age > window + hops:
        raise StaleTimestamp(f"time tag {tag} is {age} slots old at slot {now}", age=age)


class ReplayCache:
    """FIFO-bounded set of (source, packet id) pairs."""

    def __init__(self, capacity: int = REPLAY_CACHE_CAPACITY, enabled: bool = True):
        self.capacity = capacity
        self.enabled = enabled
        self._seen: OrderedDict = OrderedDict()

    def __contains__(self, key) -> bool:
        return key in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def check(self, key) -> None:
        if self.enabled and key in self._seen:
            raise ReplayedId(f"packet id {key} already seen", key=key)

    def add(self, key) -> None:
        self._seen[key] = None
        self._seen.move_to_end(key)
        while len(self._seen) > self.capacity:
            self._seen.popitem(last=False)


def _emit(st, kind: str, key: bytes, now: int, subject=None) -> None:
    st.events.append(ev.ProtocolEvent(kind, key, now, subject))


def _emit_running_once(st, kind: str, key: bytes, now: int, subject=None) -> None:
    marker = (kind, key, subject)
    if marker not in st.running:
        st.running.add(marker)
        _emit(st, kind, key, now, subject)


# -- route record helpers ---------------------------------------------------


def fold_chain(crypto: Crypto, h0: bytes, relay_ids: Sequence[int], tag: str) -> bytes:
    h = h0
    for relay in relay_ids:
        h = crypto.hash(h + bytes([relay]), tag=tag)
    return h


def first_bad_relay_mac(
    crypto: Crypto, request: RequestPacket, hops: Sequence[Hop], keys: Sequence[bytes], tag: str
) -> Optional[int]:
    """Index of the first hop whose MAC does not verify, or None.

    ``request`` must carry the source's h0. ``keys[j]`` is the TESLA key of
    ``hops[j]``. Each relay MACed the packet exactly as it received it, so the
    prefix packets are rebuilt hop by hop.
    """
    h = request.h
    prior: AnyRequest = request
    for j, hop in enumerate(hops):
        h_next = crypto.hash(h + bytes([hop.relay]), tag=f"{tag}_chain")
        key = SymKey(keys[j], KeyKind.TESLA)
        expected = crypto.mac(key, encode(prior) + bytes([hop.relay]) + h_next, tag=f"{tag}_mac")
        if expected != hop.mac:
            return j
        prior = RelayedRequestPacket(replace(request, h=h_next), tuple(hops[: j + 1]))
        h = h_next
    return None


# -- MME --------------------------------------------------------------------


@dataclass
class MmeState:
    subscribers: dict[NodeId, bool]
    proximity: set
    rng: random.Random
    pending_requests: dict = field(default_factory=dict)
    split_keys: bool = False
    leak: Optional[list] = None
    events: list = field(default_factory=list)
    running: set = field(default_factory=set)

    def in_proximity(self, a: NodeId, b: NodeId) -> bool:
        return frozenset((a, b)) in self.proximity


def _require_subscribers(mme: MmeState, *ids: NodeId) -> None:
    for node in ids:
        if not mme.subscribers.get(node, False):
            raise UnknownSubscriber(f"node {node} is not an authenticated subscriber", node=node)


def mme_handle_source_request(mme: MmeState, src: NodeId, dst: NodeId, now: int = 0) -> SymKey:
    _require_subscribers(mme, src, dst)
    if not mme.in_proximity(src, dst):
        raise NotInProximity(f"node {dst} is not in proximity of {src}")
    key = SymKey(mme.rng.randbytes(32), KeyKind.SESSION)
    mme.pending_requests[(src, dst)] = key
    if mme.leak is not None:
        mme.leak.append(key)
    _emit_running_once(mme, ev.MME_RUNNING, key.bytes, now)
    return key


def mme_handle_destination_request(mme: MmeState, dst: NodeId, src: NodeId, now: int = 0) -> SymKey:
    _require_subscribers(mme, dst, src)
    key = mme.pending_requests.pop((src, dst), None)
    if key is None:
        raise NoPendingRequest(f"no D2D request from {src} to {dst}")
    if mme.split_keys:
        key = SymKey(mme.rng.randbytes(32), KeyKind.SESSION)
    _emit(mme, ev.MME_COMMIT, key.bytes, now)
    _emit(mme, ev.REACHABLE, b"", now, "mme")
    return key


# -- Source -----------------------------------------------------------------


@dataclass
class SourceState:
    self_id: NodeId
    dst: NodeId
    scenario: Scenario
    crypto: Crypto
    rng: random.Random
    session_key: Optional[SymKey] = None
    chain: Optional[TeslaChain] = None
    commitments: dict = field(default_factory=dict)
    window: int = DEFAULT_WINDOW
    replay_protection: bool = True
    nonce: int = 0
    pkt_id: int = 0
    phase: SourcePhase = SourcePhase.IDLE
    sent: Optional[RequestPacket] = None
    sent_slot: int = 0
    mac_interval: Optional[int] = None
    accepted: int = 0
    events: list = field(default_factory=list)
    running: set = field(default_factory=set)


def source_build_request(st: SourceState, message: bytes, now: int) -> RequestPacket:
    key = st.session_key
    if key is None:
        raise NoSessionKey("source has no session key")
    if not st.scenario.infrastructure and st.chain is None:
        raise NoSessionKey("source has no TESLA chain to MAC with")

    st.pkt_id = st.rng.randrange(16) if st.sent is None else (st.pkt_id + 1) % 16
    st.nonce = st.rng.randrange(16)
    _emit_running_once(st, ev.SOURCE_RUNNING, key.bytes, now)

    derived = st.crypto.derive_session_key(key, st.nonce, tag="request.kdf")
    c = st.crypto.encrypt(derived, message, tag="request.encrypt")
    unsigned = RequestPacket(st.self_id, st.dst, st.nonce, st.pkt_id, now % TIME_TAG_MOD, c, ZERO)

    if st.scenario.infrastructure:
        mac_key = key
    else:
        st.mac_interval = current_interval(st.chain, now)
        mac_key = key_for_interval(st.chain, st.mac_interval)
    h0 = st.crypto.mac(mac_key, request_mac_input(unsigned), tag="request.mac")

    st.sent = replace(unsigned, h=h0)
    st.sent_slot = now
    st.phase = SourcePhase.SENT_REQUEST
    return st.sent


def relay_hold_slack(st: SourceState, hops: Sequence[Hop]) -> int:
    """Longest a relay on the path may hold the reply before its key is disclosable."""
    lags = [
        (c.delay + 1) * c.interval_len for c in (st.commitments.get(hop.relay) for hop in hops) if c is not None
    ]
    return max(lags, default=0)


def source_precheck_reply(st: SourceState, pkt: AnyReply, now: int) -> None:
    """Checks that need no keys: addressing, replay and freshness.

    Relays hold the reply until their TESLA key may be released, so the
    freshness allowance grows by the longest such hold.
    """
    rb, hops = reply_base(pkt), reply_hops(pkt)
    if st.sent is None or rb.src != st.self_id or rb.dst != st.dst or rb.pkt_id != st.sent.pkt_id:
        raise NoPendingRequest("reply does not match an outstanding request")
    if st.accepted and st.replay_protection:
        raise ReplayedId("reply already accepted", key=(rb.dst, rb.pkt_id))
    check_fresh(rb.t, now, st.window + relay_hold_slack(st, hops), len(hops))


def source_verify_reply(
    st: SourceState,
    pkt: AnyReply,
    now: int,
    destination_key: Optional[SymKey] = None,
    received_at: Optional[int] = None,
) -> bytes:
    """Accept a reply; returns the session key it confirms.

    ``destination_key`` is the destination's disclosed TESLA key, required
    in the infrastructure-less scenarios. A reply buffered until that key
    arrives is judged fresh or stale at ``received_at``.
    """
    source_precheck_reply(st, pkt, now if received_at is None else received_at)
    rb, hops, keys = reply_base(pkt), reply_hops(pkt), reply_keys(pkt)

    if st.scenario.infrastructure:
        reply_key = st.session_key
    else:
        if destination_key is None:
            raise NoSessionKey("destination TESLA key not yet disclosed")
        reply_key = destination_key
    if st.crypto.mac(reply_key, reply_mac_input(rb, hops), tag="source.reply_check") != rb.reply_mac:
        raise BadReplyMac("reply MAC mismatch")

    # keys arrive in reverse path order
    if len(keys) < len(hops):
        raise BadDisclosedKey(hops[len(hops) - len(keys) - 1].relay, "relay key missing from reply")
    path_keys = list(reversed(keys))
    for hop, key in zip(hops, path_keys):
        commitment = st.commitments.get(hop.relay)
        if commitment is None:
            raise BadDisclosedKey(hop.relay, f"no TESLA commitment for node {hop.relay}")
        i = locate_disclosed_key(st.crypto, commitment, key, tag="tesla.verify")
        if i is None or disclosure_slot(commitment, i) > now:
            raise BadDisclosedKey(hop.relay)

    bad = first_bad_relay_mac(st.crypto, st.sent, hops, path_keys, tag="source.audit")
    if bad is not None:
        raise BadRelayMac(bad)

    st.accepted += 1
    st.phase = SourcePhase.GOT_REPLY
    session = st.session_key.bytes
    for hop, key in zip(hops, path_keys):
        _emit(st, ev.ACCEPTS_SERVER_CLIENT, key, now, hop.relay)
    _emit(st, ev.ACCEPTS_SERVER_DESTINATION, session, now)
    _emit(st, ev.SOURCE_COMMIT, session, now)
    _emit(st, ev.REACHABLE, b"", now, "source")
    return session


# -- Relay ------------------------------------------------------------------


@dataclass
class RelayState:
    self_id: NodeId
    chain: TeslaChain
    crypto: Crypto
    window: int = DEFAULT_WINDOW
    replay_protection: bool = True
    seen_ids: ReplayCache = field(default_factory=ReplayCache)
    forwarded: dict = field(default_factory=dict)
    replied: set = field(default_factory=set)
    events: list = field(default_factory=list)
    running: set = field(default_factory=set)

    def __post_init__(self):
        self.seen_ids.enabled = self.replay_protection


def relay_process_request(st: RelayState, pkt: AnyRequest, now: int) -> RelayedRequestPacket:
    base, hops = request_base(pkt), request_hops(pkt)
    key = (base.src, base.pkt_id)
    st.seen_ids.check(key)
    check_fresh(base.t, now, st.window, len(hops))
    st.seen_ids.add(key)

    h_next = st.crypto.hash(base.h + bytes([st.self_id]), tag="relay.chain")
    interval = current_interval(st.chain, now)
    tesla_key = key_for_interval(st.chain, interval)
    mac = st.crypto.mac(tesla_key, encode(pkt) + bytes([st.self_id]) + h_next, tag="relay.mac")
    st.forwarded[key] = interval
    _emit(st, ev.CLIENT_RUNNING, tesla_key.bytes, now, st.self_id)
    return RelayedRequestPacket(replace(base, h=h_next), hops + (Hop(st.self_id, mac),))


def relay_process_reply(
    st: RelayState, pkt: AnyReply, now: int, interval: Optional[int] = None
) -> AnyReply:
    """Append this relay's TESLA key for the session and pass the reply on.

    A relay that forwarded the request but is missing from the echoed route
    passes the reply through untouched; the source then finds the key count
    short and rejects.
    """
    rb = reply_base(pkt)
    key = (rb.src, rb.pkt_id)
    if interval is None:
        interval = st.forwarded.get(key)
        if interval is None:
            raise NoPendingRequest(f"relay {st.self_id} never forwarded {key}")
    if st.replay_protection and key in st.replied:
        raise ReplayedId(f"reply {key} already forwarded", key=key)

    hops = reply_hops(pkt)
    if st.self_id not in {hop.relay for hop in hops}:
        st.replied.add(key)
        return pkt

    # keys are appended from the destination end, one per relay already passed
    position = [hop.relay for hop in hops].index(st.self_id)
    expected = len(hops) - position - 1
    if len(reply_keys(pkt)) > expected:
        raise ReplayedId(f"reply {key} already carries key of relay {st.self_id}", key=key)
    if len(reply_keys(pkt)) < expected:
        raise BadDisclosedKey(st.self_id, f"reply reached relay {st.self_id} with keys out of place")

    due = disclosure_slot(st.chain, interval)
    if now < due:
        raise DisclosureTooEarly(f"key {interval} of node {st.self_id} not disclosable before slot {due}")
    st.replied.add(key)
    _emit(st, ev.REACHABLE, b"", now, "relay")
    appended = reply_keys(pkt) + (key_for_interval(st.chain, interval).bytes,)
    return RelayedReplyPacket(rb, hops, appended)


# -- Destination ------------------------------------------------------------


@dataclass
class PendingRequest:
    packet: AnyRequest
    received_slot: int
    send_slot: int
    plaintext: Optional[bytes] = None
    interval: Optional[int] = None

    @property
    def key(self):
        base = request_base(self.packet)
        return (base.src, base.pkt_id)


@dataclass
class DestinationState:
    self_id: NodeId
    scenario: Scenario
    crypto: Crypto
    window: int = DEFAULT_WINDOW
    replay_protection: bool = True
    session_keys: dict = field(default_factory=dict)
    chain: Optional[TeslaChain] = None
    commitments: dict = field(default_factory=dict)
    seen_ids: ReplayCache = field(default_factory=ReplayCache)
    pending: OrderedDict = field(default_factory=OrderedDict)
    pending_capacity: int = PENDING_CAPACITY
    delivered: list = field(default_factory=list)
    reply_intervals: dict = field(default_factory=dict)
    phase: DestinationPhase = DestinationPhase.IDLE
    events: list = field(default_factory=list)
    running: set = field(default_factory=set)

    def __post_init__(self):
        self.seen_ids.enabled = self.replay_protection


def destination_receive(st: DestinationState, pkt: AnyRequest, now: int) -> PendingRequest:
    """Replay, freshness and route-structure checks on arrival.

    In the infrastructure-less scenarios the message is decrypted straight
    away with the pre-shared key, but the plaintext is held back until the
    source's TESLA key arrives and the MAC checks out.
    """
    base, hops = request_base(pkt), request_hops(pkt)
    key = (base.src, base.pkt_id)
    st.seen_ids.check(key)
    check_fresh(base.t, now, st.window, len(hops))
    ids = [hop.relay for hop in hops]
    if len(set(ids)) != len(ids) or base.src in ids or base.dst in ids:
        raise BadHashChain("route record repeats a node")
    st.seen_ids.add(key)

    entry = PendingRequest(pkt, now, now - tag_age(base.t, now))
    st.pending[key] = entry
    st.pending.move_to_end(key)
    while len(st.pending) > st.pending_capacity:
        st.pending.popitem(last=False)

    if not st.scenario.infrastructure:
        session = st.session_keys.get(base.src)
        if session is None:
            raise NoSessionKey(f"no pre-shared key with node {base.src}")
        entry.plaintext = _decrypt_request(st, session, base, now)
    st.phase = DestinationPhase.AWAITING_KEY
    return entry


def _decrypt_request(st: DestinationState, session: SymKey, base: RequestPacket, now: int) -> bytes:
    _emit_running_once(st, ev.DESTINATION_RUNNING, session.bytes, now)
    derived = st.crypto.derive_session_key(session, base.nonce, tag="dest.kdf")
    return st.crypto.decrypt(derived, base.ciphertext, tag="dest.decrypt")


def destination_validate_and_reply(
    st: DestinationState,
    pkt: Union[AnyRequest, PendingRequest],
    session_key: Optional[SymKey],
    now: int,
    source_key: Optional[SymKey] = None,
    relay_keys: Sequence[bytes] = (),
) -> AnyReply:
    """Verify a received request and build the reply.

    ``session_key`` is K from the MME (or the pre-shared key). In the
    infrastructure-less scenarios ``source_key`` is the source's disclosed
    TESLA key that authenticates h0. ``relay_keys``, when given, are checked
    against the relay MACs in path order.
    """
    entry = pkt if isinstance(pkt, PendingRequest) else destination_receive(st, pkt, now)
    base, hops = request_base(entry.packet), request_hops(entry.packet)
    if session_key is None:
        session_key = st.session_keys.get(base.src)
    if session_key is None:
        raise NoSessionKey(f"no session key for node {base.src}")
    st.session_keys[base.src] = session_key

    if st.scenario.infrastructure:
        mac_key = session_key
        _emit_running_once(st, ev.DESTINATION_RUNNING, session_key.bytes, now)
    else:
        if source_key is None:
            raise NoSessionKey("source TESLA key not yet disclosed")
        mac_key = source_key

    st.pending.pop(entry.key, None)
    h0 = st.crypto.mac(mac_key, request_mac_input(base), tag="dest.mac_check")
    if fold_chain(st.crypto, h0, [hop.relay for hop in hops], tag="dest.chain") != base.h:
        st.phase = DestinationPhase.FAILED
        raise (BadHashChain if hops else BadSourceMac)("request chain value mismatch")
    if relay_keys:
        bad = first_bad_relay_mac(st.crypto, replace(base, h=h0), hops, relay_keys, tag="dest.audit")
        if bad is not None:
            st.phase = DestinationPhase.FAILED
            raise BadRelayMac(bad)

    plaintext = entry.plaintext
    if plaintext is None:
        plaintext = _decrypt_request(st, session_key, base, now)
    st.delivered.append((base.src, base.pkt_id, plaintext))
    _emit(st, ev.DESTINATION_COMMIT, session_key.bytes, now)
    _emit(st, ev.TERM_DESTINATION, session_key.bytes, now)
    _emit(st, ev.REACHABLE, b"", now, "destination")

    unsigned = ReplyPacket(st.self_id, base.src, now % TIME_TAG_MOD, base.pkt_id, ZERO)
    if st.scenario.infrastructure:
        reply_key = session_key
    else:
        interval = current_interval(st.chain, now)
        st.reply_intervals[entry.key] = interval
        reply_key = key_for_interval(st.chain, interval)
    mac = st.crypto.mac(reply_key, reply_mac_input(unsigned, hops), tag="reply.mac")
    st.phase = DestinationPhase.REPLIED
    signed = replace(unsigned, reply_mac=mac)
    return RelayedReplyPacket(signed, hops) if hops else signed


def commitment_map(chains: Sequence[TeslaChain]) -> dict[NodeId, TeslaCommitment]:
    return {c.owner: c.commitment() for c in chains}
