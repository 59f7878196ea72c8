"""Bit-exact packet layouts and the analytical packet-size model.

Field widths: 4 bits for message type, nonce, packet id and time tag; 8 bits
for node identities; 256 bits for ciphertexts, MACs, chain values and keys.
Fields are packed big-endian, most significant bit first, and the whole
packet is zero-padded to a byte boundary.

Layouts (bits)::

    request        type:4 src:8 dst:8 nonce:4 id:4 t:4 c:256 h:256         = 544
    + per hop      relay:8 mac:256                                          + 264
    reply          type:4 dst:8 src:8 t:4 id:4 mac:256                      = 284
    + echoed hop   relay:8 mac:256                                          + 264
    + relay key    key:256                                                  + 256
    disclosure     type:4 owner:8 interval:12 key:256                       = 280

Hop and key counts are not carried; they are recovered from the byte length,
which is unambiguous while a reply carries at most 31 hops and no more keys
than hops.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Union

from .errors import FieldOverflow, MalformedPacket, TruncatedPacket

MSG_REQUEST = 0x1
MSG_REPLY = 0x2
MSG_DISCLOSURE = 0x3

FIELD_BITS = 256
ID_BITS = 8
SMALL_BITS = 4
MAX_HOPS = 31

REQUEST_BITS = 4 + 8 + 8 + 4 + 4 + 4 + 256 + 256
REPLY_BITS = 4 + 8 + 8 + 4 + 4 + 256
DISCLOSURE_BITS = 4 + 8 + 12 + 256
HOP_BITS = ID_BITS + FIELD_BITS


@dataclass(frozen=True)
class Hop:
    relay: int
    mac: bytes


@dataclass(frozen=True)
class RequestPacket:
    """Source request. ``h`` is the running hash-chain value: the source MAC
    h0 when sent, replaced by h_i = H(h_{i-1} || relay id) at every relay."""

    src: int
    dst: int
    nonce: int
    pkt_id: int
    t: int
    ciphertext: bytes
    h: bytes
    msg_type: int = MSG_REQUEST


@dataclass(frozen=True)
class RelayedRequestPacket:
    base: RequestPacket
    hops: tuple[Hop, ...]

    def __post_init__(self):
        if not self.hops:
            raise ValueError("a relayed request carries at least one hop")


@dataclass(frozen=True)
class ReplyPacket:
    dst: int
    src: int
    t: int
    pkt_id: int
    reply_mac: bytes
    msg_type: int = MSG_REPLY


@dataclass(frozen=True)
class RelayedReplyPacket:
    """Reply on a relayed path.

    ``hops`` echoes the request's route record (relay ids and their MACs) so
    the source can check each relay MAC once the keys arrive; relays append
    to ``disclosed_keys`` in reverse path order.
    """

    base: ReplyPacket
    hops: tuple[Hop, ...]
    disclosed_keys: tuple[bytes, ...] = ()

    def __post_init__(self):
        if not self.hops:
            raise ValueError("a relayed reply echoes at least one hop")


@dataclass(frozen=True)
class KeyDisclosure:
    owner: int
    interval: int
    key: bytes
    msg_type: int = MSG_DISCLOSURE


Packet = Union[RequestPacket, RelayedRequestPacket, ReplyPacket, RelayedReplyPacket, KeyDisclosure]


class _Writer:
    def __init__(self):
        self.value = 0
        self.bits = 0

    def put(self, value: int | bytes, width: int, name: str) -> None:
        if isinstance(value, (bytes, bytearray)):
            if len(value) * 8 != width:
                raise FieldOverflow(f"{name}: expected {width // 8} bytes, got {len(value)}")
            value = int.from_bytes(value, "big")
        elif not 0 <= value < (1 << width):
            raise FieldOverflow(f"{name}={value} does not fit in {width} bits")
        self.value = (self.value << width) | value
        self.bits += width

    def finish(self) -> bytes:
        pad = -self.bits % 8
        return (self.value << pad).to_bytes((self.bits + pad) // 8, "big")


class _Reader:
    def __init__(self, data: bytes):
        self.value = int.from_bytes(data, "big")
        self.remaining = len(data) * 8

    def take(self, width: int) -> int:
        if width > self.remaining:
            raise TruncatedPacket("packet ends inside a field")
        self.remaining -= width
        return (self.value >> self.remaining) & ((1 << width) - 1)

    def take_bytes(self, width: int) -> bytes:
        return self.take(width).to_bytes(width // 8, "big")

    def finish(self) -> None:
        if self.remaining >= 8:
            raise MalformedPacket(f"{self.remaining} trailing bits")
        if self.value & ((1 << self.remaining) - 1):
            raise MalformedPacket("non-zero padding")


def _put_request_header(w: _Writer, p: RequestPacket) -> None:
    w.put(p.msg_type, 4, "msg_type")
    w.put(p.src, 8, "src")
    w.put(p.dst, 8, "dst")
    w.put(p.nonce, 4, "nonce")
    w.put(p.pkt_id, 4, "pkt_id")
    w.put(p.t, 4, "t")


def _put_reply_header(w: _Writer, p: ReplyPacket) -> None:
    w.put(p.msg_type, 4, "msg_type")
    w.put(p.dst, 8, "dst")
    w.put(p.src, 8, "src")
    w.put(p.t, 4, "t")
    w.put(p.pkt_id, 4, "pkt_id")


def _put_hops(w: _Writer, hops: Iterable[Hop]) -> None:
    for hop in hops:
        w.put(hop.relay, 8, "relay")
        w.put(hop.mac, FIELD_BITS, "relay mac")


def request_mac_input(p: RequestPacket) -> bytes:
    """Bytes covered by the source MAC: every request field except h."""
    w = _Writer()
    _put_request_header(w, p)
    w.put(p.ciphertext, FIELD_BITS, "ciphertext")
    return w.finish()


def reply_mac_input(p: ReplyPacket, hops: Iterable[Hop] = ()) -> bytes:
    """Bytes covered by the reply MAC: header fields plus any echoed route."""
    w = _Writer()
    _put_reply_header(w, p)
    _put_hops(w, hops)
    return w.finish()


def encode(packet: Packet) -> bytes:
    w = _Writer()
    if isinstance(packet, (RequestPacket, RelayedRequestPacket)):
        base, hops = request_base(packet), request_hops(packet)
        if base.msg_type != MSG_REQUEST:
            raise FieldOverflow(f"request carries msg_type {base.msg_type}")
        if len(hops) > MAX_HOPS:
            raise FieldOverflow(f"{len(hops)} hops exceeds {MAX_HOPS}")
        _put_request_header(w, base)
        w.put(base.ciphertext, FIELD_BITS, "ciphertext")
        w.put(base.h, FIELD_BITS, "h")
        _put_hops(w, hops)
    elif isinstance(packet, (ReplyPacket, RelayedReplyPacket)):
        base, hops = reply_base(packet), reply_hops(packet)
        keys = reply_keys(packet)
        if base.msg_type != MSG_REPLY:
            raise FieldOverflow(f"reply carries msg_type {base.msg_type}")
        if len(hops) > MAX_HOPS:
            raise FieldOverflow(f"{len(hops)} hops exceeds {MAX_HOPS}")
        if len(keys) > len(hops):
            raise FieldOverflow("more disclosed keys than relays")
        _put_reply_header(w, base)
        w.put(base.reply_mac, FIELD_BITS, "reply_mac")
        _put_hops(w, hops)
        for key in keys:
            w.put(key, FIELD_BITS, "disclosed key")
    elif isinstance(packet, KeyDisclosure):
        w.put(packet.msg_type, 4, "msg_type")
        w.put(packet.owner, 8, "owner")
        w.put(packet.interval, 12, "interval")
        w.put(packet.key, FIELD_BITS, "key")
    else:
        raise TypeError(f"cannot encode {type(packet).__name__}")
    return w.finish()


def bit_length(packet: Packet) -> int:
    """Unpadded size of ``packet`` in bits."""
    if isinstance(packet, RequestPacket):
        return REQUEST_BITS
    if isinstance(packet, RelayedRequestPacket):
        return REQUEST_BITS + HOP_BITS * len(packet.hops)
    if isinstance(packet, ReplyPacket):
        return REPLY_BITS
    if isinstance(packet, RelayedReplyPacket):
        return REPLY_BITS + HOP_BITS * len(packet.hops) + FIELD_BITS * len(packet.disclosed_keys)
    if isinstance(packet, KeyDisclosure):
        return DISCLOSURE_BITS
    raise TypeError(f"not a packet: {type(packet).__name__}")


def _read_hops(r: _Reader, count: int) -> tuple[Hop, ...]:
    return tuple(Hop(r.take(8), r.take_bytes(FIELD_BITS)) for _ in range(count))


def decode(data: bytes) -> Packet:
    if not data:
        raise TruncatedPacket("empty packet")
    msg_type = data[0] >> 4
    size = len(data)
    r = _Reader(data)

    if msg_type == MSG_REQUEST:
        base_bytes = REQUEST_BITS // 8
        if size < base_bytes or (size - base_bytes) % (HOP_BITS // 8):
            raise TruncatedPacket(f"{size} bytes is not a whole request")
        hop_count = (size - base_bytes) // (HOP_BITS // 8)
        r.take(4)
        src, dst, nonce, pkt_id, t = r.take(8), r.take(8), r.take(4), r.take(4), r.take(4)
        base = RequestPacket(src, dst, nonce, pkt_id, t, r.take_bytes(256), r.take_bytes(256))
        hops = _read_hops(r, hop_count)
        r.finish()
        return RelayedRequestPacket(base, hops) if hops else base

    if msg_type == MSG_REPLY:
        hop_count, key_count = _reply_shape(size)
        r.take(4)
        dst, src, t, pkt_id = r.take(8), r.take(8), r.take(4), r.take(4)
        base = ReplyPacket(dst, src, t, pkt_id, r.take_bytes(256))
        hops = _read_hops(r, hop_count)
        keys = tuple(r.take_bytes(256) for _ in range(key_count))
        r.finish()
        return RelayedReplyPacket(base, hops, keys) if hops else base

    if msg_type == MSG_DISCLOSURE:
        if size != DISCLOSURE_BITS // 8:
            raise TruncatedPacket(f"{size} bytes is not a key disclosure")
        r.take(4)
        packet = KeyDisclosure(r.take(8), r.take(12), r.take_bytes(256))
        r.finish()
        return packet

    raise MalformedPacket(f"unknown message type {msg_type:#x}")


def _reply_shape(size: int) -> tuple[int, int]:
    # size = 36 + 33*hops + 32*keys, with keys <= hops <= 31
    rest = size - (REPLY_BITS + 7) // 8
    if rest < 0:
        raise TruncatedPacket(f"{size} bytes is shorter than a reply")
    hops = rest % 32
    extra = rest - 33 * hops
    if extra < 0 or extra % 32:
        raise TruncatedPacket(f"{size} bytes is not a whole reply")
    keys = extra // 32
    if keys > hops:
        raise MalformedPacket(f"{keys} keys for {hops} hops")
    return hops, keys


def packet_kind(packet: Packet) -> str:
    if isinstance(packet, (RequestPacket, RelayedRequestPacket)):
        return "request"
    if isinstance(packet, (ReplyPacket, RelayedReplyPacket)):
        return "reply"
    return "disclosure"


def request_base(packet: RequestPacket | RelayedRequestPacket) -> RequestPacket:
    return packet.base if isinstance(packet, RelayedRequestPacket) else packet


def request_hops(packet: RequestPacket | RelayedRequestPacket) -> tuple[Hop, ...]:
    return packet.hops if isinstance(packet, RelayedRequestPacket) else ()


def reply_base(packet: ReplyPacket | RelayedReplyPacket) -> ReplyPacket:
    return packet.base if isinstance(packet, RelayedReplyPacket) else packet


def reply_hops(packet: ReplyPacket | RelayedReplyPacket) -> tuple[Hop, ...]:
    return packet.hops if isinstance(packet, RelayedReplyPacket) else ()


def reply_keys(packet: ReplyPacket | RelayedReplyPacket) -> tuple[bytes, ...]:
    return packet.disclosed_keys if isinstance(packet, RelayedReplyPacket) else ()


def to_hex_lines(packets: Iterable[Packet | bytes]) -> str:
    """Golden-file dump: one packet per line, lowercase hex, no separators."""
    lines = [(p if isinstance(p, bytes) else encode(p)).hex() for p in packets]
    return "".join(line + "\n" for line in lines)


def from_hex_lines(text: str) -> list[Packet]:
    return [decode(bytes.fromhex(line)) for line in text.splitlines() if line.strip()]


# -- analytical size model -------------------------------------------------


class SizeRole(enum.Enum):
    SOURCE_DIRECT = "source_direct"
    SOURCE_RELAYING = "source_relaying"
    DESTINATION_DIRECT = "destination_direct"
    DESTINATION_RELAYING = "destination_relaying"
    INTERMEDIATE_REQUEST = "intermediate_request"
    INTERMEDIATE_REPLY = "intermediate_reply"


@dataclass(frozen=True)
class SizeModel:
    ks: int = 256

    def size(self, role: SizeRole | str, n: int) -> int:
        return model_size(role, n, self.ks)


def model_size(role: SizeRole | str, n: int, ks: int = 256) -> int:
    """Packet size in bits for ``role`` with ``n`` nodes, as tabulated.

    These are the reference size formulas, including the direct reply constant of
    286 bits that the field widths above cannot reproduce (they give 284).
    """
    role = SizeRole(role)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if role in (SizeRole.SOURCE_DIRECT, SizeRole.SOURCE_RELAYING):
        return 544
    if role is SizeRole.DESTINATION_DIRECT:
        return 286
    if role is SizeRole.DESTINATION_RELAYING:
        return 28 + (n - 2) * 8 + (n - 1) * 256
    if role is SizeRole.INTERMEDIATE_REQUEST:
        return 28 + (n - 1) * 8 + n * 256
    return 12 + 8 * n + (n - 1) * 256 + (n - 2) * ks


@dataclass(frozen=True)
class SizeCheckRow:
    role: SizeRole
    n: int
    model_bits: int
    measured_bits: int

    @property
    def delta(self) -> int:
        return self.measured_bits - self.model_bits


def concrete_size_check(ns: Iterable[int] = (3, 5, 10, 20), seed: int = 0) -> list[SizeCheckRow]:
    """Largest packet each role actually sends in honest runs, against the model.

    Direct roles are measured on a two-node infrastructure run; relayed
    roles on a line of ``n`` nodes for each ``n`` in ``ns``.
    """
    from .netsim import ScenarioConfig, simulate
    from .roles import Scenario

    def largest(scenario: Scenario, n: int) -> dict[SizeRole, int]:
        result = simulate(ScenarioConfig(scenario, n, seed=seed))
        sizes: dict[SizeRole, int] = {}
        for event in result.trace.of_kind("send"):
            if event.node is None or not event.payload:
                continue
            packet = decode(event.payload)
            kind = packet_kind(packet)
            if event.node == 1 and kind == "request":
                role = SizeRole.SOURCE_RELAYING if scenario.relayed else SizeRole.SOURCE_DIRECT
            elif event.node == n and kind == "reply":
                role = SizeRole.DESTINATION_RELAYING if scenario.relayed else SizeRole.DESTINATION_DIRECT
            elif 1 < event.node < n and kind == "request":
                role = SizeRole.INTERMEDIATE_REQUEST
            elif 1 < event.node < n and kind == "reply":
                role = SizeRole.INTERMEDIATE_REPLY
            else:
                continue
            sizes[role] = max(sizes.get(role, 0), bit_length(packet))
        return sizes

    rows = []
    for role, bits in sorted(largest(Scenario.DD2D, 2).items(), key=lambda kv: kv[0].value):
        rows.append(SizeCheckRow(role, 2, model_size(role, 2), bits))
    for n in ns:
        if n < 3:
            continue
        for role, bits in sorted(largest(Scenario.RD2D, n).items(), key=lambda kv: kv[0].value):
            rows.append(SizeCheckRow(role, n, model_size(role, n), bits))
    return rows
