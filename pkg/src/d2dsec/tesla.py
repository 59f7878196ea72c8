"""One-way TESLA key chains.

A chain of length ``L`` holds keys ``keys[0..L]`` with ``keys[L]`` the seed
and ``keys[i] = H(keys[i+1])``. ``keys[0]`` is the public commitment and is
never used as a MAC key. Key ``i`` authenticates traffic sent during interval
``i`` and may be released from ``disclosure_slot(i)`` on.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import Crypto, KeyKind, SymKey
from .errors import ChainExhausted, IntervalOutOfRange, InvalidLength

DEFAULT_DELAY = 1

NodeId = int


@dataclass(frozen=True)
class TeslaCommitment:
    owner: NodeId
    key0: SymKey
    start_slot: int
    interval_len: int
    length: int
    delay: int = DEFAULT_DELAY


@dataclass(frozen=True)
class TeslaChain:
    owner: NodeId
    keys: tuple[SymKey, ...]
    interval_len: int
    start_slot: int
    delay: int = DEFAULT_DELAY

    @property
    def length(self) -> int:
        return len(self.keys) - 1

    def commitment(self) -> TeslaCommitment:
        return TeslaCommitment(
            owner=self.owner,
            key0=self.keys[0],
            start_slot=self.start_slot,
            interval_len=self.interval_len,
            length=self.length,
            delay=self.delay,
        )


def generate_chain(
    crypto: Crypto,
    owner: NodeId,
    seed: bytes,
    length: int,
    interval_len: int = 1,
    start_slot: int = 0,
    delay: int = DEFAULT_DELAY,
) -> TeslaChain:
    if length < 1:
        raise InvalidLength(f"chain length must be >= 1, got {length}")
    if interval_len < 1:
        raise InvalidLength(f"interval length must be >= 1, got {interval_len}")
    keys = [SymKey(seed, KeyKind.TESLA)]
    for _ in range(length):
        keys.append(SymKey(crypto.hash(keys[-1].bytes, tag="tesla.setup"), KeyKind.TESLA))
    keys.reverse()
    return TeslaChain(owner, tuple(keys), interval_len, start_slot, delay)


def key_for_interval(chain: TeslaChain, i: int) -> SymKey:
    if not 1 <= i <= chain.length:
        raise IntervalOutOfRange(f"interval {i} outside 1..{chain.length}")
    return chain.keys[i]


def verify_disclosed_key(
    crypto: Crypto, commitment: TeslaCommitment, disclosed: SymKey | bytes, i: int, tag: str = "tesla.verify"
) -> bool:
    """True iff hashing ``disclosed`` exactly ``i`` times yields the commitment."""
    if i < 1:
        return False
    value = disclosed.bytes if isinstance(disclosed, SymKey) else disclosed
    for _ in range(i):
        value = crypto.hash(value, tag=tag)
    return value == commitment.key0.bytes


def locate_disclosed_key(
    crypto: Crypto, commitment: TeslaCommitment, disclosed: bytes, tag: str = "tesla.verify"
) -> int | None:
    """Interval index of ``disclosed`` in the committed chain, or None.

    Folds at most ``commitment.length`` times; used when the wire carries a
    key without its interval number.
    """
    value = disclosed
    for i in range(1, commitment.length + 1):
        value = crypto.hash(value, tag=tag)
        if value == commitment.key0.bytes:
            return i
    return None


def disclosure_slot(commitment: TeslaCommitment | TeslaChain, i: int) -> int:
    if i < 1:
        raise IntervalOutOfRange(f"interval {i} has no disclosure slot")
    return commitment.start_slot + (i + commitment.delay) * commitment.interval_len


def current_interval(commitment: TeslaCommitment | TeslaChain, now: int) -> int:
    if now < commitment.start_slot:
        raise IntervalOutOfRange(f"slot {now} precedes chain start {commitment.start_slot}")
    i = max(1, (now - commitment.start_slot) // commitment.interval_len)
    if i > commitment.length:
        raise ChainExhausted(f"interval {i} beyond chain length {commitment.length}")
    return i
