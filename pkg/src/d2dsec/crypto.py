"""Symmetric primitives behind an instrumented facade.

All primitives are built on SHA-256:

* ``hash(x)``            = SHA256(x)
* ``mac(k, x)``          = SHA256(k || x)                 (prefix-key MAC)
* ``encrypt(k, m)``      = pad32(m) XOR SHA256(k || "enc")
* ``derive_session_key`` = SHA256(K || N), N encoded as one byte

Encryption is a single deterministic 256-bit block. Plaintexts shorter than
32 bytes are zero-padded, so ``decrypt`` always returns the full block. None
of this is meant to be production cryptography; only the 256-bit output size
matters for the packet and cost accounting.

Every call is tallied in an :class:`OpCounters` owned by the :class:`Crypto`
instance. MAC evaluations count as ``hash`` and key derivation counts as
``enc``. Callers may attach a ``tag`` (for example ``"relay.mac"``) so the
cost reconciler can scope which operations it compares.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
from collections import Counter
from dataclasses import dataclass, field

from .errors import MalformedCiphertext, OversizedPlaintext

BLOCK = 32
NONCE_SPACE = 16

Digest = bytes
MacTag = bytes
Nonce = int

_ENC_DOMAIN = b"d2dsec/enc"


class KeyKind(enum.Enum):
    SESSION = "K"
    DERIVED = "K'"
    TESLA = "K_t"
    PRESHARED = "K_pre"


@dataclass(frozen=True)
class SymKey:
    bytes: bytes
    kind: KeyKind = KeyKind.SESSION

    def __post_init__(self):
        if len(self.bytes) != BLOCK:
            raise ValueError(f"key must be {BLOCK} bytes, got {len(self.bytes)}")

    def hex(self) -> str:
        return self.bytes.hex()


@dataclass
class OpCounters:
    enc: int = 0
    dec: int = 0
    hash: int = 0
    tagged: Counter = field(default_factory=Counter)

    def record(self, category: str, tag: str) -> None:
        setattr(self, category, getattr(self, category) + 1)
        self.tagged[(category, tag)] += 1

    def reset(self) -> None:
        self.enc = self.dec = self.hash = 0
        self.tagged.clear()

    def as_dict(self) -> dict[str, int]:
        return {"Enc": self.enc, "Dec": self.dec, "H": self.hash}

    def scoped(self, exclude_prefixes: tuple[str, ...] = ()) -> dict[str, int]:
        """Totals per category, skipping tags that start with any excluded prefix."""
        out = {"Enc": 0, "Dec": 0, "H": 0}
        names = {"enc": "Enc", "dec": "Dec", "hash": "H"}
        for (category, tag), count in self.tagged.items():
            if any(tag.startswith(p) for p in exclude_prefixes):
                continue
            out[names[category]] += count
        return out


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Crypto:
    """Counting facade over the primitives. One instance per simulation run."""

    def __init__(self, counters: OpCounters | None = None):
        self.counters = counters if counters is not None else OpCounters()

    def hash(self, data: bytes, tag: str = "") -> Digest:
        self.counters.record("hash", tag)
        return _sha256(data)

    def mac(self, key: SymKey, data: bytes, tag: str = "") -> MacTag:
        self.counters.record("hash", tag)
        return _sha256(key.bytes + data)

    def encrypt(self, key: SymKey, plaintext: bytes, tag: str = "") -> bytes:
        if len(plaintext) > BLOCK:
            raise OversizedPlaintext(f"plaintext is {len(plaintext)} bytes, limit {BLOCK}")
        self.counters.record("enc", tag)
        return _xor(plaintext.ljust(BLOCK, b"\0"), _keystream(key))

    def decrypt(self, key: SymKey, ciphertext: bytes, tag: str = "") -> bytes:
        if len(ciphertext) != BLOCK:
            raise MalformedCiphertext(f"ciphertext is {len(ciphertext)} bytes, need {BLOCK}")
        self.counters.record("dec", tag)
        return _xor(ciphertext, _keystream(key))

    def derive_session_key(self, k: SymKey, n: Nonce, tag: str = "") -> SymKey:
        if k.kind not in (KeyKind.SESSION, KeyKind.PRESHARED):
            raise ValueError(f"cannot derive from a {k.kind.name} key")
        if not 0 <= n < NONCE_SPACE:
            raise ValueError(f"nonce {n} outside 4-bit range")
        self.counters.record("enc", tag)
        return SymKey(_sha256(k.bytes + bytes([n])), KeyKind.DERIVED)


def _keystream(key: SymKey) -> bytes:
    return _sha256(key.bytes + _ENC_DOMAIN)


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def constant_time_eq(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)
