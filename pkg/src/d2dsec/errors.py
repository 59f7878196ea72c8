"""Exception hierarchy shared by all protocol layers."""

from __future__ import annotations


class D2DError(Exception):
    """Base class for every error raised by this package."""


# crypto
class OversizedPlaintext(D2DError):
    pass


class MalformedCiphertext(D2DError):
    pass


# tesla
class InvalidLength(D2DError):
    pass


class IntervalOutOfRange(D2DError):
    pass


class ChainExhausted(D2DError):
    pass


# wire
class FieldOverflow(D2DError):
    pass


class TruncatedPacket(D2DError):
    pass


class MalformedPacket(D2DError):
    pass


# roles
class ProtocolReject(D2DError):
    """A role refused a packet or request.

    ``reason`` is the stable short name written to traces (``ReplayedId``,
    ``BadRelayMac`` and so on); subclasses fix it.
    """

    reason = "ProtocolReject"

    def __init__(self, message: str = "", **detail):
        super().__init__(message or self.reason)
        self.detail = detail


class UnknownSubscriber(ProtocolReject):
    reason = "UnknownSubscriber"


class NotInProximity(ProtocolReject):
    reason = "NotInProximity"


class NoPendingRequest(ProtocolReject):
    reason = "NoPendingRequest"


class NoSessionKey(ProtocolReject):
    reason = "NoSessionKey"


class ReplayedId(ProtocolReject):
    reason = "ReplayedId"


class StaleTimestamp(ProtocolReject):
    reason = "StaleTimestamp"


class BadSourceMac(ProtocolReject):
    reason = "BadSourceMac"


class BadHashChain(ProtocolReject):
    reason = "BadHashChain"


class BadRelayMac(ProtocolReject):
    reason = "BadRelayMac"

    def __init__(self, hop: int, message: str = ""):
        super().__init__(message or f"relay MAC mismatch at hop {hop}", hop=hop)
        self.hop = hop


class BadReplyMac(ProtocolReject):
    reason = "BadReplyMac"


class BadDisclosedKey(ProtocolReject):
    reason = "BadDisclosedKey"

    def __init__(self, owner: int, message: str = ""):
        super().__init__(message or f"disclosed key for node {owner} failed", owner=owner)
        self.owner = owner


class DisclosureTooEarly(ProtocolReject):
    reason = "DisclosureTooEarly"


# netsim
class ConfigInvalid(D2DError):
    pass


class NoCoverage(D2DError):
    pass


INTEGRITY_FAILURES = (BadSourceMac, BadHashChain, BadRelayMac, BadReplyMac, BadDisclosedKey)
