"""Exception hierarchy shared across the protocol modules."""

from __future__ import annotations


class ProtocolError(Exception):
    """Base class for every error raised by this package."""


class Malformed(ProtocolError):
    """Byte stream does not parse as the expected structure."""


class OversizeRecord(ProtocolError):
    """Record value exceeds the 16-bit length field."""


class NotMpenc(ProtocolError):
    """Channel string lacks the protocol framing."""


class UnsupportedVersion(ProtocolError):
    """Packet advertises a protocol version other than 0x01."""


class ProtocolViolation(ProtocolError):
    """Packet is well-formed but illegal in the current protocol state."""


class AuthFailure(ProtocolError):
    """A signature or authenticator did not verify."""


class InvalidMembers(ProtocolError):
    """Membership argument is inconsistent with the current group."""


class NotMyTurn(ProtocolError):
    """Upflow payload is not addressed to this position in the chain."""


class SelfExclusion(ProtocolError):
    """A member attempted to exclude itself."""


class AlreadyContributed(ProtocolError):
    """Duplicate contribution for a slot that is already filled."""


class Incomplete(ProtocolError):
    """Operation result requested before the exchange finished."""


class MessageTooLarge(ProtocolError):
    """Plaintext does not fit the padding scheme's 16-bit length prefix."""


class Undecryptable(ProtocolError):
    """No candidate subsession could verify and decrypt the packet."""


class NotFound(ProtocolError):
    """Lookup of an unknown message or member."""


class Busy(ProtocolError):
    """A proposal or operation is already pending."""
