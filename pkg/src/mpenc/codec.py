"""TLV wire codec: record encoding and channel-string framing.

Every protocol packet is a sequence of records, each a 16-bit big-endian
type, a 16-bit big-endian length, and that many value bytes. A packet
travels over the transport as ``?mpENC:<base64>.`` where the base64 payload
is the concatenated records. Numeric type values are frozen in
docs/wire-spec.md and pinned by golden vectors; changing them breaks wire
compatibility.
"""

from __future__ import annotations

import base64
import binascii
import struct
from enum import IntEnum
from typing import Iterable, NamedTuple

from .errors import Malformed, NotMpenc, OversizeRecord

PREFIX = "?mpENC:"
SUFFIX = "."

MAX_VALUE_LEN = 0xFFFF
_HEADER = struct.Struct(">HH")


class RecordType(IntEnum):
    """Frozen wire identifiers for every record that can appear in a packet."""

    MESSAGE_SIGNATURE = 1
    PROTOCOL_VERSION = 2
    MESSAGE_TYPE = 3
    GREET_TYPE = 4
    SOURCE = 5
    DEST = 6
    MEMBER = 7
    INT_KEY = 8
    NONCE = 9
    PUB_KEY = 10
    PREV_PF = 11
    CHAIN_HASH = 12
    LATEST_PM = 13
    SESSION_SIGNATURE = 14
    SIDKEY_HINT = 15
    MESSAGE_IV = 16
    MESSAGE_PAYLOAD = 17
    MESSAGE_PARENT = 18
    MESSAGE_BODY = 19


class Record(NamedTuple):
    rtype: int
    value: bytes


def encode_record(record: Record) -> bytes:
    rtype, value = record
    if len(value) > MAX_VALUE_LEN:
        raise OversizeRecord(f"record value of {len(value)} bytes exceeds 65535")
    return _HEADER.pack(rtype, len(value)) + value


def encode_records(records: Iterable[Record]) -> bytes:
    return b"".join(encode_record(r) for r in records)


def decode_records(data: bytes) -> list[Record]:
    """Parse a byte string into records, consuming it entirely."""
    records = []
    offset = 0
    end = len(data)
    while offset < end:
        if end - offset < _HEADER.size:
            raise Malformed(f"truncated record header at offset {offset}")
        rtype, length = _HEADER.unpack_from(data, offset)
        offset += _HEADER.size
        if end - offset < length:
            raise Malformed(f"record value truncated at offset {offset}")
        records.append(Record(rtype, data[offset : offset + length]))
        offset += length
    return records


def frame(records: Iterable[Record]) -> str:
    """Wrap records into the transport string ``?mpENC:<base64>.``"""
    payload = base64.b64encode(encode_records(records)).decode("ascii")
    return PREFIX + payload + SUFFIX


def unframe(text: str) -> list[Record]:
    """Extract records from a transport string.

    Raises NotMpenc for strings without the protocol framing, Malformed for
    framed strings whose payload does not decode.
    """
    if not (text.startswith(PREFIX) and text.endswith(SUFFIX)):
        raise NotMpenc("missing protocol framing")
    payload = text[len(PREFIX) : -len(SUFFIX)]
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, ValueError, UnicodeEncodeError) as exc:
        raise Malformed(f"framed payload is not valid base64: {exc}") from exc
    return decode_records(raw)


def packet_id(framed: str) -> bytes:
    """Identifier of a packet: SHA-256 of its framed wire bytes."""
    import hashlib

    return hashlib.sha256(framed.encode("utf-8")).digest()
