"""Data message protection: padding, encryption, and trial decryption.

A data message is signed with the author's ephemeral session key (binding
the session id and group key, never the identity key, which preserves
deniability), then encrypted with AES-128-CTR under the group key. CTR
keeps the ciphertext malleable by design; integrity comes solely from the
signature. Plaintexts are padded to 128 bytes, or the smallest 128*2^k
that fits, so observers only learn coarse size classes.

Received packets carry a one-byte hint (first byte of H(sid || group key))
so a receiver holding several live subsessions can pick decryption
candidates cheaply; verification order is signature first, then decrypt.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import crypto
from .codec import Record, RecordType, encode_records, frame, unframe
from .errors import (
    Malformed,
    MessageTooLarge,
    ProtocolViolation,
    Undecryptable,
    UnsupportedVersion,
)
from .transcript import MsgKind

CTX_DATA = b"datamsgsig"

PROTOCOL_VERSION = 0x01
VERSION_BYTES = struct.pack(">H", PROTOCOL_VERSION)

#: Packet-level message type values (one byte).
TYPE_GREETING = b"\x00"
TYPE_DATA = b"\x01"

SIZE_BL = 128


@dataclass(frozen=True)
class SubsessionKeys:
    """Everything needed to read and write messages in one subsession."""

    sid: bytes
    group_key: bytes
    members: tuple[str, ...]
    own_id: str
    own_eph_seed: bytes
    eph_pubs: dict[str, bytes] = field(hash=False, compare=False, default_factory=dict)

    @property
    def hint(self) -> int:
        return sidkey_hint(self.sid, self.group_key)


@dataclass(frozen=True)
class PlainMessage:
    """Decrypted payload of a data packet, before transcript rules apply."""

    author: str
    parents: tuple[bytes, ...]
    body: bytes
    kind: MsgKind
    keys: SubsessionKeys


def sidkey_hint(sid: bytes, group_key: bytes) -> int:
    return crypto.sha256(sid + group_key)[0]


def pad(payload: bytes, size_bl: int = SIZE_BL) -> bytes:
    """Length-prefix and zero-fill to `size_bl`, doubling while too small."""
    if len(payload) > 0xFFFF:
        raise MessageTooLarge(f"{len(payload)} bytes exceeds the length prefix")
    total = size_bl
    while total < 2 + len(payload):
        total *= 2
    return struct.pack(">H", len(payload)) + payload + bytes(total - 2 - len(payload))


def unpad(padded: bytes, size_bl: int = SIZE_BL) -> bytes:
    total = len(padded)
    valid = size_bl
    while valid < total:
        valid *= 2
    if total < 2 or total != valid:
        raise Malformed(f"padded length {total} is not {size_bl} * 2^k")
    (length,) = struct.unpack(">H", padded[:2])
    if 2 + length > total:
        raise Malformed("length prefix exceeds padded payload")
    if any(padded[2 + length :]):
        raise Malformed("padding bytes are not zero")
    return padded[2 : 2 + length]


def _plaintext_records(parents: tuple[bytes, ...], body: bytes, kind: MsgKind) -> bytes:
    records = [Record(RecordType.MESSAGE_PARENT, p) for p in sorted(parents)]
    if kind is MsgKind.CONTENT:
        # A content message must carry a non-empty body: an absent body
        # record means ACK and an empty one means FIN on the wire.
        if not body:
            raise ProtocolViolation("content messages need a non-empty body")
        records.append(Record(RecordType.MESSAGE_BODY, body))
    elif kind is MsgKind.FIN:
        records.append(Record(RecordType.MESSAGE_BODY, b""))
    elif body:
        raise ProtocolViolation("ack messages carry no body")
    return encode_records(records)


def _parse_plaintext(raw: bytes) -> tuple[tuple[bytes, ...], bytes, MsgKind]:
    from .codec import decode_records

    records = decode_records(raw)
    parents: list[bytes] = []
    body: bytes | None = None
    for record in records:
        if record.rtype == RecordType.MESSAGE_PARENT:
            if body is not None:
                raise Malformed("parent record after body")
            parents.append(record.value)
        elif record.rtype == RecordType.MESSAGE_BODY:
            if body is not None:
                raise Malformed("duplicate body record")
            body = record.value
        else:
            raise Malformed(f"unexpected record type {record.rtype} in payload")
    if body is None:
        return tuple(parents), b"", MsgKind.ACK
    if body == b"":
        return tuple(parents), b"", MsgKind.FIN
    return tuple(parents), body, MsgKind.CONTENT


def _signature_input(keys: SubsessionKeys, signed_records: bytes) -> bytes:
    return CTX_DATA + crypto.sha256(keys.sid + keys.group_key) + signed_records


def encrypt_message(
    keys: SubsessionKeys,
    parents: tuple[bytes, ...],
    body: bytes,
    kind: MsgKind,
    rng: crypto.Rng,
) -> str:
    """Build a framed data packet for the given subsession."""
    padded = pad(_plaintext_records(parents, body, kind))
    iv = rng.bytes(crypto.IV_LEN)
    ciphertext = crypto.ctr_encrypt(keys.group_key, iv, padded)
    signed_records = [
        Record(RecordType.PROTOCOL_VERSION, VERSION_BYTES),
        Record(RecordType.MESSAGE_TYPE, TYPE_DATA),
        Record(RecordType.MESSAGE_IV, iv),
        Record(RecordType.MESSAGE_PAYLOAD, ciphertext),
    ]
    signature = crypto.sign(
        keys.own_eph_seed, _signature_input(keys, encode_records(signed_records))
    )
    return frame(
        [
            Record(RecordType.SIDKEY_HINT, bytes([keys.hint])),
            Record(RecordType.MESSAGE_SIGNATURE, signature),
            *signed_records,
        ]
    )


@dataclass(frozen=True)
class DataPacket:
    hint: int
    signature: bytes
    signed_bytes: bytes
    iv: bytes
    ciphertext: bytes


def parse_data_packet(records: list[Record]) -> DataPacket:
    """Validate the fixed record layout of a data packet."""
    expected = [
        RecordType.SIDKEY_HINT,
        RecordType.MESSAGE_SIGNATURE,
        RecordType.PROTOCOL_VERSION,
        RecordType.MESSAGE_TYPE,
        RecordType.MESSAGE_IV,
        RecordType.MESSAGE_PAYLOAD,
    ]
    if [r.rtype for r in records] != expected:
        raise Malformed("unexpected data packet record layout")
    hint_rec, sig_rec, version_rec, type_rec, iv_rec, payload_rec = records
    if len(hint_rec.value) != 1:
        raise Malformed("hint must be a single byte")
    if version_rec.value != VERSION_BYTES:
        raise UnsupportedVersion(f"version {version_rec.value.hex()}")
    if type_rec.value != TYPE_DATA:
        raise Malformed("not a data packet")
    if len(iv_rec.value) != crypto.IV_LEN:
        raise Malformed("bad IV length")
    signed = encode_records(records[2:])
    return DataPacket(
        hint=hint_rec.value[0],
        signature=sig_rec.value,
        signed_bytes=signed,
        iv=iv_rec.value,
        ciphertext=payload_rec.value,
    )


def is_data_packet(records: list[Record]) -> bool:
    return bool(records) and records[0].rtype == RecordType.SIDKEY_HINT


def verify_decrypt(
    candidates: list[SubsessionKeys], framed: str, claimed_sender: str
) -> PlainMessage:
    """Try the packet against each candidate subsession.

    A candidate is considered only if its hint byte matches; within a
    candidate the signature is checked before anything is decrypted.
    Raises Undecryptable when every candidate fails.
    """
    packet = parse_data_packet(unframe(framed))
    for keys in candidates:
        if keys.hint != packet.hint:
            continue
        if claimed_sender not in keys.members:
            continue
        eph_pub = keys.eph_pubs.get(claimed_sender)
        if eph_pub is None:
            continue
        if not crypto.verify_ok(
            eph_pub, packet.signature, _signature_input(keys, packet.signed_bytes)
        ):
            continue
        try:
            padded = crypto.ctr_decrypt(keys.group_key, packet.iv, packet.ciphertext)
            parents, body, kind = _parse_plaintext(unpad(padded))
        except Malformed:
            continue
        return PlainMessage(claimed_sender, parents, body, kind, keys)
    raise Undecryptable("no candidate subsession accepts this packet")
