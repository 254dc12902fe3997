"""Membership operations: packet layout and per-operation state machine.

A membership operation (establish, include, exclude, refresh) runs the
group DH agreement and the signature exchange over one shared flow of
greeting packets:

* upflow packets are directed hops collecting contributions (establish
  walks all members, include walks only the joining ones; exclude and
  refresh have no upflow),
* one downflow broadcast distributes the finished intermediate-key,
  nonce and ephemeral-key lists,
* downflow acks carry the remaining members' session signatures.

Every greeting packet is signed by its sender's ephemeral key over all
records following the signature. A new member's ephemeral key rides in the
same packet, unauthenticated at first but confirmed by the end of the
operation through the identity-signed session signature. The operation
completes for a member when delivery of some packet makes every session
signature verified; the shared reflected order makes that the same packet
for all members, which then anchors the next operation's parent reference.

All state here is per-operation scratch. The caller keeps the previous
completed state until a result is produced, so a failed or rejected
operation changes nothing (atomicity).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable

from . import aske, crypto, gka
from .codec import Record, RecordType, encode_records, frame, packet_id
from .errors import (
    AuthFailure,
    Malformed,
    ProtocolViolation,
    UnsupportedVersion,
)
from .message_security import TYPE_GREETING, VERSION_BYTES, SubsessionKeys

CTX_GREET = b"greetmsgsig"

DEFAULT_OP_TIMEOUT = 64


class OpKind(enum.IntEnum):
    ESTABLISH = 0
    INCLUDE = 1
    EXCLUDE = 2
    REFRESH = 3


class Stage(enum.IntEnum):
    UPFLOW = 0
    DOWNFLOW_INIT = 1
    DOWNFLOW_ACK = 2


@dataclass(frozen=True)
class GreetingFields:
    """Parsed contents of one greeting packet."""

    kind: OpKind
    stage: Stage
    source: str
    dest: str | None
    members: tuple[str, ...]
    int_keys: tuple[bytes, ...]
    nonces: tuple[bytes, ...]
    pub_keys: tuple[bytes, ...]
    prev_pf: bytes | None
    chain_hash: bytes | None
    latest_pm: tuple[bytes, ...]
    session_sig: bytes | None
    signature: bytes
    signed_bytes: bytes

    @property
    def is_initial(self) -> bool:
        return self.prev_pf is not None


# ---------------------------------------------------------------------------
# Wire layout


def _greet_type_value(kind: OpKind, stage: Stage) -> bytes:
    return bytes([kind.value, stage.value])


def _decode_greet_type(value: bytes) -> tuple[OpKind, Stage]:
    if len(value) != 2:
        raise Malformed("greet type must be two bytes")
    try:
        kind, stage = OpKind(value[0]), Stage(value[1])
    except ValueError as exc:
        raise Malformed(f"unknown greet type {value.hex()}") from exc
    if kind in (OpKind.EXCLUDE, OpKind.REFRESH) and stage is Stage.UPFLOW:
        raise Malformed(f"{kind.name} operations have no upflow")
    return kind, stage


def encode_greeting(
    kind: OpKind,
    stage: Stage,
    source: str,
    dest: str | None,
    members: tuple[str, ...],
    int_keys: tuple[bytes, ...],
    nonces: tuple[bytes, ...],
    pub_keys: tuple[bytes, ...],
    prev_pf: bytes | None,
    chain_hash: bytes | None,
    latest_pm: tuple[bytes, ...],
    session_sig: bytes | None,
    eph_seed: bytes,
) -> str:
    """Assemble, sign and frame a greeting packet."""
    records = [
        Record(RecordType.PROTOCOL_VERSION, VERSION_BYTES),
        Record(RecordType.MESSAGE_TYPE, TYPE_GREETING),
        Record(RecordType.GREET_TYPE, _greet_type_value(kind, stage)),
        Record(RecordType.SOURCE, source.encode("utf-8")),
    ]
    if dest is not None:
        records.append(Record(RecordType.DEST, dest.encode("utf-8")))
    records.extend(Record(RecordType.MEMBER, m.encode("utf-8")) for m in members)
    records.extend(Record(RecordType.INT_KEY, k) for k in int_keys)
    records.extend(Record(RecordType.NONCE, n) for n in nonces)
    records.extend(Record(RecordType.PUB_KEY, p) for p in pub_keys)
    if prev_pf is not None:
        records.append(Record(RecordType.PREV_PF, prev_pf))
        records.append(Record(RecordType.CHAIN_HASH, chain_hash or b""))
        records.extend(Record(RecordType.LATEST_PM, pm) for pm in latest_pm)
    if session_sig is not None:
        records.append(Record(RecordType.SESSION_SIGNATURE, session_sig))
    signed = encode_records(records)
    signature = crypto.sign(eph_seed, CTX_GREET + signed)
    return frame([Record(RecordType.MESSAGE_SIGNATURE, signature), *records])


_LAYOUT = [
    (RecordType.MESSAGE_SIGNATURE, 1, 1),
    (RecordType.PROTOCOL_VERSION, 1, 1),
    (RecordType.MESSAGE_TYPE, 1, 1),
    (RecordType.GREET_TYPE, 1, 1),
    (RecordType.SOURCE, 1, 1),
    (RecordType.DEST, 0, 1),
    (RecordType.MEMBER, 1, None),
    (RecordType.INT_KEY, 0, None),
    (RecordType.NONCE, 0, None),
    (RecordType.PUB_KEY, 0, None),
    (RecordType.PREV_PF, 0, 1),
    (RecordType.CHAIN_HASH, 0, 1),
    (RecordType.LATEST_PM, 0, None),
    (RecordType.SESSION_SIGNATURE, 0, 1),
]


def _group_records(records: list[Record]) -> dict[RecordType, list[bytes]]:
    """Collect record values, enforcing the canonical order and counts."""
    groups: dict[RecordType, list[bytes]] = {rtype: [] for rtype, _, _ in _LAYOUT}
    position = 0
    for record in records:
        while position < len(_LAYOUT) and record.rtype != _LAYOUT[position][0]:
            rtype, low, _ = _LAYOUT[position]
            if len(groups[rtype]) < low:
                raise Malformed(f"missing required record {rtype.name}")
            position += 1
        if position >= len(_LAYOUT):
            raise Malformed(f"record type {record.rtype} out of order or unknown")
        rtype, _, high = _LAYOUT[position]
        if high is not None and len(groups[rtype]) >= high:
            raise Malformed(f"too many {rtype.name} records")
        groups[rtype].append(record.value)
    for rtype, low, _ in _LAYOUT[position:]:
        if len(groups[rtype]) < low:
            raise Malformed(f"missing required record {rtype.name}")
    return groups


def is_greeting(records: list[Record]) -> bool:
    return bool(records) and records[0].rtype == RecordType.MESSAGE_SIGNATURE


def _utf8(value: bytes, what: str) -> str:
    try:
        return value.decode("utf-8")
    except UnicodeDecodeError:
        raise Malformed(f"{what} is not valid UTF-8") from None


def parse_greeting(records: list[Record]) -> GreetingFields:
    """Parse and structurally validate a greeting packet."""
    groups = _group_records(records)
    if groups[RecordType.PROTOCOL_VERSION][0] != VERSION_BYTES:
        raise UnsupportedVersion(
            f"version {groups[RecordType.PROTOCOL_VERSION][0].hex()}"
        )
    if groups[RecordType.MESSAGE_TYPE][0] != TYPE_GREETING:
        raise Malformed("not a greeting packet")
    kind, stage = _decode_greet_type(groups[RecordType.GREET_TYPE][0])

    members = tuple(_utf8(v, "member id") for v in groups[RecordType.MEMBER])
    if len(set(members)) != len(members):
        raise Malformed("duplicate members")
    source = _utf8(groups[RecordType.SOURCE][0], "source id")
    if source not in members:
        raise Malformed("source is not a listed member")
    dest = (
        _utf8(groups[RecordType.DEST][0], "dest id")
        if groups[RecordType.DEST]
        else None
    )

    int_keys = tuple(groups[RecordType.INT_KEY])
    nonces = tuple(groups[RecordType.NONCE])
    pub_keys = tuple(groups[RecordType.PUB_KEY])
    has_prev = bool(groups[RecordType.PREV_PF])
    if has_prev != bool(groups[RecordType.CHAIN_HASH]):
        raise Malformed("PREV_PF and CHAIN_HASH must appear together")
    if groups[RecordType.LATEST_PM] and not has_prev:
        raise Malformed("LATEST_PM only rides on initial packets")
    session_sig = (
        groups[RecordType.SESSION_SIGNATURE][0]
        if groups[RecordType.SESSION_SIGNATURE]
        else None
    )

    n = len(members)
    if stage is Stage.UPFLOW:
        if dest is None or dest not in members:
            raise Malformed("upflow packets need an in-group DEST")
        if not (1 <= len(int_keys) <= n):
            raise Malformed("bad upflow intermediate-key count")
        if len(nonces) != len(int_keys) - 1 or len(pub_keys) != len(int_keys) - 1:
            raise Malformed("upflow nonce/pubkey counts must trail keys by one")
        if session_sig is not None:
            raise Malformed("upflow packets carry no session signature")
    else:
        if dest is not None:
            raise Malformed("downflow packets are broadcasts")
        if stage is Stage.DOWNFLOW_INIT:
            if not (len(int_keys) == len(nonces) == len(pub_keys) == n):
                raise Malformed("downflow lists must cover every member")
            if kind in (OpKind.EXCLUDE, OpKind.REFRESH):
                if not has_prev:
                    raise Malformed(f"{kind.name} downflow must open the operation")
            elif has_prev:
                raise Malformed("upflow operations open with the upflow packet")
            if kind is OpKind.REFRESH:
                if session_sig is not None:
                    raise Malformed("refresh needs no session signature")
            elif session_sig is None:
                raise Malformed("downflow-init needs the sender's session signature")
        else:  # DOWNFLOW_ACK
            if int_keys or nonces or pub_keys or has_prev:
                raise Malformed("acks carry only a session signature")
            if session_sig is None:
                raise Malformed("ack without session signature")

    signed = encode_records(records[1:])
    return GreetingFields(
        kind=kind,
        stage=stage,
        source=source,
        dest=dest,
        members=members,
        int_keys=int_keys,
        nonces=nonces,
        pub_keys=pub_keys,
        prev_pf=groups[RecordType.PREV_PF][0] if has_prev else None,
        chain_hash=groups[RecordType.CHAIN_HASH][0] if has_prev else None,
        latest_pm=tuple(groups[RecordType.LATEST_PM]),
        session_sig=session_sig,
        signature=records[0].value,
        signed_bytes=signed,
    )


# ---------------------------------------------------------------------------
# Operation state


@dataclass
class OpChainState:
    """Completed-operation state the next operation builds on."""

    members: tuple[str, ...]
    gka_state: gka.GkaState
    aske_state: aske.AskeState
    group_key: bytes

    @property
    def sid(self) -> bytes:
        assert self.aske_state.sid is not None
        return self.aske_state.sid

    def eph_map(self) -> dict[str, bytes]:
        return dict(zip(self.aske_state.members, self.aske_state.eph_pubs))


@dataclass(frozen=True)
class GreetingResult:
    keys: SubsessionKeys
    op_state: OpChainState
    final_packet: str
    kind: OpKind
    latest_pm: tuple[bytes, ...]


@dataclass
class GreetOutput:
    send: list[str] = field(default_factory=list)
    result: GreetingResult | None = None
    failed: str | None = None


@dataclass
class Proposal:
    """Secrets a proposer sets aside until the reflected initial packet
    either starts the operation or loses the race."""

    kind: OpKind
    members: tuple[str, ...]
    gka_state: gka.GkaState
    aske_state: aske.AskeState
    framed: str
    packet_id: bytes


@dataclass(frozen=True)
class GreetContext:
    own_id: str
    identity_seed: bytes
    identity_provider: Callable[[str], bytes]
    rng: crypto.Rng


def build_initial(
    ctx: GreetContext,
    kind: OpKind,
    prior: OpChainState | None,
    include: tuple[str, ...],
    exclude: tuple[str, ...],
    prev_pf: bytes,
    chain_hash: bytes,
    latest_pm: tuple[bytes, ...],
    now: int,
) -> Proposal:
    """Create the first packet of an operation plus the proposer's secrets."""
    if kind is OpKind.ESTABLISH:
        members = (ctx.own_id, *include)
        if len(members) < 2:
            raise ProtocolViolation("an establish needs at least one other member")
        gka_state, payload = gka.ika_initiate(
            ctx.own_id, list(members), ctx.rng, now
        )
        aske_state, nonces, pubs = aske.contribute(
            ctx.own_id, list(members), [], [], ctx.rng
        )
        framed = encode_greeting(
            kind, Stage.UPFLOW, ctx.own_id, payload.dest, members,
            payload.int_keys, tuple(nonces), tuple(pubs),
            prev_pf, chain_hash, latest_pm, None, aske_state.own_eph_seed,
        )
    elif kind is OpKind.INCLUDE:
        assert prior is not None
        gka_state, payload = gka.include_initiate(
            prior.gka_state, list(include), ctx.rng, now
        )
        aske_state = aske.include_extend(prior.aske_state, list(include))
        members = tuple(payload.members)
        framed = encode_greeting(
            kind, Stage.UPFLOW, ctx.own_id, payload.dest, members,
            payload.int_keys,
            tuple(prior.aske_state.nonces), tuple(prior.aske_state.eph_pubs),
            prev_pf, chain_hash, latest_pm, None, aske_state.own_eph_seed,
        )
    elif kind is OpKind.EXCLUDE:
        assert prior is not None
        gka_state, payload = gka.exclude_initiate(
            prior.gka_state, list(exclude), ctx.rng, now
        )
        aske_state = aske.exclude(prior.aske_state, list(exclude), ctx.rng)
        members = tuple(payload.members)
        session_sig = aske.own_signature(aske_state, ctx.identity_seed)
        framed = encode_greeting(
            kind, Stage.DOWNFLOW_INIT, ctx.own_id, None, members,
            payload.int_keys,
            tuple(aske_state.nonces), tuple(aske_state.eph_pubs),
            prev_pf, chain_hash, latest_pm, session_sig, aske_state.own_eph_seed,
        )
    else:  # REFRESH
        assert prior is not None
        gka_state, payload = gka.refresh_initiate(prior.gka_state, ctx.rng, now)
        aske_state = prior.aske_state.clone()
        members = tuple(payload.members)
        framed = encode_greeting(
            kind, Stage.DOWNFLOW_INIT, ctx.own_id, None, members,
            payload.int_keys,
            tuple(aske_state.nonces), tuple(aske_state.eph_pubs),
            prev_pf, chain_hash, latest_pm, None, aske_state.own_eph_seed,
        )
    return Proposal(kind, members, gka_state, aske_state, framed, packet_id(framed))


class Greeting:
    """State machine for one running membership operation at one member."""

    def __init__(
        self,
        ctx: GreetContext,
        initial: GreetingFields,
        prior: OpChainState | None,
        proposal: Proposal | None,
        now: int,
        op_timeout: int = DEFAULT_OP_TIMEOUT,
    ):
        self.ctx = ctx
        self.kind = initial.kind
        self.members = initial.members
        self.initiator = initial.source
        self.prior = prior
        self.started_at = now
        self.op_timeout = op_timeout
        self.latest_pm = initial.latest_pm
        self.failed: str | None = None
        self.result: GreetingResult | None = None

        self._validate_membership(initial)

        self._verified: set[str] = set()
        self._sent_ack = False
        self._downflow_seen = False
        self._gka: gka.GkaState | None = None
        self._aske: aske.AskeState | None = None
        self._group_key: bytes | None = None
        self._eph_known: dict[str, bytes] = dict(prior.eph_map()) if prior else {}

        if proposal is not None:
            # Our own operation: adopt the secrets drawn at proposal time.
            self._gka = proposal.gka_state
            self._aske = proposal.aske_state
            self._eph_known[ctx.own_id] = crypto.sign_public(
                proposal.aske_state.own_eph_seed
            )
            if self.kind in (OpKind.EXCLUDE, OpKind.REFRESH):
                self._sent_ack = True  # our signature rides in the opening packet

    def _validate_membership(self, initial: GreetingFields) -> None:
        own = self.ctx.own_id
        members = initial.members
        if not initial.is_initial:
            raise ProtocolViolation("operation must open with an initial packet")
        if own not in members:
            raise ProtocolViolation("operation does not involve us")
        if self.kind is OpKind.ESTABLISH:
            if self.prior is not None:
                raise ProtocolViolation("establish over an existing session")
            if initial.source != members[0]:
                raise ProtocolViolation("establish initiator must lead the list")
        elif self.prior is None:
            # Without completed state we can only be joining via an include.
            if self.kind is not OpKind.INCLUDE:
                raise ProtocolViolation(f"{self.kind.name} without prior state")
        else:
            prior_members = self.prior.members
            if self.kind is OpKind.INCLUDE:
                if members[: len(prior_members)] != prior_members:
                    raise ProtocolViolation("include must append to the membership")
                if len(members) == len(prior_members):
                    raise ProtocolViolation("include adds nobody")
                if initial.source not in prior_members:
                    raise ProtocolViolation("include initiator is not a member")
            elif self.kind is OpKind.EXCLUDE:
                departed = [m for m in prior_members if m not in members]
                expected = tuple(m for m in prior_members if m in members)
                if members != expected or not departed:
                    raise ProtocolViolation("exclude must preserve member order")
            elif self.kind is OpKind.REFRESH:
                if members != prior_members:
                    raise ProtocolViolation("refresh cannot change membership")

    @property
    def done(self) -> bool:
        return self.result is not None or self.failed is not None

    # -- driving ------------------------------------------------------------

    def tick(self, now: int) -> str | None:
        if not self.done and now - self.started_at >= self.op_timeout:
            self.failed = "operation timed out"
        return self.failed

    def recv(self, fields: GreetingFields, framed: str, now: int) -> GreetOutput:
        if self.done:
            return GreetOutput()
        try:
            return self._recv(fields, framed, now)
        except (AuthFailure, Malformed, ProtocolViolation) as exc:
            self.failed = str(exc)
            return GreetOutput(failed=self.failed)

    def _recv(self, fields: GreetingFields, framed: str, now: int) -> GreetOutput:
        if fields.members != self.members:
            raise ProtocolViolation("membership changed mid-operation")
        if fields.kind is not self.kind:
            raise ProtocolViolation("operation kind changed mid-flight")

        # Verify the packet signature for everybody, ourselves included:
        # a reflected own packet must still match the key we actually hold.
        self._verify_packet_signature(fields)

        if fields.stage is Stage.UPFLOW:
            return self._recv_upflow(fields, now)
        if fields.stage is Stage.DOWNFLOW_INIT:
            return self._recv_downflow_init(fields, framed, now)
        return self._recv_ack(fields, framed, now)

    # -- signature plumbing -------------------------------------------------

    def _identity(self, member: str) -> bytes:
        pub = self.ctx.identity_provider(member)
        if pub is None:
            raise AuthFailure(f"no identity key known for {member}")
        return pub

    def _verify_packet_signature(self, fields: GreetingFields) -> None:
        eph_pub = self._eph_known.get(fields.source)
        if eph_pub is None and fields.pub_keys:
            idx = fields.members.index(fields.source)
            if idx < len(fields.pub_keys):
                eph_pub = fields.pub_keys[idx]
        if eph_pub is None:
            raise AuthFailure(f"no ephemeral key known for {fields.source}")
        crypto.verify(eph_pub, fields.signature, CTX_GREET + fields.signed_bytes)

    # -- upflow -------------------------------------------------------------

    def _recv_upflow(self, fields: GreetingFields, now: int) -> GreetOutput:
        if self.kind in (OpKind.EXCLUDE, OpKind.REFRESH):
            raise ProtocolViolation("unexpected upflow")
        if self._downflow_seen:
            raise ProtocolViolation("upflow after downflow")
        if fields.dest != self.ctx.own_id:
            return GreetOutput()  # someone else's hop
        if self.kind is OpKind.INCLUDE and self.prior is not None:
            raise ProtocolViolation("existing members take no upflow turn")
        if self._gka is not None:
            raise ProtocolViolation("second upflow addressed to us")

        ctx = self.ctx
        gka_state, payload = gka.upflow_process(
            ctx.own_id,
            gka.GkaPayload(fields.members, fields.int_keys, ctx.own_id),
            ctx.rng,
            now,
        )
        aske_state, nonces, pubs = aske.contribute(
            ctx.own_id, list(fields.members), list(fields.nonces),
            list(fields.pub_keys), ctx.rng,
        )
        self._gka = gka_state
        self._aske = aske_state
        self._eph_known[ctx.own_id] = aske_state.own_eph_pub

        if payload.dest is None:
            # We are the last hop: finish our state and open the downflow.
            aske_state = aske.finalize(
                aske_state, list(fields.members), nonces, pubs
            )
            self._aske = aske_state
            self._group_key = crypto.derive_group_key(gka_state.group_secret)
            self._learn_eph(pubs)
            session_sig = aske.own_signature(aske_state, ctx.identity_seed)
            framed = encode_greeting(
                self.kind, Stage.DOWNFLOW_INIT, ctx.own_id, None, self.members,
                payload.int_keys, tuple(nonces), tuple(pubs),
                None, None, (), session_sig, aske_state.own_eph_seed,
            )
            self._sent_ack = True
            self._downflow_seen = True
            return GreetOutput(send=[framed])

        framed = encode_greeting(
            self.kind, Stage.UPFLOW, ctx.own_id, payload.dest, self.members,
            payload.int_keys, tuple(nonces), tuple(pubs),
            None, None, (), None, aske_state.own_eph_seed,
        )
        return GreetOutput(send=[framed])

    # -- downflow -----------------------------------------------------------

    def _learn_eph(self, pubs: list[bytes] | tuple[bytes, ...]) -> None:
        self._eph_known = dict(zip(self.members, pubs))

    def _validate_carried_lists(self, fields: GreetingFields) -> None:
        """Veterans check that carried-over slots were not rewritten."""
        if self.prior is None:
            return
        prior = self.prior.aske_state
        prior_nonce = dict(zip(prior.members, prior.nonces))
        prior_pub = dict(zip(prior.members, prior.eph_pubs))
        for idx, member in enumerate(fields.members):
            if member not in prior_nonce:
                continue  # joining member, nothing to compare
            if fields.pub_keys[idx] != prior_pub[member]:
                raise AuthFailure(f"ephemeral key for {member} was rewritten")
            nonce_ok = fields.nonces[idx] == prior_nonce[member]
            if self.kind is OpKind.EXCLUDE and member == self.initiator:
                # The exclude initiator must refresh its nonce.
                if nonce_ok:
                    raise AuthFailure("exclude initiator reused its nonce")
            elif not nonce_ok:
                raise AuthFailure(f"nonce for {member} was rewritten")

    def _recv_downflow_init(
        self, fields: GreetingFields, framed: str, now: int
    ) -> GreetOutput:
        own = self.ctx.own_id
        if self._downflow_seen:
            if fields.source == own:
                # Reflection of the downflow we authored.
                self._verified.add(own)
                return self._maybe_complete(framed)
            raise ProtocolViolation("second downflow-init")
        self._downflow_seen = True

        if self.kind is OpKind.REFRESH:
            return self._recv_refresh(fields, framed, now)

        self._validate_carried_lists(fields)

        # Group part: recover the secret from our slot.
        payload = gka.GkaPayload(fields.members, fields.int_keys, None)
        if self._gka is not None:
            gka_state = gka.downflow_compute(self._gka, payload)
        elif self.prior is not None:
            gka_state = gka.downflow_compute(self.prior.gka_state.clone(), payload)
        else:
            raise ProtocolViolation("downflow before our upflow turn")
        self._gka = gka_state
        self._group_key = crypto.derive_group_key(gka_state.group_secret)

        # Signature part: fix the sid and check the sender's confirmation.
        base_aske = self._aske if self._aske is not None else self.prior.aske_state
        aske_state = aske.finalize(
            base_aske, list(fields.members), list(fields.nonces), list(fields.pub_keys)
        )
        self._aske = aske_state
        self._learn_eph(fields.pub_keys)

        assert fields.session_sig is not None
        aske.verify_member(
            aske_state, fields.source, fields.session_sig,
            self._identity(fields.source),
        )
        self._verified.add(fields.source)

        output = GreetOutput()
        if not self._sent_ack:
            session_sig = aske.own_signature(aske_state, self.ctx.identity_seed)
            ack = encode_greeting(
                self.kind, Stage.DOWNFLOW_ACK, own, None, self.members,
                (), (), (), None, None, (), session_sig, aske_state.own_eph_seed,
            )
            self._sent_ack = True
            output.send.append(ack)
        return self._merge(output, self._maybe_complete(framed))

    def _recv_refresh(
        self, fields: GreetingFields, framed: str, now: int
    ) -> GreetOutput:
        assert self.prior is not None
        if fields.source == self.ctx.own_id:
            gka_state = self._gka
        else:
            self._validate_carried_lists(fields)
            payload = gka.GkaPayload(fields.members, fields.int_keys, None)
            gka_state = gka.downflow_compute(self.prior.gka_state.clone(), payload)
            self._aske = self.prior.aske_state.clone()
        self._gka = gka_state
        self._group_key = crypto.derive_group_key(gka_state.group_secret)
        # No signatures to collect: the packet was authenticated with the
        # sender's established ephemeral key and the sid is unchanged.
        self._verified = set(self.members)
        return self._maybe_complete(framed)

    def _recv_ack(self, fields: GreetingFields, framed: str, now: int) -> GreetOutput:
        if self.kind is OpKind.REFRESH:
            raise ProtocolViolation("refresh operations have no acks")
        if not self._downflow_seen or self._aske is None or self._aske.sid is None:
            raise ProtocolViolation("ack before the downflow lists")
        source = fields.source
        if source in self._verified:
            raise ProtocolViolation(f"duplicate session signature from {source}")
        if source != self.ctx.own_id:
            assert fields.session_sig is not None
            aske.verify_member(
                self._aske, source, fields.session_sig, self._identity(source)
            )
        self._verified.add(source)
        return self._maybe_complete(framed)

    # -- completion ---------------------------------------------------------

    @staticmethod
    def _merge(a: GreetOutput, b: GreetOutput) -> GreetOutput:
        return GreetOutput(
            send=a.send + b.send,
            result=a.result or b.result,
            failed=a.failed or b.failed,
        )

    def _maybe_complete(self, framed: str) -> GreetOutput:
        if self._verified != set(self.members):
            return GreetOutput()
        assert self._gka is not None and self._aske is not None
        assert self._gka.complete and self._aske.sid is not None
        assert self._group_key is not None
        keys = SubsessionKeys(
            sid=self._aske.sid,
            group_key=self._group_key,
            members=self.members,
            own_id=self.ctx.own_id,
            own_eph_seed=self._aske.own_eph_seed,
            eph_pubs=dict(self._eph_known),
        )
        op_state = OpChainState(
            members=self.members,
            gka_state=self._gka,
            aske_state=self._aske,
            group_key=self._group_key,
        )
        self.result = GreetingResult(
            keys=keys,
            op_state=op_state,
            final_packet=framed,
            kind=self.kind,
            latest_pm=self.latest_pm,
        )
        return GreetOutput(result=self.result)
