"""A group messaging session over one reflected broadcast channel.

The session owns everything a single member needs: it runs membership
operations (via `greeter`), keeps the operation chain consistent (via
`server_order`), encrypts and orders data messages (via `message_security`
and `transcript`), and watches liveness timers (via `liveness`).

Interface model: the transport calls `channel_joined` / `channel_event` /
`receive` / `tick` in channel order, and drains `actions` (packets to
broadcast, channel leaves, kicks). The user calls `propose`, `send_message`
and `shutdown`, and drains `notices`. The channel reflects every broadcast
back to its sender; the session relies on that echo to sequence its own
packets against everyone else's.

A "subsession" is the unit of encryption: one completed membership
operation's keys plus a transcript of the messages exchanged under them.
The previous subsession stays readable after a membership change so that
stragglers sent concurrently with the change still land; everything older
is closed for good.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import crypto
from .codec import packet_id, unframe
from .errors import (
    InvalidMembers,
    Malformed,
    NotMpenc,
    ProtocolViolation,
    SelfExclusion,
    Undecryptable,
    UnsupportedVersion,
)
from .greeter import (
    GreetContext,
    Greeting,
    GreetingResult,
    OpKind,
    Proposal,
    build_initial,
    is_greeting,
    parse_greeting,
)
from .liveness import (
    WARN_FULL_ACK,
    WARN_PRESENCE,
    AckScheduler,
    ConsistencyMonitor,
    FlowControlPolicy,
    FullAckWarning,
    HeartbeatScheduler,
    PresenceTracker,
    ResendRequest,
)
from .message_security import (
    SubsessionKeys,
    encrypt_message,
    is_data_packet,
    verify_decrypt,
)
from .server_order import ServerOrder
from .transcript import AddStatus, Msg, MsgKind, Transcript

WARN_OP_TIMEOUT = "operation-timeout"
WARN_BUFFERED = "buffered-too-long"
WARN_SHUTDOWN = "shutdown-inconsistent"
WARN_UNDECRYPTABLE = "undecryptable"
WARN_MALFORMED = "malformed-packet"


# ---------------------------------------------------------------------------
# Notices (session -> user) and actions (session -> transport)


@dataclass(frozen=True)
class MessageAccepted:
    author: str
    body: bytes
    mid: bytes


@dataclass(frozen=True)
class MessageRejected:
    body: bytes
    reason: str


@dataclass(frozen=True)
class MembershipChanged:
    members: tuple[str, ...]
    previous: tuple[str, ...]


@dataclass(frozen=True)
class OperationStarted:
    kind: str
    initiator: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class OperationSucceeded:
    kind: str
    initiator: str


@dataclass(frozen=True)
class OperationRejected:
    kind: str
    initiator: str


@dataclass(frozen=True)
class OperationFailed:
    kind: str
    initiator: str
    reason: str


@dataclass(frozen=True)
class SecurityWarning:
    code: str
    detail: str


@dataclass(frozen=True)
class SendPacket:
    framed: str


@dataclass(frozen=True)
class LeaveChannel:
    pass


@dataclass(frozen=True)
class KickMember:
    member: str


@dataclass
class SessionConfig:
    policy: FlowControlPolicy = field(default_factory=FlowControlPolicy)
    #: Ticks before a running membership operation is abandoned.
    op_timeout: int = 64
    #: Ticks a message may wait for missing parents before we complain.
    defer_timeout: int = 32


class _Subsession:
    def __init__(self, keys: SubsessionKeys, op_state, policy: FlowControlPolicy):
        self.keys = keys
        self.op_state = op_state
        self.transcript = Transcript()
        self.monitor = ConsistencyMonitor(keys.own_id, policy)
        self.acker = AckScheduler(policy)
        self.warned_deferred: set[bytes] = set()
        self.closed = False
        # Our most recent send and everything its ancestry covers, so the
        # next send can chain to it even before the channel echoes it back.
        self.last_own_mid: bytes | None = None
        self.last_own_covered: set[bytes] = set()
        # Own packets whose channel echo is still outstanding (mid -> last
        # transmission tick).  The channel reflects everything it accepts,
        # so a missing echo means the packet was lost and only we can
        # supply it again; this covers acks, which no monitor watches.
        self.await_echo: dict[bytes, int] = {}

    @property
    def members(self) -> tuple[str, ...]:
        return self.keys.members


class Session:
    def __init__(
        self,
        own_id: str,
        identity_seed: bytes,
        identity_provider: Callable[[str], bytes],
        rng: crypto.Rng | None = None,
        config: SessionConfig | None = None,
    ):
        self.own_id = own_id
        self.config = config or SessionConfig()
        self.rng = rng or crypto.Rng(f"session:{own_id}")
        self.ctx = GreetContext(own_id, identity_seed, identity_provider, self.rng)

        self.server_order = ServerOrder()
        self.cur: _Subsession | None = None
        self.prev: _Subsession | None = None
        self.greeting: Greeting | None = None
        self._proposal: Proposal | None = None
        self._proposal_at = 0
        self._greet_seen: set[bytes] = set()
        self._sent: dict[bytes, str] = {}

        self.in_channel = False
        self.channel_members: set[str] = set()
        self._pending_exclude: set[str] = set()
        self._ousted_at: int | None = None
        # A fresh joiner cannot read stragglers of the subsession that
        # predates them; tolerate those quietly for one deferral window.
        self._undecryptable_grace = 0
        self._closing = False
        self._fin_mid: bytes | None = None
        self._fin_at = 0
        self._warned_shutdown = False
        self._leave_sent = False
        self._left = False

        policy = self.config.policy
        self.heartbeat = HeartbeatScheduler(policy)
        self.presence = PresenceTracker(own_id, policy)

        self.notices: list = []
        self.actions: list = []
        self.log: list[tuple[str, bytes]] = []
        self._log_seen: set[bytes] = set()
        self.now = 0

    # ------------------------------------------------------------------
    # Introspection

    @property
    def members(self) -> tuple[str, ...]:
        return self.cur.members if self.cur else (self.own_id,)

    @property
    def established(self) -> bool:
        return self.cur is not None

    @property
    def closed(self) -> bool:
        return self._left

    def drain_notices(self) -> list:
        out, self.notices = self.notices, []
        return out

    def drain_actions(self) -> list:
        out, self.actions = self.actions, []
        return out

    def _notice(self, notice) -> None:
        self.notices.append(notice)

    def _warn(self, code: str, detail: str) -> None:
        self.notices.append(SecurityWarning(code, detail))

    # ------------------------------------------------------------------
    # Transport-facing entry points

    def channel_joined(self, members: list[str], now: int) -> None:
        """We entered the channel; `members` is the room snapshot, us included."""
        self.now = now
        self.in_channel = True
        self.channel_members = set(members)

    def channel_event(self, kind: str, member: str, now: int) -> None:
        """Someone entered or left the room (kind: "join", "leave", "kick")."""
        self.now = now
        if self._left:
            return
        if kind == "join":
            self.channel_members.add(member)
            return
        self.channel_members.discard(member)
        if member == self.own_id:
            self._reset_to_solo()
            return
        self.presence.note_departed(member)
        for sub in (self.cur, self.prev):
            if sub:
                sub.monitor.note_departed(member)
        if (
            self.greeting
            and not self.greeting.done
            and member in self.greeting.members
        ):
            self.greeting.failed = f"{member} left the channel mid-operation"
            self._op_failed(self.greeting.failed)
        if self.cur and member in self.cur.members:
            self._pending_exclude.add(member)

    def receive(self, sender: str, framed: str, now: int) -> None:
        self.now = now
        if self._left:
            return
        if sender != self.own_id:
            self.presence.note_activity(sender, now)
        try:
            records = unframe(framed)
        except (Malformed, NotMpenc) as exc:
            self._warn(WARN_MALFORMED, str(exc))
            return
        if is_data_packet(records):
            self._recv_data(sender, framed, now)
        elif is_greeting(records):
            try:
                fields = parse_greeting(records)
            except (Malformed, UnsupportedVersion) as exc:
                self._warn(WARN_MALFORMED, str(exc))
                return
            if fields.source != sender:
                self._warn(WARN_MALFORMED, "source does not match channel sender")
                return
            if fields.is_initial:
                self._recv_initial(fields, framed, now)
            else:
                self._recv_op_packet(fields, framed, now)
        else:
            self._warn(WARN_MALFORMED, "unrecognized packet layout")

    def tick(self, now: int) -> None:
        self.now = now
        if self._left:
            return
        if (
            self._ousted_at is not None
            and now - self._ousted_at >= self.config.op_timeout
        ):
            # The exclusion evidently failed; resume normal behaviour and
            # let the sequencer forget the operation that never finished.
            self._ousted_at = None
            self.server_order.fail_operation()
        self._tick_greeting(now)
        for sub in (self.cur, self.prev):
            if sub:
                self._tick_subsession(sub, now)
        if (
            self.cur
            and not self._closing
            and self._ousted_at is None
            and self.heartbeat.tick(now)
        ):
            self._send_data(self.cur, b"", MsgKind.ACK, now)
        for warning in self.presence.tick(now):
            self._warn(WARN_PRESENCE, warning.member)
        self._tick_closing(now)
        self._tick_boundary(now)

    # ------------------------------------------------------------------
    # User-facing entry points

    def send_message(self, body: bytes | str) -> None:
        if isinstance(body, str):
            body = body.encode("utf-8")
        if self._left or self._closing:
            self._notice(MessageRejected(body, "session is closing"))
            return
        if not body:
            self._notice(MessageRejected(body, "empty message"))
            return
        if self.cur is None:
            # Solo: no channel round-trip, the message is accepted locally.
            mid = crypto.sha256(
                f"local:{self.own_id}:{len(self.log)}".encode("utf-8")
            )
            self.log.append((self.own_id, body))
            self._log_seen.add(mid)
            self._notice(MessageAccepted(self.own_id, body, mid))
            return
        self._send_data(self.cur, body, MsgKind.CONTENT, self.now)

    def propose(
        self,
        include: tuple[str, ...] | list[str] = (),
        exclude: tuple[str, ...] | list[str] = (),
        refresh: bool = False,
    ) -> bool:
        include, exclude = tuple(include), tuple(exclude)
        if self.cur is None:
            kind = OpKind.ESTABLISH
        elif refresh:
            kind = OpKind.REFRESH
        elif include and not exclude:
            kind = OpKind.INCLUDE
        elif exclude and not include:
            kind = OpKind.EXCLUDE
        else:
            raise ValueError("propose exactly one of include, exclude, refresh")
        kind_name = kind.name.lower()

        if self._left or self._closing or self._ousted_at is not None:
            self._notice(OperationRejected(kind_name, self.own_id))
            return False
        if (
            (self.greeting and not self.greeting.done)
            or self.server_order.in_progress
            or self._proposal is not None
        ):
            self._notice(OperationRejected(kind_name, self.own_id))
            return False
        if not self.in_channel:
            self._notice(OperationRejected(kind_name, self.own_id))
            return False
        # Everyone who is to share keys must be reachable in the room.
        needed = set(include) | {self.own_id}
        if kind is not OpKind.ESTABLISH:
            needed |= set(self.cur.members) - set(exclude)
        if not needed <= self.channel_members:
            self._notice(OperationRejected(kind_name, self.own_id))
            return False

        if kind is OpKind.ESTABLISH:
            prev_pf = self.rng.bytes(32)
            chain_hash = crypto.sha256(prev_pf)
            latest_pm: tuple[bytes, ...] = ()
        else:
            assert self.server_order.last_final is not None
            assert self.server_order.chain_hash is not None
            prev_pf = self.server_order.last_final
            chain_hash = self.server_order.chain_hash
            latest_pm = tuple(sorted(self.cur.transcript.frontier))
        try:
            proposal = build_initial(
                self.ctx, kind, self.cur.op_state if self.cur else None,
                include, exclude, prev_pf, chain_hash, latest_pm, self.now,
            )
        except (InvalidMembers, SelfExclusion, ProtocolViolation):
            self._notice(OperationRejected(kind_name, self.own_id))
            return False
        self._proposal = proposal
        self._proposal_at = self.now
        self._send_raw(proposal.framed)
        return True

    def shutdown(self) -> None:
        if self._left or self._closing:
            return
        self._closing = True
        if self.cur is None or len(self.cur.members) == 1 or not self.in_channel:
            self._request_leave()
            return
        self._fin_mid = self._send_data(self.cur, b"", MsgKind.FIN, self.now)
        self._fin_at = self.now

    # ------------------------------------------------------------------
    # Data path

    def _recv_data(self, sender: str, framed: str, now: int) -> None:
        pid = packet_id(framed)
        if sender == self.own_id:
            for sub in (self.cur, self.prev):
                if sub:
                    sub.await_echo.pop(pid, None)
        candidates = [sub.keys for sub in (self.cur, self.prev) if sub]
        if not candidates:
            return  # bystander: not established, nothing to decrypt with
        try:
            plain = verify_decrypt(candidates, framed, sender)
        except (Undecryptable, Malformed):
            if self._ousted_at is None and now >= self._undecryptable_grace:
                self._warn(WARN_UNDECRYPTABLE, f"data packet from {sender}")
            return
        # Route by which candidate decrypted, not by sid: a key refresh
        # keeps the sid, so sid alone cannot tell the subsessions apart.
        sub = self.cur if self.cur and plain.keys is self.cur.keys else self.prev
        assert sub is not None
        msg = Msg(
            mid=pid,
            author=sender,
            readers=frozenset(plain.keys.members),
            parents=frozenset(plain.parents),
            body=plain.body,
            kind=plain.kind,
        )
        result = sub.transcript.add(msg, now)
        if result.status is AddStatus.REJECTED:
            if (
                result.reason == "duplicate"
                and sender != self.own_id
                and plain.kind in (MsgKind.CONTENT, MsgKind.FIN)
            ):
                # A resend means the sender is still waiting for our ack.
                sub.acker.note_message_seen(now)
            return
        for accepted in result.accepted:
            self._message_accepted(sub, accepted, now)

    def _message_accepted(self, sub: _Subsession, msg: Msg, now: int) -> None:
        sub.monitor.credit(msg.author, set(sub.transcript.ancestors(msg.mid)))
        if msg.kind in (MsgKind.CONTENT, MsgKind.FIN):
            if msg.author != self.own_id:
                # Own messages were registered when they were sent.
                sub.monitor.register(msg.mid, msg.author, list(msg.readers), now)
                sub.acker.note_message_seen(now)
        if msg.kind is MsgKind.CONTENT and msg.mid not in self._log_seen:
            self._log_seen.add(msg.mid)
            self.log.append((msg.author, msg.body))
            self._notice(MessageAccepted(msg.author, msg.body, msg.mid))

    def _send_data(
        self, sub: _Subsession, body: bytes, kind: MsgKind, now: int
    ) -> bytes:
        parent_set = set(sub.transcript.frontier)
        if sub.last_own_mid is not None and sub.last_own_mid not in sub.transcript:
            # Our previous message has not echoed back through the channel
            # yet.  New messages must still extend our own line, so cite it
            # directly and drop whatever its ancestry already covers.
            parent_set -= sub.last_own_covered
            parent_set.add(sub.last_own_mid)
        parents = tuple(sorted(parent_set))
        framed = encrypt_message(sub.keys, parents, body, kind, self.rng)
        mid = packet_id(framed)
        self._sent[mid] = framed
        sub.await_echo[mid] = now
        if kind in (MsgKind.CONTENT, MsgKind.FIN):
            sub.monitor.register(mid, self.own_id, list(sub.keys.members), now)
        covered: set[bytes] = set()
        for parent in parents:
            covered.add(parent)
            if parent in sub.transcript:
                covered |= sub.transcript.ancestors(parent)
            else:
                covered |= sub.last_own_covered
        sub.last_own_mid = mid
        sub.last_own_covered = covered
        sub.monitor.credit(self.own_id, covered)
        sub.acker.note_own_send()
        self._send_raw(framed)
        return mid

    # ------------------------------------------------------------------
    # Greeting path

    def _recv_initial(self, fields, framed: str, now: int) -> None:
        pid = packet_id(framed)
        if pid in self._greet_seen:
            return
        self._greet_seen.add(pid)
        mine = self._proposal is not None and pid == self._proposal.packet_id
        kind_name = fields.kind.name.lower()

        if self.own_id not in fields.members:
            if (
                self.cur
                and self.own_id in self.cur.members
                and set(fields.members) < set(self.cur.members)
            ):
                if self.server_order.decide_initial(fields.prev_pf):
                    # We are being excluded: observe quietly until the kick,
                    # but record the accepted operation so any later rival
                    # initial (our own included) is judged against it.
                    self._ousted_at = now
                    for code in self.server_order.accept_initial(
                        framed, fields.prev_pf, fields.chain_hash,
                        opens_history=fields.kind is OpKind.ESTABLISH,
                    ):
                        self._warn(code, f"initial packet from {fields.source}")
                else:
                    # An excluding initial that lost the race: ignore it.
                    self.server_order.note_rejected()
            return
        if not set(fields.members) <= self.channel_members:
            # Operations may only span members present in the room.
            if mine:
                self._proposal = None
                self._notice(OperationRejected(kind_name, fields.source))
            return
        if not self.server_order.decide_initial(fields.prev_pf):
            self.server_order.note_rejected()
            if mine:
                self._proposal = None
                self._notice(OperationRejected(kind_name, fields.source))
            return

        for code in self.server_order.accept_initial(
            framed, fields.prev_pf, fields.chain_hash,
            opens_history=fields.kind is OpKind.ESTABLISH,
        ):
            self._warn(code, f"initial packet from {fields.source}")
        prior = self.cur.op_state if self.cur else None
        try:
            greeting = Greeting(
                self.ctx, fields, prior,
                self._proposal if mine else None,
                now, self.config.op_timeout,
            )
        except ProtocolViolation as exc:
            self.server_order.fail_operation()
            if self.cur is None:
                self.server_order = ServerOrder()
            if mine:
                self._proposal = None
            self._notice(OperationFailed(kind_name, fields.source, str(exc)))
            return
        self.greeting = greeting
        if mine:
            self._proposal = None
        self._notice(OperationStarted(kind_name, fields.source, fields.members))
        self._op_output(greeting.recv(fields, framed, now))

    def _recv_op_packet(self, fields, framed: str, now: int) -> None:
        pid = packet_id(framed)
        if pid in self._greet_seen:
            return
        self._greet_seen.add(pid)
        if self.greeting is None or self.greeting.done:
            return  # straggler of a finished or foreign operation
        if fields.members != self.greeting.members:
            # A follow-up of some rival operation that lost the race; a
            # fresh invitee answers an initial before learning it lost, and
            # that answer reaches everyone.
            return
        self._op_output(self.greeting.recv(fields, framed, now))

    def _op_output(self, out) -> None:
        for framed in out.send:
            self._send_raw(framed)
        if out.failed:
            self._op_failed(out.failed)
        elif out.result is not None:
            self._op_completed(out.result)

    def _op_failed(self, reason: str) -> None:
        greeting = self.greeting
        assert greeting is not None
        self.server_order.fail_operation()
        if self.cur is None:
            # Nothing was ever established, so no history binds us: return
            # to a genuinely fresh chain state for the next attempt.
            self.server_order = ServerOrder()
        self._notice(
            OperationFailed(greeting.kind.name.lower(), greeting.initiator, reason)
        )

    def _op_completed(self, result: GreetingResult) -> None:
        greeting = self.greeting
        assert greeting is not None
        self.server_order.note_final(result.final_packet)
        old = self.cur
        old_members = old.members if old else (self.own_id,)
        if old is not None:
            # Flush the implicit-ack debt of the closing subsession so its
            # transcript can reach full consistency.
            if old.acker.pending:
                self._send_data(old, b"", MsgKind.ACK, self.now)
            old.closed = True
        else:
            self._undecryptable_grace = self.now + self.config.defer_timeout
        self.prev = old
        self.cur = _Subsession(result.keys, result.op_state, self.config.policy)
        self.greeting = None
        self.presence.set_members(list(result.keys.members), self.now)
        self._pending_exclude &= set(result.keys.members)
        kind_name = result.kind.name.lower()
        self._notice(OperationSucceeded(kind_name, greeting.initiator))
        if result.keys.members != old_members:
            self._notice(MembershipChanged(result.keys.members, old_members))
        if result.kind is OpKind.EXCLUDE and greeting.initiator == self.own_id:
            for member in old_members:
                if member not in result.keys.members and member in self.channel_members:
                    self.actions.append(KickMember(member))

    # ------------------------------------------------------------------
    # Timers

    def _tick_greeting(self, now: int) -> None:
        if self.greeting and not self.greeting.done:
            reason = self.greeting.tick(now)
            if reason:
                self._warn(
                    WARN_OP_TIMEOUT,
                    f"{self.greeting.kind.name.lower()} "
                    f"by {self.greeting.initiator}",
                )
                self._op_failed(reason)
        if (
            self._proposal is not None
            and now - self._proposal_at >= self.config.op_timeout
        ):
            # Our initial packet never came back; give up on it.
            self._notice(
                OperationRejected(self._proposal.kind.name.lower(), self.own_id)
            )
            self._proposal = None

    def _tick_subsession(self, sub: _Subsession, now: int) -> None:
        for action in sub.monitor.tick(now):
            if isinstance(action, FullAckWarning):
                self._warn(
                    WARN_FULL_ACK,
                    f"message by {action.author} unacked by "
                    + ", ".join(action.missing),
                )
            elif isinstance(action, ResendRequest):
                framed = self._sent.get(action.mid)
                if framed is not None:
                    self._send_raw(framed)
        for mid, last in list(sub.await_echo.items()):
            if now - last >= self.config.policy.resend_interval:
                framed = self._sent.get(mid)
                if framed is None:
                    del sub.await_echo[mid]
                else:
                    sub.await_echo[mid] = now
                    self._send_raw(framed)
        if sub.acker.tick(now):
            self._send_data(sub, b"", MsgKind.ACK, now)
        for msg in sub.transcript.deferred_overdue(now, self.config.defer_timeout):
            if msg.mid not in sub.warned_deferred:
                sub.warned_deferred.add(msg.mid)
                self._warn(WARN_BUFFERED, f"message by {msg.author} waits for parent")

    def _tick_closing(self, now: int) -> None:
        if not self._closing or self._left or self._leave_sent:
            return
        if self._fin_mid is None:
            return
        assert self.cur is not None
        echoed = self._fin_mid in self.cur.transcript
        if echoed and self.cur.monitor.fully_acked(self._fin_mid):
            self._request_leave()
        elif now - self._fin_at >= self.config.op_timeout:
            if not self._warned_shutdown:
                self._warned_shutdown = True
                unacked = self.cur.monitor.unacked()
                names = sorted({m for _, _, missing in unacked for m in missing})
                self._warn(WARN_SHUTDOWN, "no ack from " + ", ".join(names))
            self._request_leave()

    def _tick_boundary(self, now: int) -> None:
        """At operation boundaries, sweep members who left the room."""
        if (
            self._left
            or self._closing
            or self._ousted_at is not None
            or self.cur is None
        ):
            return
        if (self.greeting and not self.greeting.done) or self.server_order.in_progress:
            return
        if self._proposal is not None:
            return
        stale = self._pending_exclude & set(self.cur.members)
        self._pending_exclude = stale
        if not stale:
            return
        # One deterministic proposer: the first remaining member still present.
        for member in self.cur.members:
            if member in self.channel_members:
                if member == self.own_id:
                    self.propose(exclude=tuple(sorted(stale)))
                return

    # ------------------------------------------------------------------
    # Plumbing

    def _send_raw(self, framed: str) -> None:
        self.actions.append(SendPacket(framed))
        self.heartbeat.note_own_send(self.now)

    def _request_leave(self) -> None:
        if self.in_channel:
            if not self._leave_sent:
                self._leave_sent = True
                self.actions.append(LeaveChannel())
        else:
            self._left = True

    def _reset_to_solo(self) -> None:
        old_members = self.members
        # Every started or proposed operation deserves a terminal notice,
        # even when the room throws us out before it resolves.
        if self.greeting and not self.greeting.done:
            self._notice(
                OperationFailed(
                    self.greeting.kind.name.lower(),
                    self.greeting.initiator,
                    "removed from channel mid-operation",
                )
            )
        if self._proposal is not None:
            self._notice(
                OperationRejected(self._proposal.kind.name.lower(), self.own_id)
            )
        self.in_channel = False
        self.channel_members = set()
        self.cur = None
        self.prev = None
        self.greeting = None
        self._proposal = None
        self._pending_exclude = set()
        self._ousted_at = None
        # A rejoin starts from scratch: no operation chain carries across
        # a channel departure.
        self.server_order = ServerOrder()
        self.presence = PresenceTracker(self.own_id, self.config.policy)
        if self._closing:
            self._left = True
        if old_members != (self.own_id,):
            self._notice(MembershipChanged((self.own_id,), old_members))
