"""Reliability and consistency timers.

Every content-bearing message demands an acknowledgement from each other
reader. Acks are usually implicit: any later message by a member whose
ancestry reaches message m counts as m's ack by that member. The monitor
here tracks which acks are still outstanding, warns the user once per
message when they take too long, and paces resends of our own unacked
messages. Companion schedulers batch explicit acks for quiet readers,
emit periodic heartbeats, and flag members whose silence outlives the
heartbeat cadence.

Time is the session's tick counter, not wall-clock; everything here is
deterministic given the same call sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

WARN_FULL_ACK = "full-ack-timeout"
WARN_PRESENCE = "presence-expired"


@dataclass(frozen=True)
class FlowControlPolicy:
    """Timer tuning, in session ticks. ``heartbeat_interval=None`` disables
    heartbeats and with them presence tracking."""

    ack_grace: int = 4
    full_ack_timeout: int = 16
    resend_interval: int = 8
    heartbeat_interval: int | None = 32


@dataclass(frozen=True)
class FullAckWarning:
    code = WARN_FULL_ACK
    mid: bytes
    author: str
    missing: tuple[str, ...]


@dataclass(frozen=True)
class PresenceWarning:
    code = WARN_PRESENCE
    member: str


@dataclass(frozen=True)
class ResendRequest:
    mid: bytes


@dataclass
class _Expectation:
    author: str
    remaining: set[str]
    registered_at: int
    warned: bool = False
    last_send: int = 0


class ConsistencyMonitor:
    """Tracks outstanding acknowledgements for content and close messages."""

    def __init__(self, self_id: str, policy: FlowControlPolicy):
        self.self_id = self_id
        self.policy = policy
        self._pending: dict[bytes, _Expectation] = {}

    def register(self, mid: bytes, author: str, readers: list[str], now: int) -> None:
        remaining = set(readers) - {author}
        if not remaining:
            return
        self._pending[mid] = _Expectation(author, remaining, now, last_send=now)

    def credit(self, member: str, ancestors: set[bytes]) -> None:
        """`member` has (transitively) acknowledged every listed message."""
        for mid in list(ancestors & self._pending.keys()):
            exp = self._pending[mid]
            exp.remaining.discard(member)
            if not exp.remaining:
                del self._pending[mid]

    def note_departed(self, member: str) -> None:
        """A member left the channel; stop expecting anything from them."""
        for mid, exp in list(self._pending.items()):
            exp.remaining.discard(member)
            if not exp.remaining:
                del self._pending[mid]

    def tick(self, now: int) -> list[FullAckWarning | ResendRequest]:
        actions: list[FullAckWarning | ResendRequest] = []
        for mid, exp in self._pending.items():
            if not exp.warned:
                if now - exp.registered_at >= self.policy.full_ack_timeout:
                    exp.warned = True
                    exp.last_send = now
                    actions.append(
                        FullAckWarning(mid, exp.author, tuple(sorted(exp.remaining)))
                    )
            elif exp.author == self.self_id:
                if now - exp.last_send >= self.policy.resend_interval:
                    exp.last_send = now
                    actions.append(ResendRequest(mid))
        return actions

    def fully_acked(self, mid: bytes) -> bool:
        return mid not in self._pending

    @property
    def idle(self) -> bool:
        return not self._pending

    def unacked(self) -> list[tuple[bytes, str, tuple[str, ...]]]:
        return [
            (mid, exp.author, tuple(sorted(exp.remaining)))
            for mid, exp in self._pending.items()
        ]


class AckScheduler:
    """Batches explicit acks: one ack with frontier parents covers every
    message seen since our last own send."""

    def __init__(self, policy: FlowControlPolicy):
        self.policy = policy
        self._due: int | None = None

    def note_message_seen(self, now: int) -> None:
        if self._due is None:
            self._due = now + self.policy.ack_grace

    def note_own_send(self) -> None:
        self._due = None

    @property
    def pending(self) -> bool:
        return self._due is not None

    def tick(self, now: int) -> bool:
        if self._due is not None and now >= self._due:
            self._due = None
            return True
        return False


class HeartbeatScheduler:
    """Emits a liveness signal when we have been silent for a full interval."""

    def __init__(self, policy: FlowControlPolicy, now: int = 0):
        self.interval = policy.heartbeat_interval
        self._last_send = now

    def note_own_send(self, now: int) -> None:
        self._last_send = now

    def tick(self, now: int) -> bool:
        if self.interval is None:
            return False
        if now - self._last_send >= self.interval:
            self._last_send = now
            return True
        return False


class PresenceTracker:
    """Warns once when a member stays silent past twice the heartbeat
    interval; anything they send clears the flag."""

    def __init__(self, self_id: str, policy: FlowControlPolicy):
        self.self_id = self_id
        self.expiry = (
            2 * policy.heartbeat_interval
            if policy.heartbeat_interval is not None
            else None
        )
        self._last_seen: dict[str, int] = {}
        self._warned: set[str] = set()

    def set_members(self, members: list[str], now: int) -> None:
        for member in members:
            if member != self.self_id:
                self._last_seen.setdefault(member, now)
        for member in list(self._last_seen):
            if member not in members:
                self.note_departed(member)

    def note_activity(self, member: str, now: int) -> None:
        if member in self._last_seen:
            self._last_seen[member] = now
            self._warned.discard(member)

    def note_departed(self, member: str) -> None:
        self._last_seen.pop(member, None)
        self._warned.discard(member)

    def tick(self, now: int) -> list[PresenceWarning]:
        if self.expiry is None:
            return []
        warnings = []
        for member in sorted(self._last_seen):
            if member in self._warned:
                continue
            if now - self._last_seen[member] >= self.expiry:
                self._warned.add(member)
                warnings.append(PresenceWarning(member))
        return warnings
