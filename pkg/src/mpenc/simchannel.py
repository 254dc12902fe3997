"""Deterministic broadcast-channel simulation with fault injection.

Models the single sequencer the protocol assumes: every packet a member
broadcasts is queued at the server, assigned a global sequence number, and
relayed to everyone currently in the room -- including its sender -- in
that order. Room membership changes (joins, leaves, kicks) travel through
the same ordered stream.

Faults are scripted, not random: a fault spec matches the n-th packet of a
given kind from a given sender at the moment it is broadcast and then
drops, delays, duplicates or tampers with it. Given identical sessions,
scripts and fault lists, every run produces byte-identical traffic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .codec import Record, RecordType, frame, unframe
from .message_security import is_data_packet
from .session import KickMember, LeaveChannel, SendPacket, Session


@dataclass(frozen=True)
class FaultSpec:
    """One scripted channel misbehaviour.

    `sender` of None matches anyone; `kind` is "greeting", "data" or "any";
    `occurrence` is 1-based among the packets this spec matches. For
    tampering, `record` names the record type whose value gets `bit`
    flipped (default: the packet's last record). Specs are immutable so a
    scenario can be replayed; per-run firing state lives in the channel.
    """

    action: str
    sender: str | None = None
    kind: str = "any"
    occurrence: int = 1
    delay: int = 0
    record: str | None = None
    bit: int = 0

    def __post_init__(self) -> None:
        if self.action not in ("drop", "delay", "tamper", "duplicate"):
            raise ValueError(f"unknown fault action {self.action!r}")

    def matches(self, sender: str, kind: str) -> bool:
        if self.sender is not None and self.sender != sender:
            return False
        return self.kind in ("any", kind)


def _packet_kind(framed: str) -> str:
    try:
        records = unframe(framed)
    except Exception:
        return "other"
    if is_data_packet(records):
        return "data"
    if records and records[0].rtype == RecordType.MESSAGE_SIGNATURE:
        return "greeting"
    return "other"


def _tamper(framed: str, spec: FaultSpec) -> str:
    records = unframe(framed)
    index = len(records) - 1
    if spec.record is not None:
        rtype = RecordType[spec.record]
        matches = [i for i, r in enumerate(records) if r.rtype == rtype]
        if matches:
            index = matches[0]
    value = bytearray(records[index].value)
    if not value:
        return framed
    bit = spec.bit % (len(value) * 8)
    value[bit // 8] ^= 1 << (bit % 8)
    records[index] = Record(records[index].rtype, bytes(value))
    return frame(records)


class SimChannel:
    """The sequencer, the room roster, and the shared clock."""

    def __init__(self, faults: list[FaultSpec] | None = None):
        self.sessions: dict[str, Session] = {}
        self.present: set[str] = set()
        self.now = 0
        self.faults = list(faults or [])
        self._fault_seen = [0] * len(self.faults)
        self._fault_spent = [False] * len(self.faults)
        self.delivered = {"greeting": 0, "data": 0, "other": 0}
        self._queue: list[tuple[int, int, tuple]] = []
        self._seq = 0

    # -- setup --------------------------------------------------------------

    def add_session(self, session: Session) -> None:
        self.sessions[session.own_id] = session

    # -- scripted room control (applied immediately) ------------------------

    def join(self, member: str) -> None:
        if member in self.present:
            return
        self.present.add(member)
        self.sessions[member].channel_joined(sorted(self.present), self.now)
        for other in sorted(self.present - {member}):
            self.sessions[other].channel_event("join", member, self.now)

    def part(self, member: str, how: str = "leave") -> None:
        if member not in self.present:
            return
        self.present.discard(member)
        for other in sorted(self.present):
            self.sessions[other].channel_event(how, member, self.now)
        self.sessions[member].channel_event(how, member, self.now)

    # -- sequencing ---------------------------------------------------------

    def _push(self, at: int, event: tuple) -> None:
        heapq.heappush(self._queue, (at, self._seq, event))
        self._seq += 1

    def broadcast(self, sender: str, framed: str) -> None:
        kind = _packet_kind(framed)
        at = self.now + 1
        copies = 1
        dropped = False
        # Every spec counts every matching packet, even when an earlier
        # spec already dropped this one; occurrences are positions in the
        # sender's traffic, not in what survives the other faults.
        for i, spec in enumerate(self.faults):
            if self._fault_spent[i] or not spec.matches(sender, kind):
                continue
            self._fault_seen[i] += 1
            if self._fault_seen[i] != spec.occurrence:
                continue
            self._fault_spent[i] = True
            if spec.action == "drop":
                dropped = True
            elif spec.action == "delay":
                at += spec.delay
            elif spec.action == "tamper":
                framed = _tamper(framed, spec)
            elif spec.action == "duplicate":
                copies += 1
        if dropped:
            return
        for _ in range(copies):
            self._push(at, ("packet", sender, framed))

    def step(self) -> None:
        """One tick: deliver everything due, then let every session act."""
        self.now += 1
        while self._queue and self._queue[0][0] <= self.now:
            _, _, event = heapq.heappop(self._queue)
            self._dispatch(event)
        for member in sorted(self.sessions):
            self.sessions[member].tick(self.now)
        for member in sorted(self.sessions):
            for action in self.sessions[member].drain_actions():
                if isinstance(action, SendPacket):
                    self.broadcast(member, action.framed)
                elif isinstance(action, LeaveChannel):
                    self._push(self.now + 1, ("leave", member))
                elif isinstance(action, KickMember):
                    self._push(self.now + 1, ("kick", action.member))

    def run(self, ticks: int) -> None:
        for _ in range(ticks):
            self.step()

    def _dispatch(self, event: tuple) -> None:
        if event[0] == "packet":
            _, sender, framed = event
            self.delivered[_packet_kind(framed)] += 1
            for member in sorted(self.present):
                self.sessions[member].receive(sender, framed, self.now)
        elif event[0] == "leave":
            self.part(event[1], "leave")
        elif event[0] == "kick":
            self.part(event[1], "kick")
