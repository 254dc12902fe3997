"""Causal-order transcript: an append-only DAG of delivered messages.

Each message names its parents by packet hash; the transcript accepts a
message only once all parents are present (otherwise it parks it in a
deferral queue and retries when the missing parent arrives), and rejects
messages that break the causal rules:

* parents must form an anti-chain (no parent may be an ancestor of another),
* one author's messages must form a single line (each new message must
  descend from that author's previous one),
* duplicate ids are rejected.

The frontier (messages without accepted children) supplies the parent set
for the next message we send. A linear extension of the DAG, filtered to
content messages, yields the displayed message log; concurrent messages are
ordered by local arrival, so different members may display concurrent
messages differently but never violate causality.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class MsgKind(enum.Enum):
    CONTENT = "content"
    ACK = "ack"
    FIN = "fin"


class AddStatus(enum.Enum):
    ACCEPTED = "accepted"
    DEFERRED = "deferred"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Msg:
    mid: bytes
    author: str
    readers: frozenset[str]
    parents: frozenset[bytes]
    body: bytes
    kind: MsgKind


@dataclass
class AddResult:
    status: AddStatus
    #: Messages newly accepted by this call, in acceptance order; includes
    #: previously deferred messages that the new arrival unblocked.
    accepted: list[Msg] = field(default_factory=list)
    reason: str | None = None


class Transcript:
    def __init__(self) -> None:
        self._nodes: dict[bytes, Msg] = {}
        self._arrival: dict[bytes, int] = {}
        self._accepted_at: dict[bytes, int] = {}
        self._children: dict[bytes, list[bytes]] = {}
        self._last_by_author: dict[str, bytes] = {}
        self._frontier: set[bytes] = set()
        self._deferred: dict[bytes, tuple[Msg, int]] = {}
        self._waiting_on: dict[bytes, list[bytes]] = {}
        self._ancestor_cache: dict[bytes, frozenset[bytes]] = {}

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, mid: bytes) -> bool:
        return mid in self._nodes

    def get(self, mid: bytes) -> Msg:
        return self._nodes[mid]

    def messages(self) -> list[Msg]:
        """All accepted messages in arrival order."""
        order = sorted(self._nodes, key=lambda m: (self._arrival[m], m))
        return [self._nodes[m] for m in order]

    @property
    def frontier(self) -> frozenset[bytes]:
        return frozenset(self._frontier)

    def last_of_author(self, author: str) -> bytes | None:
        return self._last_by_author.get(author)

    def ancestors(self, mid: bytes) -> frozenset[bytes]:
        """Every id reachable through parent links (not including `mid`)."""
        cached = self._ancestor_cache.get(mid)
        if cached is not None:
            return cached
        msg = self._nodes[mid]
        out: set[bytes] = set()
        for parent in msg.parents:
            out.add(parent)
            out |= self.ancestors(parent)
        result = frozenset(out)
        self._ancestor_cache[mid] = result
        return result

    def is_ancestor(self, a: bytes, b: bytes) -> bool:
        return a in self.ancestors(b)

    def accepted_at(self, mid: bytes) -> int:
        return self._accepted_at[mid]

    def deferred_count(self) -> int:
        return len(self._deferred)

    def deferred_overdue(self, now: int, timeout: int) -> list[Msg]:
        """Deferred messages that have been parked longer than `timeout`."""
        return [
            msg
            for msg, since in self._deferred.values()
            if now - since >= timeout
        ]

    # -- mutation -----------------------------------------------------------

    def add(self, msg: Msg, now: int = 0) -> AddResult:
        if msg.mid in self._nodes or msg.mid in self._deferred:
            return AddResult(AddStatus.REJECTED, reason="duplicate")

        missing = [p for p in msg.parents if p not in self._nodes]
        if missing:
            self._deferred[msg.mid] = (msg, now)
            for parent in missing:
                self._waiting_on.setdefault(parent, []).append(msg.mid)
            return AddResult(AddStatus.DEFERRED)

        reason = self._check_rules(msg)
        if reason is not None:
            return AddResult(AddStatus.REJECTED, reason=reason)

        accepted = [msg]
        self._accept(msg, now)
        # A newly present parent may unblock deferred arrivals, recursively.
        accepted.extend(self._retry_waiters(msg.mid, now))
        return AddResult(AddStatus.ACCEPTED, accepted=accepted)

    def _check_rules(self, msg: Msg) -> str | None:
        parents = list(msg.parents)
        for i, a in enumerate(parents):
            for b in parents[i + 1 :]:
                if self.is_ancestor(a, b) or self.is_ancestor(b, a):
                    return "parents are not an anti-chain"
        last = self._last_by_author.get(msg.author)
        if last is not None:
            ancestors = set()
            for parent in msg.parents:
                ancestors.add(parent)
                ancestors |= self.ancestors(parent)
            if last not in ancestors:
                return "author fork: message does not descend from author's last"
        return None

    def _accept(self, msg: Msg, now: int) -> None:
        self._nodes[msg.mid] = msg
        index = len(self._arrival)
        self._arrival[msg.mid] = index
        self._accepted_at[msg.mid] = now
        for parent in msg.parents:
            self._children.setdefault(parent, []).append(msg.mid)
            self._frontier.discard(parent)
        self._frontier.add(msg.mid)
        self._last_by_author[msg.author] = msg.mid

    def _retry_waiters(self, mid: bytes, now: int) -> list[Msg]:
        accepted: list[Msg] = []
        waiters = self._waiting_on.pop(mid, [])
        for waiting_mid in waiters:
            entry = self._deferred.get(waiting_mid)
            if entry is None:
                continue
            waiting_msg, since = entry
            if any(p not in self._nodes for p in waiting_msg.parents):
                continue  # still blocked on another parent
            del self._deferred[waiting_mid]
            reason = self._check_rules(waiting_msg)
            if reason is not None:
                continue  # silently drop a deferred message that turned bad
            self._accept(waiting_msg, since)
            accepted.append(waiting_msg)
            accepted.extend(self._retry_waiters(waiting_msg.mid, now))
        return accepted

    # -- debug export -------------------------------------------------------

    def to_dot(self, title: str = "transcript") -> str:
        lines = [f'digraph "{title}" {{', "  rankdir=BT;"]
        shapes = {MsgKind.CONTENT: "box", MsgKind.ACK: "ellipse", MsgKind.FIN: "octagon"}
        for msg in self.messages():
            short = msg.mid.hex()[:8]
            label = f"{msg.author}\\n{short}"
            if msg.kind is MsgKind.CONTENT and msg.body:
                body = msg.body[:24].decode("utf-8", "replace")
                label += f"\\n{body}"
            lines.append(
                f'  "{msg.mid.hex()}" [label="{label}", shape={shapes[msg.kind]}];'
            )
        for msg in self.messages():
            for parent in sorted(msg.parents):
                lines.append(f'  "{msg.mid.hex()}" -> "{parent.hex()}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


class MessageLog:
    """Linearized content messages across consecutive subsessions."""

    def __init__(self) -> None:
        self.entries: list[tuple[bytes, Msg]] = []
        self._seen: set[bytes] = set()

    def append_subsession(self, sid: bytes, transcript: Transcript) -> None:
        """Append a subsession's content messages in linear-extension order.

        Arrival order is already a linear extension of the causal order
        (a message is only accepted after its parents); ties between
        concurrent messages fall back to the id.
        """
        for msg in transcript.messages():
            if msg.kind is MsgKind.CONTENT and msg.mid not in self._seen:
                self._seen.add(msg.mid)
                self.entries.append((sid, msg))

    def bodies(self) -> list[bytes]:
        return [msg.body for _, msg in self.entries]
