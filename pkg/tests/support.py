"""Shared helpers for driving protocol modules in tests."""

from __future__ import annotations

import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "oracles"))

from x25519_ref import contributions_product_point  # noqa: E402

from mpenc import gka  # noqa: E402
from mpenc.crypto import Rng  # noqa: E402


def random_causal_history(n_msgs: int, authors: list[str], seed: int,
                          ack_ratio: float = 0.25) -> list:
    """Generate an honestly-authored causal message history.

    Simulates authors whose deliveries lag randomly behind the global
    order, so concurrent messages appear naturally while every message
    still respects the anti-chain and author-line rules. Returns messages
    in one valid delivery order (creation order).
    """
    import hashlib

    from mpenc.transcript import Msg, MsgKind, Transcript

    rand = random.Random(seed)
    readers = frozenset(authors)
    views = {a: Transcript() for a in authors}
    pointers = {a: 0 for a in authors}
    history: list[Msg] = []

    for i in range(n_msgs):
        author = rand.choice(authors)
        view = views[author]
        # Catch this author up over a random portion of the backlog.
        while pointers[author] < len(history) and rand.random() < 0.7:
            view.add(history[pointers[author]])
            pointers[author] += 1
        kind = MsgKind.ACK if rand.random() < ack_ratio else MsgKind.CONTENT
        body = f"m{i} from {author}".encode() if kind is MsgKind.CONTENT else b""
        mid = hashlib.sha256(f"history:{seed}:{i}".encode()).digest()
        msg = Msg(mid, author, readers, view.frontier, body, kind)
        history.append(msg)
        view.add(msg)  # the author sees its own message at once; the
        # catch-up loop later skips it as a duplicate
    return history


class GkaRun:
    """Honest, in-memory execution of GKA operations for a set of members.

    Tracks every contribution ever mixed into the key structure so the
    resulting secret can be checked against the scalar-product oracle.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.rand = random.Random(seed)
        self.states: dict[str, gka.GkaState] = {}
        self.all_scalars: list[bytes] = []
        self.now = 0

    def _rng(self, member: str) -> Rng:
        return Rng(f"gka-run:{self.seed}:{member}:{self.now}")

    def _note(self, state: gka.GkaState) -> None:
        self.all_scalars.append(state.own_contribs[-1].scalar)

    def _run_upflow(self, payload: gka.GkaPayload) -> None:
        last = None
        while payload.dest is not None:
            member = payload.dest
            state, payload = gka.upflow_process(member, payload, self._rng(member), self.now)
            self.states[member] = state
            self._note(state)
            last = member
        for member in payload.members:
            # Everyone but the downflow's author recomputes from the broadcast;
            # carried-over members still hold the previous secret at this point.
            if member != last:
                self.states[member] = gka.downflow_compute(self.states[member], payload)

    def establish(self, members: list[str]) -> None:
        self.now += 1
        initiator = members[0]
        state, payload = gka.ika_initiate(initiator, members, self._rng(initiator), self.now)
        self.states = {initiator: state}
        self._note(state)
        self._run_upflow(payload)

    def include(self, initiator: str, new_members: list[str]) -> None:
        self.now += 1
        state, payload = gka.include_initiate(
            self.states[initiator], new_members, self._rng(initiator), self.now
        )
        self.states[initiator] = state
        self._note(state)
        self._run_upflow(payload)

    def exclude(self, initiator: str, departing: list[str]) -> None:
        self.now += 1
        state, payload = gka.exclude_initiate(
            self.states[initiator], departing, self._rng(initiator), self.now
        )
        self.states[initiator] = state
        self._note(state)
        for member in departing:
            del self.states[member]
        for member in payload.members:
            if member != initiator:
                self.states[member] = gka.downflow_compute(self.states[member], payload)

    def refresh(self, initiator: str) -> None:
        self.now += 1
        state, payload = gka.refresh_initiate(
            self.states[initiator], self._rng(initiator), self.now
        )
        self.states[initiator] = state
        self._note(state)
        for member in payload.members:
            if member != initiator:
                self.states[member] = gka.downflow_compute(self.states[member], payload)

    @property
    def members(self) -> list[str]:
        return sorted(self.states)

    def check_agreement(self) -> bytes:
        """All members share one secret, and it matches the oracle."""
        secrets = {m: s.group_secret for m, s in self.states.items()}
        assert all(s is not None for s in secrets.values()), secrets
        distinct = set(secrets.values())
        assert len(distinct) == 1, f"members disagree: { {m: s.hex()[:16] for m, s in secrets.items()} }"
        secret = distinct.pop()
        oracle = contributions_product_point(self.all_scalars)
        assert secret == oracle, f"protocol {secret.hex()} != oracle {oracle.hex()}"
        return secret

    def random_op(self, pool: list[str], max_n: int = 8) -> str:
        """Apply one random membership operation; returns a description."""
        current = self.members
        absent = [m for m in pool if m not in self.states]
        choices = ["refresh"]
        if absent and len(current) < max_n:
            choices.append("include")
        if len(current) > 1:
            choices.append("exclude")
        op = self.rand.choice(choices)
        initiator = self.rand.choice(current)
        if op == "include":
            count = self.rand.randrange(1, min(len(absent), max_n - len(current)) + 1)
            joining = self.rand.sample(absent, count)
            self.include(initiator, joining)
            return f"include {joining} by {initiator}"
        if op == "exclude":
            others = [m for m in current if m != initiator]
            count = self.rand.randrange(1, len(others) + 1)
            departing = self.rand.sample(others, count)
            self.exclude(initiator, departing)
            return f"exclude {departing} by {initiator}"
        self.refresh(initiator)
        return f"refresh by {initiator}"
