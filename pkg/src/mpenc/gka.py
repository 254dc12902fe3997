"""Group Diffie-Hellman key agreement (CLIQUES-style) over x25519.

The group secret is the base point multiplied by every member's private
contribution. It is negotiated with an upflow phase (a chain of directed
messages, each member mixing its contribution into a growing list of
intermediate keys) and a downflow broadcast of the finished list, in which
the i-th intermediate key lacks exactly the i-th member's contributions, so
each member recovers the same secret by applying its own contributions to
its own slot.

Membership changes reuse the structure: an include extends the list and runs
a short upflow through the new members only; exclude and refresh are pure
downflow operations where the initiator mixes a fresh contribution into
every slot but its own (and, for exclude, drops the departing members'
slots). A member's private contributions are kept as an ordered list and
applied one at a time -- x25519 clamps scalars on use, so condensing the
list into a single product would compute the wrong point.

State values returned here are fresh copies; callers keep the old state
around until an operation commits, which makes failed operations free to
abandon.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import crypto
from .errors import InvalidMembers, Malformed, NotMyTurn, SelfExclusion

#: First element of a fresh upflow: the unmodified base point, the
#: "intermediate key" lacking the initiator's contribution.
BASE = crypto.BASE_POINT


@dataclass(frozen=True)
class Contribution:
    scalar: bytes
    created_at: int


@dataclass
class GkaState:
    """One member's view of the agreement."""

    self_id: str
    members: list[str] = field(default_factory=list)
    own_contribs: list[Contribution] = field(default_factory=list)
    int_keys: list[bytes] = field(default_factory=list)
    group_secret: bytes | None = None

    @property
    def complete(self) -> bool:
        return self.group_secret is not None

    def clone(self) -> GkaState:
        return replace(
            self,
            members=list(self.members),
            own_contribs=list(self.own_contribs),
            int_keys=list(self.int_keys),
        )


@dataclass(frozen=True)
class GkaPayload:
    """Key material carried by one protocol message.

    ``dest`` names the next member of an upflow chain; None means a
    downflow broadcast of the finished intermediate-key list.
    """

    members: tuple[str, ...]
    int_keys: tuple[bytes, ...]
    dest: str | None


def _apply_own(state: GkaState, point: bytes) -> bytes:
    # One multiplication per stored contribution, oldest first.
    for contrib in state.own_contribs:
        point = crypto.dh_apply(contrib.scalar, point)
    return point


def _fresh(state: GkaState, rng: crypto.Rng, now: int) -> bytes:
    scalar = crypto.dh_scalar(rng)
    state.own_contribs.append(Contribution(scalar, now))
    return scalar


def ika_initiate(
    self_id: str, members: list[str], rng: crypto.Rng, now: int
) -> tuple[GkaState, GkaPayload]:
    """Start initial key agreement for `members`; the caller must be first."""
    if len(set(members)) != len(members) or not members:
        raise InvalidMembers("member list must be non-empty and duplicate-free")
    if members[0] != self_id:
        raise InvalidMembers("initiator must be the first listed member")
    state = GkaState(self_id=self_id, members=list(members))
    scalar = _fresh(state, rng, now)
    keys = [BASE, crypto.dh_base(scalar)]
    if len(members) == 1:
        state.group_secret = keys[-1]
        state.int_keys = keys[:-1]
        return state, GkaPayload(tuple(members), tuple(state.int_keys), None)
    return state, GkaPayload(tuple(members), tuple(keys), members[1])


def upflow_process(
    self_id: str, payload: GkaPayload, rng: crypto.Rng, now: int
) -> tuple[GkaState, GkaPayload]:
    """Mix a fresh contribution into an upflow addressed to us.

    Returns the successor payload: the next hop of the chain, or the
    downflow broadcast if we are the final member (in which case the
    returned state already holds the group secret).
    """
    members = list(payload.members)
    if self_id not in members:
        raise NotMyTurn(f"{self_id} is not in the member list")
    position = members.index(self_id) + 1
    if len(payload.int_keys) != position:
        raise NotMyTurn(
            f"expected {position} intermediate keys for position {position}, "
            f"got {len(payload.int_keys)}"
        )
    state = GkaState(self_id=self_id, members=members)
    scalar = _fresh(state, rng, now)
    init, cardinal = list(payload.int_keys[:-1]), payload.int_keys[-1]
    keys = [crypto.dh_apply(scalar, k) for k in init]
    keys.append(cardinal)
    keys.append(crypto.dh_apply(scalar, cardinal))
    if position == len(members):
        state.group_secret = keys[-1]
        state.int_keys = keys[:-1]
        return state, GkaPayload(tuple(members), tuple(state.int_keys), None)
    return state, GkaPayload(tuple(members), tuple(keys), members[position])


def downflow_compute(state: GkaState, payload: GkaPayload) -> GkaState:
    """Recover the group secret from the broadcast intermediate-key list."""
    members = list(payload.members)
    if state.self_id not in members:
        raise InvalidMembers(f"{state.self_id} is not in the downflow membership")
    if len(payload.int_keys) != len(members):
        raise Malformed(
            f"downflow carries {len(payload.int_keys)} keys for {len(members)} members"
        )
    new = state.clone()
    new.members = members
    new.int_keys = list(payload.int_keys)
    own_slot = new.int_keys[members.index(state.self_id)]
    new.group_secret = _apply_own(new, own_slot)
    return new


def include_initiate(
    state: GkaState, new_members: list[str], rng: crypto.Rng, now: int
) -> tuple[GkaState, GkaPayload]:
    """Extend a completed agreement with new members (upflow through them).

    The old group secret seeds the new cardinal key; it never travels
    unmasked because the initiator's fresh contribution is mixed into every
    slot except its own before the payload leaves.
    """
    if not state.complete:
        raise Malformed("cannot include into an incomplete agreement")
    if not new_members or set(new_members) & set(state.members):
        raise InvalidMembers("new members must be non-empty and disjoint")
    if len(set(new_members)) != len(new_members):
        raise InvalidMembers("duplicate new members")
    new = state.clone()
    own_idx = new.members.index(new.self_id)
    extended = new.int_keys + [new.group_secret]
    scalar = _fresh(new, rng, now)
    keys = [
        k if i == own_idx else crypto.dh_apply(scalar, k)
        for i, k in enumerate(extended)
    ]
    members = new.members + list(new_members)
    new.members = members
    new.int_keys = []
    new.group_secret = None
    return new, GkaPayload(tuple(members), tuple(keys), new_members[0])


def exclude_initiate(
    state: GkaState, departing: list[str], rng: crypto.Rng, now: int
) -> tuple[GkaState, GkaPayload]:
    """Drop members and lock them out with a fresh contribution (downflow only)."""
    if not state.complete:
        raise Malformed("cannot exclude from an incomplete agreement")
    departing_set = set(departing)
    if not departing_set or not departing_set <= set(state.members):
        raise InvalidMembers("departing members must be a non-empty subset")
    if state.self_id in departing_set:
        raise SelfExclusion("a member cannot exclude itself")
    new = state.clone()
    own_idx = new.members.index(new.self_id)
    scalar = _fresh(new, rng, now)
    keys = [
        k if i == own_idx else crypto.dh_apply(scalar, k)
        for i, k in enumerate(new.int_keys)
        if new.members[i] not in departing_set
    ]
    members = [m for m in new.members if m not in departing_set]
    new.members = members
    new.int_keys = keys
    new.group_secret = _apply_own(new, keys[members.index(new.self_id)])
    return new, GkaPayload(tuple(members), tuple(keys), None)


def refresh_initiate(
    state: GkaState, rng: crypto.Rng, now: int
) -> tuple[GkaState, GkaPayload]:
    """Mix a fresh contribution into every other slot, renewing the secret."""
    if not state.complete:
        raise Malformed("cannot refresh an incomplete agreement")
    new = state.clone()
    own_idx = new.members.index(new.self_id)
    scalar = _fresh(new, rng, now)
    keys = [
        k if i == own_idx else crypto.dh_apply(scalar, k)
        for i, k in enumerate(new.int_keys)
    ]
    new.int_keys = keys
    new.group_secret = _apply_own(new, keys[own_idx])
    return new, GkaPayload(tuple(new.members), tuple(keys), None)
