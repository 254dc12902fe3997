"""Authenticated signature key exchange.

Runs alongside the group DH agreement: each member contributes a fresh
32-byte nonce and an ephemeral ed25519 key over the same upflow/downflow
message flow. The session id binds the full membership and every nonce;
each member then signs an authenticator over its own contributions and the
sid with its long-term identity key, and a member considers the exchange
complete once every other member's session signature has verified. Data
messages are later signed only with the ephemeral keys, which keeps them
deniable: the identity keys vouch for the ephemeral keys, not for any
message content.

Membership changes reuse contributions: an include keeps existing nonces
and ephemeral keys and collects them from the new members; an exclude drops
the departing members' slots and refreshes the initiator's nonce so the
reduced group reaches a session id never seen before. Every change of sid
requires fresh session signatures from all remaining members.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

from . import crypto
from .errors import AlreadyContributed, AuthFailure, InvalidMembers, Malformed

#: Domain separator for session-confirmation signatures. Greeting and data
#: packets use different separators, so the three kinds never cross-verify.
CTX_SESSION = b"acksig"

NONCE_LEN = 32


def compute_sid(members: list[str], nonces: list[bytes]) -> bytes:
    """Session id: hash of all member ids and nonces, order-independent.

    Pairs are sorted by the byte-wise lexical order of the member id, with
    each nonce staying attached to its member, so any packet ordering of
    the same membership yields the same sid.
    """
    if len(members) != len(nonces):
        raise Malformed("member and nonce counts differ")
    pairs = sorted(zip(members, nonces), key=lambda p: p[0].encode("utf-8"))
    data = b"".join(pid.encode("utf-8") for pid, _ in pairs)
    data += b"".join(nonce for _, nonce in pairs)
    return crypto.sha256(data)


def _prefixed(part: bytes) -> bytes:
    if len(part) > 0xFFFF:
        raise Malformed("authenticator component too long")
    return struct.pack(">H", len(part)) + part


def authenticator(pid: str, eph_pub: bytes, nonce: bytes, sid: bytes) -> bytes:
    """The value each member signs: context, own id, own ephemeral key,
    own nonce, and the session id, each length-prefixed. Never transmitted;
    both signer and verifier reconstruct it."""
    return b"".join(
        _prefixed(part)
        for part in (CTX_SESSION, pid.encode("utf-8"), eph_pub, nonce, sid)
    )


def sign_session(
    identity_seed: bytes, pid: str, eph_pub: bytes, nonce: bytes, sid: bytes
) -> bytes:
    return crypto.sign(identity_seed, authenticator(pid, eph_pub, nonce, sid))


def verify_session(
    identity_pub: bytes,
    signature: bytes,
    pid: str,
    eph_pub: bytes,
    nonce: bytes,
    sid: bytes,
) -> None:
    """Raise AuthFailure unless the session signature checks out."""
    crypto.verify(identity_pub, signature, authenticator(pid, eph_pub, nonce, sid))


@dataclass
class AskeState:
    """One member's signature-exchange state for the current session."""

    self_id: str
    members: list[str] = field(default_factory=list)
    nonces: list[bytes] = field(default_factory=list)
    eph_pubs: list[bytes] = field(default_factory=list)
    own_nonce: bytes | None = None
    own_eph_seed: bytes | None = None
    sid: bytes | None = None

    @property
    def own_eph_pub(self) -> bytes:
        assert self.own_eph_seed is not None
        return crypto.sign_public(self.own_eph_seed)

    def clone(self) -> AskeState:
        return replace(
            self,
            members=list(self.members),
            nonces=list(self.nonces),
            eph_pubs=list(self.eph_pubs),
        )

    def slot(self, member: str) -> tuple[bytes, bytes]:
        """(nonce, ephemeral key) for a member, post-downflow."""
        idx = self.members.index(member)
        return self.nonces[idx], self.eph_pubs[idx]


def contribute(
    self_id: str,
    members: list[str],
    nonces: list[bytes],
    eph_pubs: list[bytes],
    rng: crypto.Rng,
) -> tuple[AskeState, list[bytes], list[bytes]]:
    """Append our fresh nonce and ephemeral key to the upflow lists."""
    position = members.index(self_id)
    if len(nonces) != position or len(eph_pubs) != position:
        raise AlreadyContributed(
            f"slot {position} expects {position} prior contributions, "
            f"got {len(nonces)}/{len(eph_pubs)}"
        )
    state = AskeState(self_id=self_id, members=list(members))
    state.own_nonce = rng.bytes(NONCE_LEN)
    state.own_eph_seed = crypto.sign_key_generate(rng)
    return state, nonces + [state.own_nonce], eph_pubs + [state.own_eph_pub]


def finalize(
    state: AskeState, members: list[str], nonces: list[bytes], eph_pubs: list[bytes]
) -> AskeState:
    """Absorb the complete downflow lists and fix the session id.

    Checks that the lists still carry exactly what we contributed; a
    mismatch means someone altered our slot in flight.
    """
    if len(nonces) != len(members) or len(eph_pubs) != len(members):
        raise Malformed("downflow list lengths do not match membership")
    if any(len(n) != NONCE_LEN for n in nonces):
        raise Malformed("bad nonce length")
    new = state.clone()
    new.members = list(members)
    new.nonces = list(nonces)
    new.eph_pubs = list(eph_pubs)
    idx = members.index(state.self_id)
    if nonces[idx] != state.own_nonce or eph_pubs[idx] != state.own_eph_pub:
        raise AuthFailure("own contribution was altered in flight")
    new.sid = compute_sid(members, nonces)
    return new


def include_extend(state: AskeState, new_members: list[str]) -> AskeState:
    """Initiator side of an include: reuse every existing contribution and
    leave empty slots for the joining members to fill during upflow."""
    if set(new_members) & set(state.members):
        raise InvalidMembers("cannot include a current member")
    new = state.clone()
    new.members = state.members + list(new_members)
    new.sid = None
    return new


def exclude(state: AskeState, departing: list[str], rng: crypto.Rng) -> AskeState:
    """Initiator side of an exclude: drop departed slots, refresh our nonce.

    The fresh nonce guarantees the reduced membership reaches a session id
    that never existed before, even if the same member set had a session
    earlier.
    """
    departing_set = set(departing)
    if not departing_set <= set(state.members) or state.self_id in departing_set:
        raise InvalidMembers("invalid departing set")
    new = state.clone()
    keep = [i for i, m in enumerate(state.members) if m not in departing_set]
    new.members = [state.members[i] for i in keep]
    new.nonces = [state.nonces[i] for i in keep]
    new.eph_pubs = [state.eph_pubs[i] for i in keep]
    new.own_nonce = rng.bytes(NONCE_LEN)
    new.nonces[new.members.index(state.self_id)] = new.own_nonce
    new.sid = compute_sid(new.members, new.nonces)
    return new


def own_signature(state: AskeState, identity_seed: bytes) -> bytes:
    assert state.sid is not None and state.own_nonce is not None
    return sign_session(
        identity_seed, state.self_id, state.own_eph_pub, state.own_nonce, state.sid
    )


def verify_member(
    state: AskeState, member: str, signature: bytes, identity_pub: bytes
) -> None:
    """Check a member's session signature against the finalized lists."""
    if state.sid is None:
        raise Malformed("exchange not finalized")
    nonce, eph_pub = state.slot(member)
    verify_session(identity_pub, signature, member, eph_pub, nonce, state.sid)
