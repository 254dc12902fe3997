"""Total-order operation resolver and packet chain hashing.

The transport reflects every packet back in one global order, so members
resolve concurrent membership proposals without extra rounds: an initial
packet is accepted only if it references the final packet of the last
accepted operation (its "parent") and no operation is currently running.
Everyone sees the same order, so everyone reaches the same verdict;
rejected proposals are simply dropped and never retried.

Each member also folds the accepted initial and final packets into a
running chain hash. Initial packets carry the sender's current chain
value, so receivers can detect a transport that showed different accepted
operations to different members; a mismatch raises a warning, never a
silent repair. A member joining mid-history seeds its chain from the first
initial packet it participates in; for a history-opening operation the
seed is the hash of that packet's fresh parent string, which receivers can
recompute themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codec import packet_id
from .crypto import sha256

WARN_CHAIN = "chain-inconsistent"


@dataclass
class OpRecord:
    initial_id: bytes
    final_id: bytes | None = None
    failed: bool = False


@dataclass
class ServerOrder:
    chain_hash: bytes | None = None
    last_final: bytes | None = None
    current_initial: bytes | None = None
    history: list[OpRecord] = field(default_factory=list)
    rejected: int = 0

    @property
    def in_progress(self) -> bool:
        return self.current_initial is not None

    @property
    def is_fresh(self) -> bool:
        return self.chain_hash is None

    def decide_initial(self, prev_pf: bytes) -> bool:
        """Would this initial packet be accepted right now?"""
        if self.in_progress:
            return False
        if self.last_final is None:
            # Nothing accepted yet: either we are fresh (joining or opening
            # a history) or every prior operation failed before finishing.
            return True
        return prev_pf == self.last_final

    def note_rejected(self) -> None:
        self.rejected += 1

    def accept_initial(
        self, framed: str, prev_pf: bytes, chain_hash_rec: bytes, opens_history: bool
    ) -> list[str]:
        """Accept an initial packet; returns warning codes (never raises).

        `opens_history` marks operations that build on no previous state
        (a first establish), whose chain seed is recomputable from the
        packet itself.
        """
        warnings = []
        if opens_history:
            genesis = sha256(prev_pf)
            if chain_hash_rec != genesis:
                warnings.append(WARN_CHAIN)
            if self.chain_hash is None:
                self.chain_hash = genesis
            elif self.chain_hash != genesis:
                warnings.append(WARN_CHAIN)
                self.chain_hash = genesis
        elif self.chain_hash is None:
            # Joining mid-history: adopt the initiator's chain value.
            self.chain_hash = chain_hash_rec
        elif chain_hash_rec != self.chain_hash:
            warnings.append(WARN_CHAIN)

        pid = packet_id(framed)
        self.current_initial = pid
        self.history.append(OpRecord(initial_id=pid))
        self._absorb(framed)
        return sorted(set(warnings))

    def note_final(self, framed: str) -> None:
        """Record the packet that completed the running operation."""
        assert self.current_initial is not None, "no operation in progress"
        fid = packet_id(framed)
        if fid != self.current_initial:
            # A one-packet operation is its own final; absorb only once.
            self._absorb(framed)
        self.history[-1].final_id = fid
        self.last_final = fid
        self.current_initial = None

    def fail_operation(self) -> None:
        """Clear a running operation that failed locally.

        Its initial packet stays in the chain (it was accepted by order),
        and the previous final packet remains the parent for whatever
        comes next.
        """
        if self.current_initial is not None:
            self.history[-1].failed = True
            self.current_initial = None

    def _absorb(self, framed: str) -> None:
        assert self.chain_hash is not None
        self.chain_hash = sha256(self.chain_hash + framed.encode("utf-8"))
