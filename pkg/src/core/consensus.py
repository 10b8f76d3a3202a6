"""
Intra-cluster PBFT over behavior blocks.

Normal case, for a cluster of n replicas with f = (n-1)//3 and quorum
Q = (n+f)//2 + 1, which is 2f+1 when n = 3f+1 (a replica's own vote counts):

    client  --REQUEST-->      primary
    primary --PRE_PREPARE-->  n-1 backups
    every replica --PREPARE--> n-1 others       (the primary included)
    on Q matching PREPAREs:    --COMMIT--> n-1 others
    on Q matching COMMITs:     execute in seq order, --REPLY--> client

which is exactly `message_count(n) = (n-1) + 2n(n-1) + n` protocol messages.

A backup that holds an unexecuted request arms a view-change timer. On
expiry it moves to view v+1 and broadcasts VIEW_CHANGE carrying its prepared
certificate (or its pending request); f+1 VIEW_CHANGEs for a higher view pull
the others along. The primary of v+1 answers Q of them with NEW_VIEW and
re-proposes the highest prepared block, else the lowest-digest pending one.
Replicas left behind catch up through f+1 matching STATE_TRANSFER messages.

Signatures are HMAC-SHA256 tags under per-node keys held in a `KeyRing`.
"""
from __future__ import annotations

import hashlib
import hmac
import math
import random
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import pandas as pd

from src.core.geo import haversine_m
from src.core.logger.logger import Logger
from src.core.netsim import CryptoCosts, FaultModel, LatencyModel, SimEvent, Simulator, Strategy
from src.core.wire import FieldReader, FieldWriter, MsgType, frame, register
from src.models.node import NodeRecord, Role

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def block_hash(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Phase(IntEnum):
    PRE_PREPARE = 1
    PREPARE = 2
    COMMIT = 3
    REPLY = 4
    VIEW_CHANGE = 5
    NEW_VIEW = 6
    STATE_TRANSFER = 7


PROTOCOL_PHASES = ("PRE_PREPARE", "PREPARE", "COMMIT", "REPLY")


def message_count(n: int) -> int:
    """Protocol messages of one fault-free round among n replicas."""
    if n < 1:
        raise ValueError(f"Replica count must be positive, got {n}")
    return (n - 1) + n * (n - 1) + n * (n - 1) + n


def fault_tolerance(n: int) -> int:
    return (n - 1) // 3


def quorum(n: int) -> int:
    """Smallest vote count any two of which share an honest replica: 2f+1 when n = 3f+1."""
    return (n + fault_tolerance(n)) // 2 + 1


# --- keys ----------------------------------------------------------------

class KeyRing:
    """Per-node HMAC keys derived from a seed; public keys are hashes of the secrets."""

    def __init__(self, seed: int | str = 0):
        self.seed = seed
        self._secrets: dict[int, bytes] = {}
        self._by_public: dict[bytes, int] = {}

    def _secret(self, node_id: int) -> bytes:
        secret = self._secrets.get(node_id)
        if secret is None:
            secret = hashlib.sha256(f"iob-key|{self.seed}|{node_id}".encode()).digest()
            self._secrets[node_id] = secret
            self._by_public[hashlib.sha256(b"pk|" + secret).digest()] = node_id
        return secret

    def public_key(self, node_id: int) -> bytes:
        return hashlib.sha256(b"pk|" + self._secret(node_id)).digest()

    def sign(self, node_id: int, data: bytes) -> bytes:
        return hmac.new(self._secret(node_id), data, hashlib.sha256).digest()

    def verify(self, node_id: int, data: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(node_id, data), signature)

    def verify_public(self, public_key: bytes, data: bytes, signature: bytes) -> bool:
        node_id = self._by_public.get(public_key)
        return node_id is not None and self.verify(node_id, data, signature)


# --- blocks and messages -------------------------------------------------

@dataclass(frozen=True)
class BlockProposal:
    payload: bytes
    client_id: int
    client_pubkey: bytes
    timestamp: float
    signature: bytes = b""

    @cached_property
    def digest(self) -> bytes:
        return block_hash(self.payload + struct.pack(">d", self.timestamp) + self.client_pubkey)

    @classmethod
    def create(cls, payload: bytes, client_id: int, keyring: KeyRing, timestamp: float) -> BlockProposal:
        unsigned = cls(payload, client_id, keyring.public_key(client_id), timestamp)
        return replace(unsigned, signature=keyring.sign(client_id, unsigned.digest))

    def valid(self, keyring: KeyRing) -> bool:
        return keyring.verify_public(self.client_pubkey, self.digest, self.signature)

    def write(self, writer: FieldWriter) -> FieldWriter:
        return (writer.blob(self.payload).u32(self.client_id).blob(self.client_pubkey)
                .f64(self.timestamp).blob(self.signature))

    @classmethod
    def read(cls, reader: FieldReader) -> BlockProposal:
        return cls(reader.blob(), reader.u32(), reader.blob(), reader.f64(), reader.blob())


_HAS_PROPOSAL = 0x01
_PREPARED = 0x02


@register
@dataclass(frozen=True)
class PbftMessage:
    MSG_TYPE = MsgType.PBFT
    phase: Phase
    view: int
    seq: int
    digest: bytes
    sender: int
    signature: bytes = b""
    proposal: BlockProposal | None = None
    prepared: bool = False
    signers: tuple[int, ...] = ()

    @property
    def trace_type(self) -> str:
        return self.phase.name

    def signing_bytes(self) -> bytes:
        head = struct.pack(">BQQ", int(self.phase), self.view, self.seq) + self.digest
        tail = struct.pack(">IB", self.sender, int(self.prepared))
        tail += b"".join(struct.pack(">I", s) for s in self.signers)
        return head + tail + (self.proposal.digest if self.proposal else b"")

    def signed(self, keyring: KeyRing) -> PbftMessage:
        return replace(self, signature=keyring.sign(self.sender, self.signing_bytes()))

    def encode(self, group=None) -> bytes:
        flags = (_HAS_PROPOSAL if self.proposal else 0) | (_PREPARED if self.prepared else 0)
        writer = (FieldWriter().u8(int(self.phase)).u64(self.view).u64(self.seq)
                  .fixed(self.digest, DIGEST_SIZE).u32(self.sender).blob(self.signature).u8(flags))
        if self.proposal is not None:
            self.proposal.write(writer)
        writer.u32(len(self.signers))
        for signer in self.signers:
            writer.u32(signer)
        return frame(self.MSG_TYPE, writer.build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> PbftMessage:
        phase = Phase(reader.u8())
        view, seq = reader.u64(), reader.u64()
        digest = reader.fixed(DIGEST_SIZE)
        sender = reader.u32()
        signature = reader.blob()
        flags = reader.u8()
        proposal = BlockProposal.read(reader) if flags & _HAS_PROPOSAL else None
        signers = tuple(reader.u32() for _ in range(reader.u32()))
        return cls(phase, view, seq, digest, sender, signature, proposal, bool(flags & _PREPARED), signers)


@register
@dataclass(frozen=True)
class ClientRequest:
    MSG_TYPE = MsgType.CLIENT_REQUEST
    proposal: BlockProposal
    forwarded_by: int = 0   # 0 when sent by the client itself

    trace_type = "REQUEST"

    def encode(self, group=None) -> bytes:
        return frame(self.MSG_TYPE, self.proposal.write(FieldWriter()).u32(self.forwarded_by).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> ClientRequest:
        return cls(BlockProposal.read(reader), reader.u32())


# --- roster --------------------------------------------------------------

@dataclass(frozen=True)
class RosterEntry:
    node_id: int
    public_key: bytes
    address: str
    lat: float
    lon: float
    status: str = "active"
    role: Role = Role.SECONDARY


@dataclass(frozen=True)
class ClusterRoster:
    cluster_id: int
    entries: tuple[RosterEntry, ...]

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(sorted(e.node_id for e in self.entries))

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def f(self) -> int:
        return fault_tolerance(self.n)

    def entry(self, node_id: int) -> RosterEntry:
        for e in self.entries:
            if e.node_id == node_id:
                return e
        raise KeyError(node_id)

    def __contains__(self, node_id: int) -> bool:
        return any(e.node_id == node_id for e in self.entries)

    def version(self) -> bytes:
        """Content hash, equal for rosters that agree entry by entry."""
        h = hashlib.sha256(struct.pack(">I", self.cluster_id))
        for e in sorted(self.entries, key=lambda e: e.node_id):
            h.update(struct.pack(">I", e.node_id) + e.public_key + e.address.encode()
                     + e.status.encode() + e.role.value.encode())
        return h.digest()

    @classmethod
    def build(cls, cluster_id: int, nodes: Iterable[NodeRecord], keyring: KeyRing) -> ClusterRoster:
        entries = tuple(
            RosterEntry(n.id, keyring.public_key(n.id), f"node-{n.id}", n.lat, n.lon,
                        role=n.role if n.role is not Role.UNASSIGNED else Role.SECONDARY)
            for n in sorted(nodes, key=lambda n: n.id))
        if not entries:
            raise ValueError(f"Cluster {cluster_id} has no members")
        return cls(cluster_id, entries)


def select_leader(user_position: tuple[float, float], roster: ClusterRoster, rng: random.Random, k: int = 3) -> int:
    """Uniform choice among the k roster nodes nearest to the user (lowest id on distance ties)."""
    if roster.n == 0:
        raise ValueError("Roster is empty")
    lat, lon = user_position
    nearest = sorted(roster.entries, key=lambda e: (haversine_m(lat, lon, e.lat, e.lon), e.node_id))[:k]
    return nearest[rng.randrange(len(nearest))].node_id


class SyncStatus(str, Enum):
    IN_SYNC = "in_sync"
    UPDATED = "updated"
    FAILED = "failed"


@dataclass(frozen=True)
class ConsistencyResult:
    status: SyncStatus
    roster: ClusterRoster
    retry_after: float | None = None


def consistency_check(node_id: int, roster: ClusterRoster, ca_rosters: Mapping[int, ClusterRoster],
                      backoff: float = 1.0) -> ConsistencyResult:
    """
    Compares the local roster of `node_id` with the versions held by the CA nodes.

    The node adopts the version held by a strict majority of CA nodes; without
    a majority it keeps its own roster and should retry after `backoff`.
    """
    if not ca_rosters:
        return ConsistencyResult(SyncStatus.FAILED, roster, backoff)
    votes = Counter(r.version() for r in ca_rosters.values())
    version, count = votes.most_common(1)[0]
    if count * 2 <= len(ca_rosters):
        Logger("consensus").log.warning(
            f"⚠️ Node {node_id}: no CA majority on roster of cluster {roster.cluster_id}, retry in {backoff}s")
        return ConsistencyResult(SyncStatus.FAILED, roster, backoff)
    if version == roster.version():
        return ConsistencyResult(SyncStatus.IN_SYNC, roster)
    agreed = next(r for r in ca_rosters.values() if r.version() == version)
    return ConsistencyResult(SyncStatus.UPDATED, agreed)


# --- replicas ------------------------------------------------------------

@dataclass(frozen=True)
class ChainEntry:
    seq: int
    digest: bytes
    view: int
    commit_time: float


@dataclass
class _Slot:
    digest: bytes | None = None
    proposal: BlockProposal | None = None
    prepares: defaultdict = field(default_factory=lambda: defaultdict(set))
    commits: defaultdict = field(default_factory=lambda: defaultdict(set))
    prepared: bool = False
    committed: bool = False


@dataclass
class ReplicaState:
    view: int = 0
    last_executed: int = 0
    log: dict[tuple[int, int], _Slot] = field(default_factory=dict)
    chain: list[ChainEntry] = field(default_factory=list)
    roster: ClusterRoster | None = None


@dataclass(frozen=True)
class _ViewTimer:
    view: int


@dataclass(frozen=True)
class _ClientTimer:
    digest: bytes


class Replica(Logger):
    def __init__(self, node_id: int, roster: ClusterRoster, keyring: KeyRing, sim: Simulator,
                 costs: CryptoCosts, view_timeout: float):
        super().__init__(f"consensus.{node_id}")
        self.id = node_id
        self.keyring = keyring
        self.sim = sim
        self.costs = costs
        self.base_timeout = view_timeout
        self.timeout = view_timeout
        self.state = ReplicaState(roster=roster)
        self.n = roster.n
        self.f = roster.f
        self.quorum = quorum(roster.n)
        self.order = roster.order
        self.peers = [i for i in self.order if i != node_id]

        self.next_seq = 0
        self.in_view_change = False
        self.view_changes_started = 0
        self.pending: dict[bytes, BlockProposal] = {}
        self.executed: dict[bytes, int] = {}
        self.assigned: dict[int, dict[bytes, int]] = defaultdict(dict)
        self.ready: dict[int, tuple[bytes, BlockProposal, int]] = {}
        self.flagged: set[int] = set()
        self.vc_log: dict[int, dict[int, PbftMessage]] = defaultdict(dict)
        self.new_view_sent: set[int] = set()
        self.future: list[PbftMessage] = []
        self.transfer_votes: dict[int, dict[tuple[bytes, int], dict[int, PbftMessage]]] = defaultdict(lambda: defaultdict(dict))
        self.timer: SimEvent | None = None
        self.on_commit: Callable[[int, ChainEntry], None] | None = None

    # --- helpers --------------------------------------------------------
    @property
    def view(self) -> int:
        return self.state.view

    @property
    def chain(self) -> list[ChainEntry]:
        return self.state.chain

    def primary_of(self, view: int) -> int:
        return self.order[view % self.n]

    @property
    def is_primary(self) -> bool:
        return self.primary_of(self.view) == self.id

    def _slot(self, view: int, seq: int) -> _Slot:
        return self.state.log.setdefault((view, seq), _Slot())

    def _broadcast(self, message: PbftMessage):
        signed = message.signed(self.keyring)
        self.sim.compute(self.id, self.costs.mac)
        self.sim.broadcast(self.id, self.peers, signed, len(signed.encode()))

    def _send(self, dst: int, message):
        if isinstance(message, PbftMessage):
            message = message.signed(self.keyring)
            self.sim.compute(self.id, self.costs.mac)
        self.sim.send(self.id, dst, message, len(message.encode()))

    def _arm_timer(self):
        if self.timer is None:
            self.timer = self.sim.schedule_timer(self.id, self.timeout, _ViewTimer(self.view))

    def _disarm_timer(self):
        self.sim.cancel(self.timer)
        self.timer = None

    # --- dispatch -------------------------------------------------------
    def on_event(self, event: SimEvent):
        message = event.payload
        if isinstance(message, _ViewTimer):
            self.timer = None
            self._on_view_timer(message)
        elif isinstance(message, ClientRequest):
            self._on_request(message)
        elif isinstance(message, PbftMessage) and message.sender in self.state.roster:
            self.sim.compute(self.id, self.costs.mac)
            if not self.keyring.verify(message.sender, message.signing_bytes(), message.signature):
                if message.sender not in self.flagged:
                    self.log.warning(f"⚠️ Replica {self.id}: bad signature from {message.sender}, flagged")
                self.flagged.add(message.sender)
                return
            self._on_message(message)

    def _on_message(self, m: PbftMessage):
        if m.phase is Phase.VIEW_CHANGE:
            self._on_view_change(m)
        elif m.phase is Phase.NEW_VIEW:
            self._on_new_view(m)
        elif m.phase is Phase.STATE_TRANSFER:
            self._on_state_transfer(m)
        elif m.phase is Phase.REPLY:
            return
        elif m.view > self.view or (m.view == self.view and self.in_view_change):
            self.future.append(m)
        elif m.view < self.view:
            return
        elif m.phase is Phase.PRE_PREPARE:
            self._on_pre_prepare(m)
        elif m.phase is Phase.PREPARE:
            self._slot(m.view, m.seq).prepares[m.digest].add(m.sender)
            self._check(m.view, m.seq)
        elif m.phase is Phase.COMMIT:
            self._slot(m.view, m.seq).commits[m.digest].add(m.sender)
            self._check(m.view, m.seq)

    # --- normal case ----------------------------------------------------
    def _on_request(self, request: ClientRequest):
        proposal = request.proposal
        self.sim.compute(self.id, self.costs.hash + self.costs.mac)
        if not proposal.valid(self.keyring):
            self.log.warning(f"⚠️ Replica {self.id}: request with invalid client signature dropped")
            return
        d = proposal.digest
        if d in self.executed:
            if request.forwarded_by == 0:
                seq = self.executed[d]
                self._send(proposal.client_id, PbftMessage(Phase.REPLY, self.view, seq, d, self.id))
            return
        self.pending[d] = proposal
        if self.in_view_change:
            return
        if self.is_primary:
            self._propose(proposal)
        else:
            self._arm_timer()
            if request.forwarded_by == 0:
                self._send(self.primary_of(self.view), ClientRequest(proposal, self.id))

    def _propose(self, proposal: BlockProposal, seq: int | None = None):
        d = proposal.digest
        if d in self.assigned[self.view]:
            return
        if seq is None:
            self.next_seq = max(self.next_seq, self.state.last_executed) + 1
            seq = self.next_seq
        else:
            self.next_seq = max(self.next_seq, seq)
        self.assigned[self.view][d] = seq
        slot = self._slot(self.view, seq)
        slot.digest, slot.proposal = d, proposal
        self._broadcast(PbftMessage(Phase.PRE_PREPARE, self.view, seq, d, self.id, proposal=proposal))
        slot.prepares[d].add(self.id)
        self._broadcast(PbftMessage(Phase.PREPARE, self.view, seq, d, self.id))
        self._check(self.view, seq)

    def _on_pre_prepare(self, m: PbftMessage):
        if m.sender != self.primary_of(m.view) or m.proposal is None:
            return
        self.sim.compute(self.id, self.costs.hash + self.costs.mac)
        if m.proposal.digest != m.digest or not m.proposal.valid(self.keyring):
            self.flagged.add(m.sender)
            return
        slot = self._slot(m.view, m.seq)
        if slot.digest is not None:
            if slot.digest != m.digest:
                self.log.warning(f"⚠️ Replica {self.id}: conflicting PRE_PREPARE for seq {m.seq} from {m.sender}")
                self.flagged.add(m.sender)
            return
        executed_seq = self.executed.get(m.digest)
        if m.seq <= self.state.last_executed and executed_seq != m.seq:
            return
        slot.digest, slot.proposal = m.digest, m.proposal
        if executed_seq is None:
            self.pending[m.digest] = m.proposal
            self._arm_timer()
        slot.prepares[m.digest].add(self.id)
        self._broadcast(PbftMessage(Phase.PREPARE, m.view, m.seq, m.digest, self.id))
        self._check(m.view, m.seq)

    def _check(self, view: int, seq: int):
        slot = self._slot(view, seq)
        d = slot.digest
        if d is None:
            return
        if not slot.prepared and len(slot.prepares[d]) >= self.quorum:
            slot.prepared = True
            slot.commits[d].add(self.id)
            self._broadcast(PbftMessage(Phase.COMMIT, view, seq, d, self.id))
        if slot.prepared and not slot.committed and len(slot.commits[d]) >= self.quorum:
            slot.committed = True
            if seq > self.state.last_executed:
                self.ready[seq] = (d, slot.proposal, view)
                self._execute()

    def _execute(self, reply: bool = True):
        while self.state.last_executed + 1 in self.ready:
            seq = self.state.last_executed + 1
            d, proposal, view = self.ready.pop(seq)
            self.sim.compute(self.id, self.costs.hash)
            self.state.last_executed = seq
            entry = ChainEntry(seq, d, view, self.sim.now)
            self.state.chain.append(entry)
            self.executed[d] = seq
            self.pending.pop(d, None)
            if reply:
                self._send(proposal.client_id, PbftMessage(Phase.REPLY, view, seq, d, self.id))
            if self.on_commit is not None:
                self.on_commit(self.id, entry)
        if not self.pending:
            self._disarm_timer()
            self.timeout = self.base_timeout

    # --- view change ----------------------------------------------------
    def _on_view_timer(self, timer: _ViewTimer):
        if not self.pending:
            return
        target = max(self.view, timer.view) + 1
        self.log.info(f"⚠️ Replica {self.id}: request not executed in view {self.view}, moving to view {target}")
        self._start_view_change(target)

    def _prepared_certificate(self) -> tuple[int, bytes, BlockProposal] | None:
        want = self.state.last_executed + 1
        best = None
        for (view, seq), slot in self.state.log.items():
            if seq == want and slot.prepared and slot.proposal is not None and (best is None or view > best[0]):
                best = (view, slot.digest, slot.proposal)
        return None if best is None else (want, best[1], best[2])

    def _start_view_change(self, new_view: int):
        if new_view < self.view or (new_view == self.view and self.in_view_change):
            return
        self._disarm_timer()
        self.state.view = new_view
        self.in_view_change = True
        self.view_changes_started += 1
        cert = self._prepared_certificate()
        if cert is not None:
            _, d, proposal = cert
            message = PbftMessage(Phase.VIEW_CHANGE, new_view, self.state.last_executed, d, self.id,
                                  proposal=proposal, prepared=True)
        elif self.pending:
            d = min(self.pending)
            message = PbftMessage(Phase.VIEW_CHANGE, new_view, self.state.last_executed, d, self.id,
                                  proposal=self.pending[d])
        else:
            message = PbftMessage(Phase.VIEW_CHANGE, new_view, self.state.last_executed, ZERO_DIGEST, self.id)
        self.vc_log[new_view][self.id] = message.signed(self.keyring)
        self._broadcast(message)
        self.timeout *= 2
        self.timer = self.sim.schedule_timer(self.id, self.timeout, _ViewTimer(new_view))
        self._try_new_view(new_view)

    def _on_view_change(self, m: PbftMessage):
        if m.seq < self.state.last_executed:
            self._transfer_state(m.sender, m.seq)
        self.vc_log[m.view][m.sender] = m
        if m.view > self.view:
            ahead = {s for v, msgs in self.vc_log.items() if v > self.view for s in msgs}
            if len(ahead) >= self.f + 1:
                target = min(v for v, msgs in self.vc_log.items() if v > self.view and msgs)
                self._start_view_change(target)
        self._try_new_view(m.view)

    def _transfer_state(self, dst: int, their_last: int):
        for entry in self.state.chain[their_last:]:
            proposal = self._proposal_for(entry.digest)
            if proposal is not None:
                self._send(dst, PbftMessage(Phase.STATE_TRANSFER, self.view, entry.seq, entry.digest, self.id,
                                            proposal=proposal))

    def _proposal_for(self, digest: bytes) -> BlockProposal | None:
        for slot in self.state.log.values():
            if slot.digest == digest and slot.proposal is not None:
                return slot.proposal
        return None

    def _try_new_view(self, view: int):
        if (view != self.view or not self.in_view_change or self.primary_of(view) != self.id
                or view in self.new_view_sent or len(self.vc_log[view]) < self.quorum):
            return
        self.new_view_sent.add(view)
        changes = list(self.vc_log[view].values())
        highest = max(m.seq for m in changes)
        self.next_seq = max(self.next_seq, highest)
        certs = [m for m in changes if m.prepared and m.proposal is not None and m.seq + 1 > highest]
        proposal, seq = None, None
        if certs:
            chosen = max(certs, key=lambda m: (m.seq, m.digest))
            proposal, seq = chosen.proposal, chosen.seq + 1
        else:
            candidates = {m.digest: m.proposal for m in changes
                          if m.proposal is not None and m.digest not in self.executed}
            if candidates:
                d = min(candidates)
                proposal, seq = candidates[d], highest + 1
        signers = tuple(sorted(self.vc_log[view]))
        digest = proposal.digest if proposal else ZERO_DIGEST
        self._broadcast(PbftMessage(Phase.NEW_VIEW, view, seq or highest, digest, self.id,
                                    proposal=proposal, signers=signers))
        self.log.info(f"✅ Replica {self.id} leads view {view} ({len(signers)} VIEW_CHANGE signers)")
        self._enter_view(view)
        if proposal is not None and proposal.digest not in self.executed:
            self.pending[proposal.digest] = proposal
            self._propose(proposal, seq)
        for d in sorted(self.pending):
            self._propose(self.pending[d])

    def _on_new_view(self, m: PbftMessage):
        if m.sender != self.primary_of(m.view) or m.view < self.view:
            return
        if len(set(m.signers)) < self.quorum or not all(s in self.state.roster for s in m.signers):
            self.flagged.add(m.sender)
            return
        self._enter_view(m.view)
        primary = self.primary_of(m.view)
        for d in sorted(self.pending):
            self._send(primary, ClientRequest(self.pending[d], self.id))
        if self.pending:
            self._arm_timer()

    def _enter_view(self, view: int):
        self._disarm_timer()
        self.state.view = view
        self.in_view_change = False
        replay = [m for m in self.future if m.view == view]
        self.future = [m for m in self.future if m.view > view]
        for m in replay:
            self._on_message(m)

    def _on_state_transfer(self, m: PbftMessage):
        if m.seq <= self.state.last_executed or m.proposal is None or m.proposal.digest != m.digest:
            return
        votes = self.transfer_votes[m.seq][(m.digest, m.view)]
        votes[m.sender] = m
        if len(votes) < self.f + 1:
            return
        self.ready[m.seq] = (m.digest, m.proposal, m.view)
        self._execute(reply=False)
        if m.view < self.view and self.in_view_change:
            # the others never left view m.view
            self._enter_view(m.view)
        if self.pending:
            self._arm_timer()


# --- fault strategies ----------------------------------------------------

def silent() -> Strategy:
    """Byzantine node that never sends anything."""
    return lambda src, dst, message: None


def bad_signature() -> Strategy:
    def strategy(src, dst, message):
        if isinstance(message, PbftMessage):
            forged = bytes(b ^ 0xFF for b in message.signature) or b"\x00"
            return replace(message, signature=forged)
        return message
    return strategy


def wrong_digest(keyring: KeyRing) -> Strategy:
    """Votes (PREPARE/COMMIT) for a digest nobody proposed."""
    def strategy(src, dst, message):
        if isinstance(message, PbftMessage) and message.phase in (Phase.PREPARE, Phase.COMMIT):
            return replace(message, digest=block_hash(message.digest)).signed(keyring)
        return message
    return strategy


def equivocate(alternate: BlockProposal, targets: Iterable[int], keyring: KeyRing,
               phases: Iterable[Phase] = (Phase.PRE_PREPARE, Phase.PREPARE)) -> Strategy:
    """
    Primary that shows `alternate` instead of the real block to `targets` in
    every message of `phases` (PRE_PREPARE, PREPARE and/or COMMIT).
    """
    targets = frozenset(targets)
    phases = frozenset(phases)

    def strategy(src, dst, message):
        if dst not in targets or not isinstance(message, PbftMessage) or message.phase not in phases:
            return message
        if message.phase is Phase.PRE_PREPARE:
            return replace(message, digest=alternate.digest, proposal=alternate).signed(keyring)
        return replace(message, digest=alternate.digest).signed(keyring)
    return strategy


def crash(faults: FaultModel, node_id: int, at: float = 0.0) -> FaultModel:
    return faults.crash(node_id, at)


# --- cluster driver ------------------------------------------------------

class RoundStatus(str, Enum):
    COMMITTED = "committed"
    FAILED = "failed"


@dataclass
class RoundOutcome:
    status: RoundStatus
    digest: bytes
    seq: int | None
    view: int
    view_changes: int
    commit_times: dict[int, float]
    start_time: float
    reply_time: float | None
    messages: int = 0
    conflicting: bool = False

    @property
    def committed(self) -> bool:
        return self.status is RoundStatus.COMMITTED

    @property
    def last_commit(self) -> float | None:
        return max(self.commit_times.values()) if self.commit_times else None


class PbftCluster(Logger):
    """
    Replicas of one cluster kept alive across rounds inside a shared simulator.

    Args:
        sim (Simulator): Simulator in which every roster node is already registered.
        roster (ClusterRoster): Members and keys.
        keyring (KeyRing): Key material of replicas and clients.
        costs (CryptoCosts, optional): Service times charged per MAC and hash.
        view_timeout (float, optional): Initial view-change timeout, doubled per change.
        client_timeout (float, optional): Client retransmission timeout.
    """

    def __init__(self, sim: Simulator, roster: ClusterRoster, keyring: KeyRing, costs: CryptoCosts | None = None,
                 view_timeout: float = 0.25, client_timeout: float = 0.5):
        super().__init__()
        self.sim = sim
        self.roster = roster
        self.keyring = keyring
        self.costs = costs or CryptoCosts()
        self.client_timeout = client_timeout
        self.replicas = {node_id: Replica(node_id, roster, keyring, sim, self.costs, view_timeout)
                         for node_id in roster.order}
        for node_id, replica in self.replicas.items():
            sim.attach(node_id, replica.on_event)
            replica.on_commit = self._on_commit
        self.commit_listeners: list[Callable[[int, ChainEntry], None]] = []
        self.replies: dict[bytes, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
        self.reply_time: dict[bytes, float] = {}
        self.start_time: dict[bytes, float] = {}
        self._client_timers: dict[bytes, SimEvent] = {}
        self._clients: set[int] = set()
        self._submitted: dict[bytes, BlockProposal] = {}

    def add_client(self, client_id: int, lat: float, lon: float, capability: float = math.inf):
        if client_id not in self.sim.nodes:
            self.sim.register(client_id, lat, lon, capability)
        if client_id not in self._clients:
            self.sim.attach(client_id, self._on_client_event)
            self._clients.add(client_id)

    def _on_commit(self, node_id: int, entry: ChainEntry):
        for listener in self.commit_listeners:
            listener(node_id, entry)

    def honest(self) -> list[int]:
        return [i for i in self.roster.order if not self.sim.faults.is_faulty(i)]

    def align_view(self, leader: int):
        """Moves every replica to the smallest view not below the current one whose primary is `leader`."""
        if leader not in self.replicas:
            raise ValueError(f"Leader {leader} is not a member of cluster {self.roster.cluster_id}")
        current = max(r.view for r in self.replicas.values())
        offset = (self.roster.order.index(leader) - current) % self.roster.n
        for replica in self.replicas.values():
            replica.state.view = current + offset
            replica.in_view_change = False

    def propose(self, proposal: BlockProposal, leader: int | None = None):
        """Client hands `proposal` to the primary (after aligning views on `leader`)."""
        if leader is not None:
            self.align_view(leader)
        client = proposal.client_id
        if client not in self._clients:
            raise ValueError(f"Client {client} is not registered with cluster {self.roster.cluster_id}")
        d = proposal.digest
        self.start_time[d] = self.sim.now
        self._submitted[d] = proposal
        view = max(r.view for r in self.replicas.values())
        primary = self.roster.order[view % self.roster.n]
        request = ClientRequest(proposal)
        self.sim.send(client, primary, request, len(request.encode()))
        self._client_timers[d] = self.sim.schedule_timer(client, self.client_timeout, _ClientTimer(d))

    def _on_client_event(self, event: SimEvent):
        message = event.payload
        if isinstance(message, _ClientTimer):
            d = message.digest
            if d in self.reply_time or d not in self.start_time:
                return
            proposal = self._proposal(d)
            if proposal is None:
                return
            self.log.info(f"⚠️ Client {event.destination}: no reply quorum, broadcasting request")
            request = ClientRequest(proposal)
            self.sim.broadcast(event.destination, self.roster.order, request, len(request.encode()))
            self._client_timers[d] = self.sim.schedule_timer(event.destination, self.client_timeout * 2, message)
        elif isinstance(message, PbftMessage) and message.phase is Phase.REPLY:
            if not self.keyring.verify(message.sender, message.signing_bytes(), message.signature):
                return
            votes = self.replies[message.digest][message.seq]
            votes.add(message.sender)
            if len(votes) >= self.roster.f + 1 and message.digest not in self.reply_time:
                self.reply_time[message.digest] = self.sim.now
                self.sim.cancel(self._client_timers.pop(message.digest, None))

    def _proposal(self, digest: bytes) -> BlockProposal | None:
        for replica in self.replicas.values():
            if digest in replica.pending:
                return replica.pending[digest]
            found = replica._proposal_for(digest)
            if found is not None:
                return found
        return self._submitted.get(digest)

    def outcome(self, digest: bytes, messages: int = 0) -> RoundOutcome:
        honest = self.honest()
        commit_times, seqs = {}, set()
        for node_id in honest:
            for entry in self.replicas[node_id].chain:
                if entry.digest == digest:
                    commit_times[node_id] = entry.commit_time
                    seqs.add(entry.seq)
        committed = len(commit_times) >= min(quorum(self.roster.n), len(honest))
        return RoundOutcome(
            status=RoundStatus.COMMITTED if committed and commit_times else RoundStatus.FAILED,
            digest=digest,
            seq=min(seqs) if seqs else None,
            view=max(r.view for r in self.replicas.values()),
            view_changes=max(r.view_changes_started for r in self.replicas.values()),
            commit_times=commit_times,
            start_time=self.start_time.get(digest, 0.0),
            reply_time=self.reply_time.get(digest),
            messages=messages,
            conflicting=conflicting_commits([self.replicas[i] for i in honest]),
        )

    def chain_frame(self, node_id: int) -> pd.DataFrame:
        rows = [(e.seq, e.digest.hex(), e.view, e.commit_time) for e in self.replicas[node_id].chain]
        return pd.DataFrame(rows, columns=["seq", "digest", "view", "commit_time"])

    def export_chain(self, node_id: int, path: str | Path):
        self.chain_frame(node_id).to_csv(path, index=False, float_format="%.9f")


def conflicting_commits(replicas: Sequence[Replica]) -> bool:
    """True when two replicas committed different digests at the same seq."""
    seen: dict[int, bytes] = {}
    for replica in replicas:
        for entry in replica.chain:
            if seen.setdefault(entry.seq, entry.digest) != entry.digest:
                return True
    return False


def pbft_round(proposal: BlockProposal, roster: ClusterRoster, faults: FaultModel | None = None, *,
               keyring: KeyRing, leader: int | None = None, latency: LatencyModel | None = None,
               costs: CryptoCosts | None = None, seed: int = 0, client_position: tuple[float, float] | None = None,
               view_timeout: float = 0.25, max_time: float = 60.0) -> tuple[RoundOutcome, PbftCluster]:
    """
    One-shot round in a fresh simulator.

    Returns:
        tuple[RoundOutcome, PbftCluster]: Outcome plus the cluster for inspection.
    """
    sim = Simulator(latency or LatencyModel(), faults or FaultModel(), seed=seed)
    for e in roster.entries:
        sim.register(e.node_id, e.lat, e.lon)
    cluster = PbftCluster(sim, roster, keyring, costs, view_timeout=view_timeout)
    lat, lon = client_position or (roster.entries[0].lat, roster.entries[0].lon)
    cluster.add_client(proposal.client_id, lat, lon)
    cluster.propose(proposal, leader)
    trace = sim.run_until_quiescent(max_time)
    return cluster.outcome(proposal.digest, trace.message_count(PROTOCOL_PHASES)), cluster
