"""
Inter-cluster block dissemination among cluster leaders.

An informed leader gossips in rounds. Each round it probes the leaders within
`eps3` metres that it does not yet know to be informed, turns the measured
round-trip times and the distances into relay weights, samples `fanout`
relays without replacement and forwards the block to them. Receivers ignore
digests they already hold, so re-delivery changes nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from src.core.geo import haversine_many_m, haversine_m
from src.core.logger.logger import Logger
from src.core.netsim import FaultModel, LatencyModel, SimEvent, Simulator
from src.core.wire import FieldReader, FieldWriter, MsgType, frame, register
from src.models.node import NodeRecord, Role

WEIGHT_FORMS = ("mean", "product", "harmonic")
REPORT_COLUMNS = ["leader_id", "cluster_id", "receipt_time", "hops"]

_MIN_DISTANCE_M = 1.0
_MIN_PING_S = 1e-9


@dataclass(frozen=True)
class LeaderInfo:
    node_id: int
    cluster_id: int
    lat: float
    lon: float
    capability: float = 1.0


class LeaderDirectory:
    """One leader per cluster, with distance queries over their positions."""

    def __init__(self, leaders: Iterable[LeaderInfo]):
        self._leaders = {l.node_id: l for l in sorted(leaders, key=lambda l: l.node_id)}
        clusters = [l.cluster_id for l in self._leaders.values()]
        if len(set(clusters)) != len(clusters):
            raise ValueError("A cluster has more than one leader")
        self._ids = list(self._leaders)
        self._lats = np.array([l.lat for l in self._leaders.values()], dtype=float)
        self._lons = np.array([l.lon for l in self._leaders.values()], dtype=float)

    @classmethod
    def from_roles(cls, nodes: Iterable[NodeRecord], labels: dict[int, int], roles: dict[int, Role]) -> LeaderDirectory:
        return cls(LeaderInfo(n.id, labels[n.id], n.lat, n.lon, n.capability)
                   for n in nodes if roles.get(n.id) is Role.LEADER)

    def __len__(self) -> int:
        return len(self._leaders)

    def __iter__(self):
        return iter(self._leaders.values())

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._leaders

    def __getitem__(self, node_id: int) -> LeaderInfo:
        return self._leaders[node_id]

    @property
    def ids(self) -> list[int]:
        return list(self._ids)

    def distance_m(self, a: int, b: int) -> float:
        la, lb = self._leaders[a], self._leaders[b]
        return haversine_m(la.lat, la.lon, lb.lat, lb.lon)

    def _distances_from(self, node_id: int) -> np.ndarray:
        leader = self._leaders[node_id]
        return haversine_many_m(leader.lat, leader.lon, self._lats, self._lons)

    def within(self, node_id: int, eps3: float, exclude: Iterable[int] = ()) -> list[int]:
        """Leaders other than `node_id` within `eps3` metres, in id order."""
        skip = set(exclude) | {node_id}
        dist = self._distances_from(node_id)
        return [self._ids[i] for i in np.flatnonzero(dist <= eps3) if self._ids[i] not in skip]

    def nearest(self, node_id: int, exclude: Iterable[int] = ()) -> int | None:
        skip = set(exclude) | {node_id}
        dist = self._distances_from(node_id)
        best = None
        for i in np.argsort(dist, kind="stable"):
            if self._ids[i] not in skip:
                best = self._ids[i]
                break
        return best


@dataclass(frozen=True)
class RelayWeights:
    candidates: tuple[int, ...]
    distances: tuple[float, ...]
    pings: tuple[float, ...]
    weights: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.candidates)

    def weight_of(self, node_id: int) -> float:
        return self.weights[self.candidates.index(node_id)]


def relay_weights(candidates: Sequence[int], distances: Sequence[float], pings: Sequence[float],
                  form: str = "mean") -> RelayWeights:
    """
    Normalised relay weights from distances l_i and ping deltas λ_i.

    With a = mean(l)/l_i and b = mean(λ)/λ_i the raw score is (a+b)/2 for
    `mean`, a*b for `product` and 2ab/(a+b) for `harmonic`; weights are the
    scores divided by their sum.
    """
    if form not in WEIGHT_FORMS:
        raise ValueError(f"Weight form not recognized: {form}")
    if not (len(candidates) == len(distances) == len(pings)):
        raise ValueError("candidates, distances and pings must have the same length")
    if not candidates:
        return RelayWeights((), (), (), ())
    l = np.maximum(np.asarray(distances, dtype=float), _MIN_DISTANCE_M)
    lam = np.maximum(np.asarray(pings, dtype=float), _MIN_PING_S)
    a = l.mean() / l
    b = lam.mean() / lam
    if form == "mean":
        scores = (a + b) / 2
    elif form == "product":
        scores = a * b
    else:
        scores = 2 * a * b / (a + b)
    weights = scores / scores.sum()
    return RelayWeights(tuple(candidates), tuple(float(x) for x in distances), tuple(float(x) for x in pings),
                        tuple(float(w) for w in weights))


def select_relays(weights: RelayWeights, fanout: int, rng: np.random.Generator) -> list[int]:
    """Weighted sampling without replacement of min(fanout, k) candidates."""
    if fanout < 1:
        raise ValueError(f"fanout must be at least 1, got {fanout}")
    candidates = list(weights.candidates)
    if fanout >= len(candidates):
        return candidates
    p = np.asarray(weights.weights, dtype=float)
    picked = rng.choice(len(candidates), size=fanout, replace=False, p=p / p.sum())
    return [candidates[i] for i in picked]


# --- wire ----------------------------------------------------------------

@register
@dataclass(frozen=True)
class GossipMessage:
    MSG_TYPE = MsgType.GOSSIP
    digest: bytes
    origin: int
    hops: int
    seen: tuple[int, ...] = ()
    payload: bytes = b""

    trace_type = "GOSSIP"

    def encode(self, group=None) -> bytes:
        writer = FieldWriter().blob(self.digest).u32(self.origin).u32(self.hops).u32(len(self.seen))
        for node_id in self.seen:
            writer.u32(node_id)
        return frame(self.MSG_TYPE, writer.blob(self.payload).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> GossipMessage:
        digest, origin, hops = reader.blob(), reader.u32(), reader.u32()
        seen = tuple(reader.u32() for _ in range(reader.u32()))
        return cls(digest, origin, hops, seen, reader.blob())


@register
@dataclass(frozen=True)
class Probe:
    MSG_TYPE = MsgType.PROBE
    digest: bytes
    sender: int

    trace_type = "PROBE"

    def encode(self, group=None) -> bytes:
        return frame(self.MSG_TYPE, FieldWriter().blob(self.digest).u32(self.sender).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> Probe:
        return cls(reader.blob(), reader.u32())


@register
@dataclass(frozen=True)
class ProbeAck:
    MSG_TYPE = MsgType.PROBE_ACK
    digest: bytes
    sender: int
    informed: bool

    trace_type = "PROBE_ACK"

    def encode(self, group=None) -> bytes:
        return frame(self.MSG_TYPE, FieldWriter().blob(self.digest).u32(self.sender).u8(int(self.informed)).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> ProbeAck:
        return cls(reader.blob(), reader.u32(), bool(reader.u8()))


# --- dissemination -------------------------------------------------------

@dataclass(frozen=True)
class GossipParams:
    eps3: float = 40_000.0
    fanout: int = 3
    ttl: int = 10
    weight_form: str = "mean"
    probe_timeout: float = 0.05
    round_interval: float = 0.0

    def __post_init__(self):
        if self.eps3 <= 0:
            raise ValueError(f"eps3 must be positive, got {self.eps3}")
        if self.fanout < 1:
            raise ValueError(f"fanout must be at least 1, got {self.fanout}")
        if self.ttl < 0:
            raise ValueError(f"ttl must be nonnegative, got {self.ttl}")
        if self.weight_form not in WEIGHT_FORMS:
            raise ValueError(f"Weight form not recognized: {self.weight_form}")
        if self.probe_timeout <= 0 or self.round_interval < 0:
            raise ValueError("probe_timeout must be positive and round_interval nonnegative")


@dataclass
class _LeaderState:
    informed_at: float
    hops: int
    payload: bytes
    origin: int
    seen: set[int]
    dead: set[int] = field(default_factory=set)
    rounds: int = 0
    probes: dict[int, float] = field(default_factory=dict)
    acks: dict[int, tuple[float, bool]] = field(default_factory=dict)
    deadline: SimEvent | None = None


@dataclass(frozen=True)
class _ProbeDeadline:
    digest: bytes
    round: int


@dataclass(frozen=True)
class _NextRound:
    digest: bytes


@dataclass
class PropagationReport:
    digest: bytes
    origin: int
    start_time: float
    receipts: dict[int, tuple[float, int]]   # leader -> (receipt_time, hops)
    uninformed: list[int]
    clusters: dict[int, int]

    @property
    def complete(self) -> bool:
        return not self.uninformed

    @property
    def max_hops(self) -> int:
        return max((h for _, h in self.receipts.values()), default=0)

    @property
    def last_receipt(self) -> float:
        return max((t for t, _ in self.receipts.values()), default=self.start_time)

    def coverage(self, leaders: Iterable[int]) -> float:
        leaders = list(leaders)
        if not leaders:
            return 1.0
        return sum(1 for l in leaders if l in self.receipts) / len(leaders)

    def to_frame(self) -> pd.DataFrame:
        rows = [(leader, self.clusters[leader], t, h) for leader, (t, h) in sorted(self.receipts.items())]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path: str | Path):
        self.to_frame().to_csv(path, index=False, float_format="%.9f")


DeliverCallback = Callable[[int, bytes, bytes], None]


class GossipService(Logger):
    """
    Push gossip among the leaders of `directory`, running inside `sim`.

    Args:
        sim (Simulator): Simulator with every leader registered.
        directory (LeaderDirectory): Leaders and positions.
        params (GossipParams): Relay radius, fanout, TTL and weight form.
        seed (int, optional): Seed of the relay sampling RNG.
        on_deliver (DeliverCallback, optional): Called as (leader, digest, payload) on first receipt.
    """

    def __init__(self, sim: Simulator, directory: LeaderDirectory, params: GossipParams | None = None,
                 seed: int = 0, on_deliver: DeliverCallback | None = None):
        super().__init__()
        self.sim = sim
        self.directory = directory
        self.params = params or GossipParams()
        self.rng = np.random.default_rng(seed)
        self.on_deliver = on_deliver
        self._states: dict[int, dict[bytes, _LeaderState]] = {l: {} for l in directory.ids}
        self._starts: dict[bytes, tuple[int, float]] = {}
        for leader in directory.ids:
            sim.attach(leader, self._on_event)

    def disseminate(self, digest: bytes, origin: int, payload: bytes = b""):
        """Marks `origin` informed at its current time and starts its first round."""
        if origin not in self.directory:
            raise ValueError(f"Origin {origin} is not a leader")
        now = self.sim.now
        self._starts[digest] = (origin, now)
        self._states[origin][digest] = _LeaderState(now, 0, payload, origin, {origin})
        self._start_round(origin, digest)

    def report(self, digest: bytes) -> PropagationReport:
        origin, start = self._starts[digest]
        receipts = {leader: (states[digest].informed_at, states[digest].hops)
                    for leader, states in self._states.items() if digest in states}
        uninformed = [l for l in self.directory.ids if l not in receipts]
        clusters = {l.node_id: l.cluster_id for l in self.directory}
        return PropagationReport(digest, origin, start, receipts, uninformed, clusters)

    # --- rounds ---------------------------------------------------------
    def _start_round(self, leader: int, digest: bytes):
        st = self._states[leader][digest]
        everyone = len(st.seen) >= len(self.directory)
        if everyone or st.rounds >= self.params.ttl or st.hops >= self.params.ttl:
            return
        st.rounds += 1
        known = st.seen | st.dead
        candidates = self.directory.within(leader, self.params.eps3, exclude=known)
        if not candidates:
            fallback = self.directory.nearest(leader, exclude=known)
            candidates = [] if fallback is None else [fallback]
        if not candidates:
            return
        st.probes, st.acks = {}, {}
        probe = Probe(digest, leader)
        size = len(probe.encode())
        for candidate in candidates:
            st.probes[candidate] = self.sim.now
            self.sim.send(leader, candidate, probe, size)
        st.deadline = self.sim.schedule_timer(leader, self.params.probe_timeout, _ProbeDeadline(digest, st.rounds))

    def _on_event(self, event: SimEvent):
        leader = event.destination
        message = event.payload
        if isinstance(message, Probe):
            ack = ProbeAck(message.digest, leader, message.digest in self._states[leader])
            self.sim.send(leader, message.sender, ack, len(ack.encode()))
        elif isinstance(message, ProbeAck):
            st = self._states[leader].get(message.digest)
            if st is None or message.sender not in st.probes or message.sender in st.acks or st.deadline is None:
                return
            st.acks[message.sender] = (self.sim.now - st.probes[message.sender], message.informed)
            if message.informed:
                st.seen.add(message.sender)
            if len(st.acks) == len(st.probes):
                self._conclude(leader, message.digest)
        elif isinstance(message, _ProbeDeadline):
            st = self._states[leader].get(message.digest)
            if st is not None and st.rounds == message.round and st.deadline is not None:
                self._conclude(leader, message.digest)
        elif isinstance(message, _NextRound):
            self._start_round(leader, message.digest)
        elif isinstance(message, GossipMessage):
            self._on_gossip(leader, message)

    def _conclude(self, leader: int, digest: bytes):
        st = self._states[leader][digest]
        self.sim.cancel(st.deadline)
        st.deadline = None
        silent = [c for c in st.probes if c not in st.acks]
        st.dead.update(silent)
        responsive = [c for c, (_, informed) in sorted(st.acks.items()) if not informed]
        if responsive:
            weights = relay_weights(responsive,
                                    [self.directory.distance_m(leader, c) for c in responsive],
                                    [st.acks[c][0] for c in responsive],
                                    self.params.weight_form)
            relays = select_relays(weights, self.params.fanout, self.rng)
            # relays join `seen` once a probe ack reports them informed
            message = GossipMessage(digest, st.origin, st.hops + 1, tuple(sorted(st.seen)), st.payload)
            size = len(message.encode())
            for relay in relays:
                self.sim.send(leader, relay, message, size)
            self.log.debug(f"Leader {leader} relayed {digest.hex()[:8]} to {relays} (hop {st.hops + 1})")
        if silent:
            self.log.debug(f"⚠️ Leader {leader}: no probe answer from {silent}")
        self.sim.schedule_timer(leader, self.params.round_interval, _NextRound(digest))

    def _on_gossip(self, leader: int, message: GossipMessage):
        if message.digest in self._states[leader]:
            return
        now = self.sim.now
        st = _LeaderState(now, message.hops, message.payload, message.origin, set(message.seen) | {leader})
        self._states[leader][message.digest] = st
        if self.on_deliver is not None:
            self.on_deliver(leader, message.digest, message.payload)
        self._start_round(leader, message.digest)


def disseminate(digest: bytes, origin: int, directory: LeaderDirectory, params: GossipParams | None = None, *,
                faults: FaultModel | None = None, latency: LatencyModel | None = None, seed: int = 0,
                payload: bytes = b"", max_time: float = 600.0) -> PropagationReport:
    """One-shot dissemination in a fresh simulator holding only the leaders."""
    sim = Simulator(latency or LatencyModel(), faults or FaultModel(), seed=seed, record_trace=False)
    for leader in directory:
        sim.register(leader.node_id, leader.lat, leader.lon, leader.capability)
    service = GossipService(sim, directory, params, seed=seed)
    service.disseminate(digest, origin, payload)
    sim.run_until_quiescent(max_time)
    report = service.report(digest)
    if not report.complete:
        Logger("gossip").log.info(f"⚠️ {len(report.uninformed)} leaders never received {digest.hex()[:8]}")
    return report
