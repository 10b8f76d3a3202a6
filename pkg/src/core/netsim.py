"""
Deterministic discrete-event network simulator.

Every protocol in the stack runs on top of `Simulator`: nodes are registered
with a position and a communication capability, handlers react to delivered
messages and local timers, and all transport goes through `send`. Events fire
in `(fire_time, seq)` order, so a run is a pure function of its configuration
and seed.

Transport of one message from `src` to `dst`:

    start    = max(now, sender's outgoing link free time)
    arrival  = start + size / bandwidth + base_latency + prop_coeff * km + jitter

On arrival the receiver pays `service_base / capability` before its handler
runs, and `compute(node, seconds)` inside a handler adds further busy time
scaled the same way. Messages that reach a busy node wait until it is free.

Jitter and link drops are drawn from a hash of `(seed, src, dst, k)` where k
counts the messages `src` has sent so far, so randomness on one link does not
shift when unrelated traffic is reordered.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable

import pandas as pd

from src.core.errors import UnknownNodeError
from src.core.geo import haversine_m
from src.core.logger.log_setup import SimTimeFilter
from src.core.logger.logger import Logger


# --- faults --------------------------------------------------------------

class FaultKind(str, Enum):
    HONEST = "honest"
    CRASH = "crash"
    BYZANTINE = "byzantine"


# (src, dst, message) -> message actually sent, or None to suppress it
Strategy = Callable[[int, int, Any], Any]


@dataclass(frozen=True)
class NodeFault:
    kind: FaultKind = FaultKind.HONEST
    crash_at: float = 0.0
    strategy: Strategy | None = None


HONEST = NodeFault()


@dataclass
class FaultModel:
    """Per-node fault classes plus a uniform link drop rate."""
    nodes: dict[int, NodeFault] = field(default_factory=dict)
    link_drop_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.link_drop_rate <= 1.0:
            raise ValueError(f"link_drop_rate must lie in [0, 1], got {self.link_drop_rate}")

    def crash(self, node_id: int, at: float = 0.0) -> FaultModel:
        self.nodes[node_id] = NodeFault(FaultKind.CRASH, crash_at=at)
        return self

    def byzantine(self, node_id: int, strategy: Strategy) -> FaultModel:
        self.nodes[node_id] = NodeFault(FaultKind.BYZANTINE, strategy=strategy)
        return self

    def fault_of(self, node_id: int) -> NodeFault:
        return self.nodes.get(node_id, HONEST)

    def is_crashed(self, node_id: int, now: float) -> bool:
        fault = self.nodes.get(node_id)
        return fault is not None and fault.kind is FaultKind.CRASH and now >= fault.crash_at

    def is_faulty(self, node_id: int) -> bool:
        return self.fault_of(node_id).kind is not FaultKind.HONEST

    def faulty_nodes(self) -> set[int]:
        return {n for n, f in self.nodes.items() if f.kind is not FaultKind.HONEST}

    def byzantine_count(self, node_ids: Iterable[int]) -> int:
        return sum(1 for n in node_ids if self.fault_of(n).kind is FaultKind.BYZANTINE)


# --- latency -------------------------------------------------------------

@dataclass(frozen=True)
class LatencyModel:
    base_latency: float = 0.002        # s, fixed per-hop cost
    prop_coeff: float = 0.000005       # s per km
    jitter: float = 0.0005             # s, uniform in [0, jitter)
    bandwidth: float = 12_500_000.0    # bytes per second per outgoing link
    service_base: float = 0.0002       # s per received message at capability 1

    def __post_init__(self):
        if self.base_latency <= 0:
            raise ValueError(f"base_latency must be positive, got {self.base_latency}")
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if min(self.prop_coeff, self.jitter, self.service_base) < 0:
            raise ValueError("prop_coeff, jitter and service_base must be nonnegative")

    def transmission(self, size: int) -> float:
        return size / self.bandwidth

    def propagation(self, distance_m: float, u: float = 0.0) -> float:
        """Time on the wire after serialization; `u` in [0, 1) scales the jitter."""
        return self.base_latency + self.prop_coeff * distance_m / 1000.0 + self.jitter * u

    def latency(self, distance_m: float, size: int, u: float = 0.0) -> float:
        return self.transmission(size) + self.propagation(distance_m, u)

    def service_time(self, capability: float) -> float:
        return scaled_cost(self.service_base, capability)


def scaled_cost(seconds: float, capability: float) -> float:
    if seconds == 0 or math.isinf(capability):
        return 0.0
    return seconds / max(capability, 1e-9)


@dataclass(frozen=True)
class CryptoCosts:
    """Service times of the crypto primitives at capability 1, in seconds."""
    scalar_mul: float = 0.0012
    hash: float = 0.000004
    field_mul: float = 0.0000008
    mac: float = 0.000004
    source: str = "fixed"

    @classmethod
    def measured(cls, group, repeats: int = 20) -> CryptoCosts:
        """Wall-clock microbenchmarks of `group`; non-reproducible by nature."""
        import random

        rng = random.Random(0)
        ks = [group.random_scalar(rng) for _ in range(repeats)]
        t0 = time.perf_counter()
        for k in ks:
            group.scalar_mul(group.generator, k)
        scalar_mul = (time.perf_counter() - t0) / repeats

        t0 = time.perf_counter()
        for i in range(repeats * 50):
            group.digest(i.to_bytes(8, "big"))
        digest = (time.perf_counter() - t0) / (repeats * 50)

        t0 = time.perf_counter()
        acc = 1
        for k in ks * 50:
            acc = (acc * k.value) % group.order
        field_mul = (time.perf_counter() - t0) / (repeats * 50)

        return cls(scalar_mul=scalar_mul, hash=digest, field_mul=field_mul, mac=digest, source="measured")

    def as_dict(self) -> dict[str, float | str]:
        return {
            "scalar_mul": self.scalar_mul,
            "hash": self.hash,
            "field_mul": self.field_mul,
            "mac": self.mac,
            "source": self.source,
        }


# --- events and traces ---------------------------------------------------

@dataclass(frozen=True)
class SimNode:
    node_id: int
    lat: float
    lon: float
    capability: float = math.inf


@dataclass(frozen=True, order=True)
class SimEvent:
    fire_time: float
    seq: int
    destination: int = field(compare=False)
    source: int | None = field(compare=False, default=None)   # None for local timers
    payload: Any = field(compare=False, default=None)
    size: int = field(compare=False, default=0)

    @property
    def is_timer(self) -> bool:
        return self.source is None


@dataclass(frozen=True)
class TraceEntry:
    fire_time: float
    src: int
    dst: int
    msg_type: str
    size: int


TRACE_COLUMNS = ["fire_time", "src", "dst", "msg_type", "size"]


@dataclass
class Trace:
    """Delivered messages of one `run_until_quiescent` call."""
    entries: list[TraceEntry] = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)
    truncated: bool = False
    end_time: float = 0.0
    dropped: int = 0

    def __len__(self) -> int:
        return sum(self.counts.values())

    def message_count(self, msg_types: Iterable[str] | None = None) -> int:
        if msg_types is None:
            return len(self)
        return sum(self.counts[t] for t in msg_types)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([(e.fire_time, e.src, e.dst, e.msg_type, e.size) for e in self.entries],
                            columns=TRACE_COLUMNS)

    def to_csv(self, path: str | Path):
        self.to_frame().to_csv(path, index=False, float_format="%.9f")


def trace_type(message: Any) -> str:
    return getattr(message, "trace_type", type(message).__name__)


Handler = Callable[[SimEvent], None]

_BATCH = 64
_WAKE = object()   # queue marker: hand the next deferred event to its node


@dataclass
class _Outbox:
    """Copies of one broadcast whose deliveries are not pushed yet."""
    src: int
    dsts: list[int]
    message: Any
    size: int
    start: float
    tx: float
    counter: int
    next: int = 0


class Simulator(Logger):
    """
    Single-threaded event loop over registered nodes.

    Handlers run to completion; inside a handler `now` is the node-local clock,
    which `compute` advances.
    """

    def __init__(self, latency: LatencyModel | None = None, faults: FaultModel | None = None,
                 seed: int = 0, record_trace: bool = True):
        super().__init__("netsim")
        self.latency = latency or LatencyModel()
        self.faults = faults or FaultModel()
        self.seed = seed
        self.record_trace = record_trace
        self.nodes: dict[int, SimNode] = {}
        self._handlers: dict[int, list[Handler]] = {}
        self._queue: list[tuple] = []
        self._seq = 0
        self._clock = 0.0
        self._active: int | None = None
        self._cursor = 0.0
        self._busy_until: dict[int, float] = {}
        self._link_free: dict[int, float] = {}
        self._send_counter: Counter = Counter()
        self._timers: set[int] = set()       # pending timer seqs
        self._cancelled: set[int] = set()
        self._inbox: defaultdict[int, list[tuple]] = defaultdict(list)
        self._waking: set[int] = set()

    # --- topology -------------------------------------------------------
    def register(self, node_id: int, lat: float, lon: float, capability: float = math.inf,
                 handler: Handler | None = None) -> SimNode:
        node = SimNode(node_id, lat, lon, capability)
        self.nodes[node_id] = node
        self._handlers.setdefault(node_id, [])
        if handler is not None:
            self._handlers[node_id].append(handler)
        return node

    def attach(self, node_id: int, handler: Handler):
        """Adds a handler; every handler of a node sees every event addressed to it."""
        self._node(node_id)
        self._handlers[node_id].append(handler)

    def _node(self, node_id: int) -> SimNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"Node {node_id} is not registered") from None

    def distance_m(self, a: int, b: int) -> float:
        na, nb = self._node(a), self._node(b)
        return haversine_m(na.lat, na.lon, nb.lat, nb.lon)

    # --- clock ----------------------------------------------------------
    @property
    def now(self) -> float:
        return self._cursor if self._active is not None else self._clock

    def _local_now(self, node_id: int) -> float:
        if self._active == node_id:
            return self._cursor
        return max(self.now, self._busy_until.get(node_id, 0.0))

    def compute(self, node_id: int, seconds: float):
        """Charges `seconds / capability` of busy time to `node_id`."""
        cost = scaled_cost(seconds, self._node(node_id).capability)
        if self._active == node_id:
            self._cursor += cost
            self._busy_until[node_id] = self._cursor
        else:
            self._busy_until[node_id] = self._local_now(node_id) + cost

    # --- scheduling -----------------------------------------------------
    def _push(self, fire_time: float, destination: int, source: int | None, payload: Any, size: int) -> SimEvent:
        self._seq += 1
        heapq.heappush(self._queue, (fire_time, self._seq, destination, source, payload, size))
        return SimEvent(fire_time, self._seq, destination, source, payload, size)

    def _link_draws(self, src: int, dst: int, k: int) -> tuple[float, float]:
        digest = hashlib.blake2b(f"{self.seed}|{src}|{dst}|{k}".encode(), digest_size=16).digest()
        return int.from_bytes(digest[:8], "big") / 2 ** 64, int.from_bytes(digest[8:], "big") / 2 ** 64

    def _reserve(self, src: int, count: int) -> int:
        k = self._send_counter[src]
        self._send_counter[src] = k + count
        return k

    def _deliver(self, src: int, dst: int, message: Any, size: int, wire_done: float, k: int) -> SimEvent | None:
        fault = self.faults.fault_of(src)
        if fault.kind is FaultKind.BYZANTINE and fault.strategy is not None:
            message = fault.strategy(src, dst, message)
            if message is None:
                return None
        u_jitter, u_drop = self._link_draws(src, dst, k)
        if u_drop < self.faults.link_drop_rate:
            return None
        fire_time = wire_done + self.latency.propagation(self.distance_m(src, dst), u_jitter)
        return self._push(fire_time, dst, src, message, size)

    def send(self, src: int, dst: int, message: Any, size: int) -> SimEvent | None:
        """
        Schedules delivery of `message` from `src` to `dst`.

        Returns:
            SimEvent | None: The scheduled delivery, or None when the message was
            dropped, suppressed by a Byzantine strategy, or sent by a crashed node.

        Raises:
            UnknownNodeError: If either endpoint is not registered.
        """
        self._node(src)
        self._node(dst)
        departure = self._local_now(src)
        if self.faults.is_crashed(src, departure):
            return None
        k = self._reserve(src, 1)
        start = max(departure, self._link_free.get(src, 0.0))
        wire_done = start + self.latency.transmission(size)
        self._link_free[src] = wire_done
        return self._deliver(src, dst, message, size, wire_done, k)

    def broadcast(self, src: int, dsts: Iterable[int], message: Any, size: int) -> int:
        """
        Sends `message` to every node of `dsts` except `src`, back to back on the
        sender's link.

        Large fan-outs are expanded lazily: transmission slots and link draws are
        reserved now, deliveries are pushed in batches as the link drains.

        Returns:
            int: Number of copies put on the wire.
        """
        self._node(src)
        targets = [d for d in dsts if d != src]
        for dst in targets:
            self._node(dst)
        if len(targets) <= _BATCH:
            return sum(1 for dst in targets if self.send(src, dst, message, size) is not None)
        departure = self._local_now(src)
        if self.faults.is_crashed(src, departure):
            return 0
        tx = self.latency.transmission(size)
        start = max(departure, self._link_free.get(src, 0.0))
        self._link_free[src] = start + tx * len(targets)
        box = _Outbox(src, targets, message, size, start, tx, self._reserve(src, len(targets)))
        self._expand(box)
        return len(targets)

    def _expand(self, box: _Outbox):
        end = min(box.next + _BATCH, len(box.dsts))
        for k in range(box.next, end):
            self._deliver(box.src, box.dsts[k], box.message, box.size, box.start + (k + 1) * box.tx, box.counter + k)
        box.next = end
        if end < len(box.dsts):
            self._seq += 1
            heapq.heappush(self._queue, (box.start + end * box.tx, self._seq, box.src, None, box, 0))

    def schedule_timer(self, node_id: int, delay: float, payload: Any) -> SimEvent:
        """Local timer; fires at the node without touching the network or the trace."""
        if delay < 0:
            raise ValueError(f"Timer delay must be nonnegative, got {delay}")
        self._node(node_id)
        event = self._push(self._local_now(node_id) + delay, node_id, None, payload, 0)
        self._timers.add(event.seq)
        return event

    def cancel(self, event: SimEvent | None):
        """Cancels a pending timer; timers that already fired are ignored."""
        if event is not None and event.seq in self._timers:
            self._timers.discard(event.seq)
            self._cancelled.add(event.seq)

    def pending(self) -> int:
        return len(self._queue) + sum(len(inbox) for inbox in self._inbox.values())

    # --- loop -----------------------------------------------------------
    def _wake_at(self, node_id: int, at: float):
        if node_id not in self._waking:
            self._waking.add(node_id)
            self._seq += 1
            heapq.heappush(self._queue, (at, self._seq, node_id, None, _WAKE, 0))

    def _next_deferred(self, node_id: int) -> tuple | None:
        inbox = self._inbox[node_id]
        while inbox:
            fire_time, seq, src, payload, size = heapq.heappop(inbox)
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            return fire_time, seq, src, payload, size
        return None

    def run_until_quiescent(self, max_time: float = math.inf) -> Trace:
        """
        Processes events in `(fire_time, seq)` order until the queue is empty or
        the next event lies beyond `max_time`.

        Events reaching a busy node wait in that node's inbox, in arrival order,
        and are handed over one at a time as the node frees up.

        Returns:
            Trace: Delivered messages; `truncated` is set when `max_time` cut the run short.
        """
        trace = Trace(end_time=self._clock)
        previous_clock = SimTimeFilter.clock
        SimTimeFilter.clock = lambda: self.now
        debug = self.log.isEnabledFor(10)
        processed = 0
        try:
            while self._queue:
                if self._queue[0][0] > max_time:
                    trace.truncated = True
                    self.log.warning(f"⚠️ max_time={max_time} reached with {self.pending()} pending events, trace truncated")
                    break
                fire_time, seq, dst, src, payload, size = heapq.heappop(self._queue)
                self._clock = fire_time
                if payload is _WAKE:
                    self._waking.discard(dst)
                    if fire_time < self._busy_until.get(dst, 0.0):
                        self._wake_at(dst, self._busy_until[dst])
                        continue
                    deferred = self._next_deferred(dst)
                    if deferred is None:
                        continue
                    _, seq, src, payload, size = deferred
                elif isinstance(payload, _Outbox):
                    self._expand(payload)
                    continue
                else:
                    if seq in self._cancelled:
                        self._cancelled.discard(seq)
                        continue
                    if fire_time < self._busy_until.get(dst, 0.0) or self._inbox.get(dst):
                        heapq.heappush(self._inbox[dst], (fire_time, seq, src, payload, size))
                        self._wake_at(dst, max(fire_time, self._busy_until.get(dst, 0.0)))
                        continue

                self._timers.discard(seq)
                if self.faults.is_crashed(dst, fire_time):
                    trace.dropped += 1
                else:
                    self._process(trace, fire_time, seq, dst, src, payload, size, debug)
                    processed += 1
                if self._inbox.get(dst):
                    self._wake_at(dst, max(fire_time, self._busy_until.get(dst, 0.0)))
        finally:
            SimTimeFilter.clock = previous_clock
        self.log.debug(f"✅ Processed {processed} events, {len(trace)} messages delivered, end t={trace.end_time:.6f}")
        return trace

    def _process(self, trace: Trace, fire_time: float, seq: int, dst: int, src: int | None, payload: Any,
                 size: int, debug: bool):
        event = SimEvent(fire_time, seq, dst, src, payload, size)
        self._active = dst
        self._cursor = fire_time
        if src is not None:
            self._cursor += self.latency.service_time(self.nodes[dst].capability)
            msg_type = trace_type(payload)
            trace.counts[msg_type] += 1
            if self.record_trace:
                trace.entries.append(TraceEntry(fire_time, src, dst, msg_type, size))
            if debug:
                self.log.debug(f"{src} -> {dst} {msg_type} ({size} B)")
        try:
            for handler in self._handlers[dst]:
                handler(event)
        finally:
            self._busy_until[dst] = max(self._busy_until.get(dst, 0.0), self._cursor)
            trace.end_time = max(trace.end_time, self._cursor)
            self._active = None
