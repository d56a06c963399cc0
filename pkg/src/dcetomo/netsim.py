"""Deterministic discrete-event simulator for tree-routed unicast networks.

Time is integer nanoseconds.  Every directed link is a FIFO transmitter with
a fixed bandwidth and propagation delay; because service is deterministic,
a packet's departure is computed when it joins the queue, so the only events
are packet arrivals at nodes and background source ticks.  Ties are broken by
insertion order.
"""

from __future__ import annotations

import csv
import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    Disconnected,
    MultipleParents,
    NotMeasurementPacket,
    PacketTooLarge,
    RoutingLoop,
    TopologyError,
    UnknownReceiver,
)
from .timing import TimingRecord

MTU = 1500
DEFAULT_BANDWIDTH = 100_000_000  # bits/s
NS_PER_S = 1_000_000_000

MEASUREMENT = "measurement"
BACKGROUND = "background"

TRACE_COLUMNS = [
    "packet_id",
    "kind",
    "serial_id",
    "k",
    "src",
    "dst",
    "sender_ts_ns",
    "arrival_ns",
    "shared_delay_ns",
    "total_delay_ns",
]


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkSpec:
    bandwidth: int = DEFAULT_BANDWIDTH  # bits/s
    propagation: int = 0  # ns
    queue_cap: Optional[int] = None  # bytes waiting, excluding the one in service

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise TopologyError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.propagation < 0:
            raise TopologyError(f"propagation must be >= 0, got {self.propagation}")
        if self.queue_cap is not None and self.queue_cap < 0:
            raise TopologyError(f"queue cap must be >= 0, got {self.queue_cap}")

    def serialization(self, size: int) -> int:
        """Transmission time of ``size`` bytes, rounded up to whole ns."""
        return -(-size * 8 * NS_PER_S // self.bandwidth)


@dataclass
class TreeTopology:
    root: str
    parent: dict
    links: dict  # (parent, child) -> LinkSpec
    receivers: tuple = ()
    background_hosts: tuple = ()
    _lca: dict = field(default_factory=dict, repr=False)
    _routes: dict = field(default_factory=dict, repr=False)

    @property
    def nodes(self) -> list:
        return [self.root] + list(self.parent)

    def children(self, node: str) -> list:
        return [c for c, p in self.parent.items() if p == node]

    def ancestors(self, node: str) -> list:
        """``node`` followed by its ancestors up to the root."""
        out = [node]
        while out[-1] != self.root:
            out.append(self.parent[out[-1]])
        return out

    def lca(self, a: str, b: str) -> str:
        key = (a, b) if a <= b else (b, a)
        if key not in self._lca:
            up_a = set(self.ancestors(a))
            self._lca[key] = next(n for n in self.ancestors(b) if n in up_a)
        return self._lca[key]

    def route(self, src: str, dst: str) -> tuple:
        key = (src, dst)
        if key not in self._routes:
            up = self.ancestors(src)
            down = self.ancestors(dst)
            top = self.lca(src, dst)
            path = up[: up.index(top) + 1] + list(reversed(down[: down.index(top)]))
            self._routes[key] = tuple(path)
        return self._routes[key]

    def link(self, u: str, v: str) -> LinkSpec:
        """Spec of the tree edge between ``u`` and ``v`` in either direction."""
        return self.links[(u, v)] if (u, v) in self.links else self.links[(v, u)]

    def shared_links(self, a: str, b: str) -> list:
        """Directed links from the root down to the branching node of a and b."""
        path = self.route(self.root, self.lca(a, b))
        return list(zip(path, path[1:]))


def _link_from_doc(doc: dict) -> LinkSpec:
    cap = doc.get("queue_cap_bytes")
    return LinkSpec(
        bandwidth=int(doc.get("bandwidth_bps", DEFAULT_BANDWIDTH)),
        propagation=int(round(float(doc.get("propagation_us", 0.0)) * 1000)),
        queue_cap=None if cap is None else int(cap),
    )


def build_topology(spec: dict) -> TreeTopology:
    """Validate a declarative topology description and build the tree.

    ``spec`` has keys ``root``, ``links`` (a list of mappings with ``parent``,
    ``child`` and optional ``bandwidth_bps``, ``propagation_us``,
    ``queue_cap_bytes``), ``receivers`` and ``background_hosts``.
    """
    root = spec["root"]
    parent: dict = {}
    links: dict = {}
    for doc in spec.get("links", []):
        p, c = doc["parent"], doc["child"]
        if p == c:
            raise RoutingLoop(f"self-loop at {p!r}")
        if c in parent and parent[c] != p:
            raise MultipleParents(f"{c!r} has parents {parent[c]!r} and {p!r}")
        parent[c] = p
        links[(p, c)] = _link_from_doc(doc)
    if root in parent:
        raise RoutingLoop(f"root {root!r} has parent {parent[root]!r}")
    # every node must climb to the root without revisiting anything
    for node in parent:
        seen = {node}
        cur = node
        while cur != root:
            if cur not in parent:
                raise Disconnected(f"{node!r} is not connected to root {root!r}")
            cur = parent[cur]
            if cur in seen:
                raise RoutingLoop(f"cycle through {cur!r}")
            seen.add(cur)
    known = set(parent) | {root}
    for group in ("receivers", "background_hosts"):
        for n in spec.get(group, []):
            if n not in known:
                raise Disconnected(f"{group[:-1]} {n!r} is not reachable from root {root!r}")
    topo = TreeTopology(
        root,
        parent,
        links,
        tuple(spec.get("receivers", [])),
        tuple(spec.get("background_hosts", [])),
    )
    for r in topo.receivers:
        if topo.children(r):
            raise TopologyError(f"receiver {r!r} is not a leaf")
    for a, b in itertools.combinations(topo.receivers, 2):
        topo.lca(a, b)
    return topo


# ---------------------------------------------------------------------------
# packets and traces
# ---------------------------------------------------------------------------


class Packet:
    __slots__ = (
        "id",
        "size",
        "src",
        "dst",
        "kind",
        "serial_id",
        "k",
        "ir_marks",
        "sender_ts",
        "route",
        "hop",
        "emitted",
        "arrival",
        "dropped",
        "hops",
    )

    def __init__(self, pid, size, src, dst, kind, route, serial_id=None, k=None, ir_marks=()):
        self.id = pid
        self.size = size
        self.src = src
        self.dst = dst
        self.kind = kind
        self.serial_id = serial_id
        self.k = k
        self.ir_marks = tuple(ir_marks)
        self.sender_ts = None
        self.route = route
        self.hop = 0
        self.emitted = None
        self.arrival = None
        self.dropped = False
        # (u, v, enqueue_ns, queueing_ns, serialization_ns, propagation_ns)
        self.hops = []

    @property
    def total_delay(self) -> Optional[int]:
        return None if self.arrival is None else self.arrival - self.emitted


@dataclass(frozen=True)
class Clock:
    """Local clock: true time plus a constant offset, with an optional rate error."""

    offset: int = 0
    drift_ppm: float = 0.0

    def read(self, t: int) -> int:
        if self.drift_ppm:
            return t + self.offset + int(t * self.drift_ppm // 1_000_000)
        return t + self.offset


@dataclass
class PairSamples:
    """Aligned measurement packets of one receiver pair, ordered by serial."""

    pair: tuple
    packets_a: list
    packets_b: list


class PacketTrace:
    """Per-packet delay decomposition collected during a run."""

    def __init__(self, topology: TreeTopology, clocks: dict):
        self.topology = topology
        self.clocks = clocks
        self.packets: dict = {}

    def __len__(self):
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets.values())

    def measurement_packets(self) -> list:
        return [p for p in self.packets.values() if p.kind == MEASUREMENT]

    def conservation_violations(self) -> list:
        """Ids of delivered packets whose hop components do not add up."""
        bad = []
        for p in self.packets.values():
            if p.arrival is None:
                continue
            total = sum(q + s + g for _, _, _, q, s, g in p.hops)
            if p.emitted + total != p.arrival:
                bad.append(p.id)
        return bad

    def fifo_violations(self) -> list:
        """Links where service order differs from queue-join order."""
        per_link: dict = {}
        for p in self.packets.values():
            for u, v, t_in, q, _, _ in p.hops:
                per_link.setdefault((u, v), []).append((t_in, p.id, t_in + q))
        bad = []
        for link, rows in per_link.items():
            rows.sort()
            starts = [start for _, _, start in rows]
            if any(b < a for a, b in zip(starts, starts[1:])):
                bad.append(link)
        return bad

    def pair_samples(self) -> dict:
        """Group delivered-or-lost marked packets into per-pair samples."""
        by_key: dict = {}
        for p in self.packets.values():
            if p.kind != MEASUREMENT:
                continue
            for pair in p.ir_marks:
                by_key.setdefault((pair, p.serial_id), {})[p.dst] = p
        out: dict = {}
        for (pair, serial), pkts in sorted(by_key.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            if len(pkts) != 2:
                continue
            s = out.setdefault(pair, PairSamples(pair, [], []))
            s.packets_a.append(pkts[pair[0]])
            s.packets_b.append(pkts[pair[1]])
        return out

    def timing_record(self, samples: PairSamples, delta_const: Optional[int] = None) -> TimingRecord:
        """Build the receiver-side view of a pair; lost packets become ``None``."""
        a, b = samples.pair
        ca, cb = self.clocks[a], self.clocks[b]
        return TimingRecord(
            pair_id=samples.pair,
            sender_ts=[p.sender_ts for p in samples.packets_a],
            arrivals_a=[None if p.arrival is None else ca.read(p.arrival) for p in samples.packets_a],
            arrivals_b=[None if p.arrival is None else cb.read(p.arrival) for p in samples.packets_b],
            delta_const=delta_const,
            seq=[p.k for p in samples.packets_a],
        )

    def timing_records(self, delta_const: Optional[int] = None) -> dict:
        return {
            pair: self.timing_record(s, delta_const) for pair, s in self.pair_samples().items()
        }

    def shared_path_delay(self, packet, pair: Optional[tuple] = None) -> int:
        """Time ``packet`` spent on the links from the root to the branching node."""
        if isinstance(packet, int):
            packet = self.packets[packet]
        if packet.kind != MEASUREMENT:
            raise NotMeasurementPacket(f"packet {packet.id} is {packet.kind}")
        if pair is None:
            if not packet.ir_marks:
                raise NotMeasurementPacket(f"packet {packet.id} carries no pair mark")
            pair = packet.ir_marks[0]
        shared = set(self.topology.shared_links(*pair))
        return sum(q + s + g for u, v, _, q, s, g in packet.hops if (u, v) in shared)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for p in self.packets.values():
                shared = ""
                if p.kind == MEASUREMENT and p.ir_marks and p.arrival is not None:
                    shared = self.shared_path_delay(p)
                w.writerow(
                    [
                        p.id,
                        p.kind,
                        "" if p.serial_id is None else p.serial_id,
                        "" if p.k is None else p.k,
                        p.src,
                        p.dst,
                        "" if p.sender_ts is None else p.sender_ts,
                        "" if p.arrival is None else p.arrival,
                        shared,
                        "" if p.arrival is None else p.total_delay,
                    ]
                )


# ---------------------------------------------------------------------------
# background traffic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonSourceSpec:
    host: str
    rate: float  # bytes/s
    packet_size: int
    sink: str
    seed: int

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"rate must be >= 0, got {self.rate}")
        if not 1 <= self.packet_size <= MTU:
            raise PacketTooLarge(f"background packet size {self.packet_size} outside 1..{MTU}")

    @property
    def mean_interarrival_ns(self) -> float:
        return self.packet_size / self.rate * NS_PER_S


def poisson_background(spec: PoissonSourceSpec, start: int = 0, chunk: int = 4096) -> Iterator[int]:
    """Emission times (ns) with exponential gaps of mean ``packet_size/rate``."""
    if spec.rate == 0:
        return
    rng = np.random.default_rng(spec.seed)
    mean = spec.mean_interarrival_ns
    t = float(start)
    while True:
        gaps = rng.exponential(mean, size=chunk)
        for cum in np.cumsum(gaps) + t:
            yield int(cum)
        t = float(cum)


# ---------------------------------------------------------------------------
# simulator
# ---------------------------------------------------------------------------


class Simulator:
    """Single-threaded event loop over a :class:`TreeTopology`."""

    def __init__(
        self,
        topology: TreeTopology,
        clocks: Optional[dict] = None,
        trace_background: bool = False,
    ):
        self.topology = topology
        self.now = 0
        self.events_processed = 0
        self.trace_background = trace_background
        self.sources_active = True
        clocks = dict(clocks or {})
        for n in topology.nodes:
            clocks.setdefault(n, Clock())
        self.trace = PacketTrace(topology, clocks)
        self._heap: list = []
        self._seq = itertools.count()
        self._pid = itertools.count()
        self._free_at: dict = {}
        self._waiting: dict = {}  # link -> deque of (start_ns, size)
        self._delivery_hooks: list = []

    @property
    def clocks(self) -> dict:
        return self.trace.clocks

    def schedule(self, t: int, fn: Callable, arg=None) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        heapq.heappush(self._heap, (t, next(self._seq), fn, arg))

    def on_delivery(self, hook: Callable) -> None:
        self._delivery_hooks.append(hook)

    def stop_sources(self) -> None:
        self.sources_active = False

    # -- packet injection ---------------------------------------------------

    def _new_packet(self, size, src, dst, kind, **kw) -> Packet:
        if not 1 <= size <= MTU:
            raise PacketTooLarge(f"packet size {size} outside 1..{MTU}")
        pkt = Packet(next(self._pid), size, src, dst, kind, self.topology.route(src, dst), **kw)
        if kind == MEASUREMENT or self.trace_background:
            self.trace.packets[pkt.id] = pkt
        return pkt

    def emit_serial(self, serial_id: int, k: int, order: Sequence[str], size: int, at: int, marks=()) -> list:
        """Queue one packet per host in ``order`` back to back at the root.

        ``marks`` lists the adjacent host pairs carrying an IR; each pair is
        stored sorted by position in ``topology.receivers``.
        """
        rx = self.topology.receivers
        for h in order:
            if h not in rx:
                raise UnknownReceiver(f"{h!r} is not a receiver")
        if len(set(order)) != len(order):
            raise UnknownReceiver(f"duplicate receiver in {tuple(order)}")
        marks = [tuple(sorted(m, key=rx.index)) for m in marks]
        root = self.topology.root
        pkts = []
        for h in order:
            ir = tuple(m for m in marks if h in m)
            pkts.append(self._new_packet(size, root, h, MEASUREMENT, serial_id=serial_id, k=k, ir_marks=ir))
        self.schedule(at, self._inject_burst, pkts)
        return pkts

    def emit_pair(self, serial_id: int, k: int, pair: Sequence[str], size: int, at: int) -> list:
        a, b = pair
        if a == b:
            raise UnknownReceiver(f"pair needs two distinct receivers, got ({a!r}, {b!r})")
        return self.emit_serial(serial_id, k, (a, b), size, at, marks=[(a, b)])

    def send(self, src: str, dst: str, size: int, at: int, kind: str = BACKGROUND) -> Packet:
        pkt = self._new_packet(size, src, dst, kind)
        self.schedule(at, self._inject_burst, [pkt])
        return pkt

    def _inject_burst(self, pkts) -> None:
        sender = self.clocks[self.topology.root]
        for p in pkts:
            p.emitted = self.now
            if p.kind == MEASUREMENT:
                p.sender_ts = sender.read(self.now)
            self._arrive(p)

    # -- forwarding ---------------------------------------------------------

    def _arrive(self, p: Packet) -> None:
        now = self.now
        route = p.route
        if p.hop == len(route) - 1:
            p.arrival = now
            for hook in self._delivery_hooks:
                hook(p)
            return
        u, v = route[p.hop], route[p.hop + 1]
        link = (u, v)
        spec = self.topology.link(u, v)
        free = self._free_at.get(link, 0)
        start = free if free > now else now
        if spec.queue_cap is not None:
            waiting = self._waiting.setdefault(link, deque())
            while waiting and waiting[0][0] <= now:
                waiting.popleft()
            if sum(sz for _, sz in waiting) + p.size > spec.queue_cap and start > now:
                p.dropped = True
                for hook in self._delivery_hooks:
                    hook(p)
                return
            waiting.append((start, p.size))
        ser = spec.serialization(p.size)
        self._free_at[link] = start + ser
        p.hops.append((u, v, now, start - now, ser, spec.propagation))
        p.hop += 1
        heapq.heappush(self._heap, (start + ser + spec.propagation, next(self._seq), self._arrive, p))

    # -- background ---------------------------------------------------------

    def add_source(self, spec: PoissonSourceSpec, start: int = 0, stop: Optional[int] = None) -> None:
        if spec.host not in self.topology.nodes or spec.sink not in self.topology.nodes:
            raise TopologyError(f"source {spec.host!r} -> {spec.sink!r} uses unknown nodes")
        times = poisson_background(spec, start)
        self._next_source_tick(spec, times, stop)

    def _next_source_tick(self, spec, times, stop) -> None:
        t = next(times, None)
        if t is None or (stop is not None and t > stop):
            return
        self.schedule(t, self._source_tick, (spec, times, stop))

    def _source_tick(self, arg) -> None:
        spec, times, stop = arg
        if not self.sources_active:
            return
        pkt = self._new_packet(spec.packet_size, spec.host, spec.sink, BACKGROUND)
        pkt.emitted = self.now
        self._arrive(pkt)
        self._next_source_tick(spec, times, stop)

    # -- main loop ----------------------------------------------------------

    def run(self, horizon: Optional[int] = None) -> PacketTrace:
        """Process events in (time, insertion) order up to ``horizon`` ns."""
        heap = self._heap
        while heap:
            if horizon is not None and heap[0][0] > horizon:
                break
            t, _, fn, arg = heapq.heappop(heap)
            self.now = t
            self.events_processed += 1
            fn(arg)
        return self.trace


def random_clocks(nodes: Sequence[str], seed: int, max_offset_ns: int = NS_PER_S) -> dict:
    """Unsynchronized clocks: each node gets an independent constant offset."""
    rng = np.random.default_rng(seed)
    return {n: Clock(int(rng.integers(-max_offset_ns, max_offset_ns + 1))) for n in nodes}
