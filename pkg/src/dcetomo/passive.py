"""Passive measurement scheduling over regular content distribution.

Every content block is sent as a *serial*: one packet per host, back to back,
in the order given by the current round's plan.  Adjacent packets in a serial
form measurement pairs and carry an IR mark naming both hosts.  Once a pair
has collected ``tau`` samples it is retired; when every pair of the round is
retired the rotation moves to the next ordering.  The orderings are zigzag
Hamiltonian paths over the hosts, so every pair becomes adjacent in some round.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import TooFewHosts, UnmarkedPair
from .netsim import MTU, Simulator

DEFAULT_TAU = 1550


def zigzag(r: int, n: int) -> tuple:
    """Host ordering ``r, r+1, r-1, r+2, r-2, ...`` modulo ``n``."""
    out = [r % n]
    step = 1
    while len(out) < n:
        out.append((r + step) % n)
        if len(out) < n:
            out.append((r - step) % n)
        step += 1
    return tuple(out)


def adjacent_pairs(order) -> list:
    return [tuple(sorted(p)) for p in zip(order, order[1:])]


def rotation_schedule(n: int) -> list:
    """Zigzag orderings, keeping only those that add an uncovered pair."""
    if n < 2:
        raise TooFewHosts(f"need at least 2 hosts, got {n}")
    want = set(itertools.combinations(range(n), 2))
    covered: set = set()
    rounds = []
    for r in range(n):
        order = zigzag(r, n)
        new = set(adjacent_pairs(order)) - covered
        if new:
            rounds.append(order)
            covered |= new
        if covered == want:
            break
    return rounds


@dataclass(frozen=True)
class SerialPlan:
    order: tuple
    ir_positions: frozenset  # {(p, p+1)} slots in ``order``
    round: int = 0
    serial_id: Optional[int] = None

    @property
    def marked_pairs(self) -> list:
        return [tuple(sorted((self.order[p], self.order[q]))) for p, q in sorted(self.ir_positions)]


@dataclass
class ScheduleState:
    n_hosts: int
    tau: int = DEFAULT_TAU
    counts: dict = field(default_factory=dict)
    round: int = 0
    rounds: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_hosts < 2:
            raise TooFewHosts(f"need at least 2 hosts, got {self.n_hosts}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not self.rounds:
            self.rounds = rotation_schedule(self.n_hosts)
        for pair in itertools.combinations(range(self.n_hosts), 2):
            self.counts.setdefault(pair, 0)

    def retired(self, pair) -> bool:
        return self.counts[pair] >= self.tau

    def round_pairs(self, r: Optional[int] = None) -> list:
        return adjacent_pairs(self.rounds[self.round if r is None else r])

    def marked_so_far(self) -> set:
        out: set = set()
        for r in range(self.round + 1):
            out.update(self.round_pairs(r))
        return out


def plan_round(state: ScheduleState) -> SerialPlan:
    """Ordering for the current round with every unretired adjacent pair marked."""
    order = state.rounds[state.round]
    marks = frozenset(
        (p, p + 1)
        for p, pair in enumerate(adjacent_pairs(order))
        if not state.retired(pair)
    )
    return SerialPlan(order, marks, state.round)


def record_sample(state: ScheduleState, pair) -> ScheduleState:
    """Count one delivered sample for ``pair``; rotate once the round is done.

    Samples still in flight when their pair retires are counted too, so
    counts may end slightly above ``tau``.
    """
    i, j = sorted(pair)
    key = (i, j)
    if key not in state.marked_so_far():
        raise UnmarkedPair(f"pair {key} has not been marked yet")
    state.counts[key] += 1
    while state.round < len(state.rounds) - 1 and all(
        state.retired(p) for p in state.round_pairs()
    ):
        state.round += 1
    return state


def coverage_complete(state: ScheduleState) -> bool:
    return all(c >= state.tau for c in state.counts.values())


def schedule_rows(state: ScheduleState) -> list:
    rows = []
    for r, order in enumerate(state.rounds):
        pairs = adjacent_pairs(order)
        rows.append(
            {
                "round": r,
                "order": "-".join(map(str, order)),
                "marked_pairs": ";".join(f"{i}:{j}" for i, j in pairs),
                "counts": ";".join(str(state.counts[p]) for p in pairs),
            }
        )
    return rows


def write_schedule_csv(state: ScheduleState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["round", "order", "marked_pairs", "counts"])
        w.writeheader()
        w.writerows(schedule_rows(state))


class PassiveDriver:
    """Feeds serials into a simulator and turns marked arrivals into samples.

    With ``marking=False`` the same blocks are distributed in a fixed order
    with no IR marks, which is the plain-distribution baseline.
    """

    def __init__(
        self,
        sim: Simulator,
        state: ScheduleState,
        blocks: Iterable = None,
        size: int = MTU,
        delta: int = 5_000_000,
        start: int = 0,
        mode: str = "constant",
        jitter: int = 0,
        seed: int = 0,
        marking: bool = True,
    ):
        hosts = sim.topology.receivers
        if len(hosts) != state.n_hosts:
            raise TooFewHosts(f"schedule has {state.n_hosts} hosts, topology has {len(hosts)}")
        if delta <= 0:
            raise ValueError("delta must be > 0")
        if mode not in ("constant", "schedule"):
            raise ValueError(f"unknown mode {mode!r}")
        if jitter and (mode == "constant" or 2 * jitter >= delta):
            raise ValueError("jitter needs schedule mode and must stay below delta/2")
        self.sim = sim
        self.state = state
        self.hosts = hosts
        self.blocks = iter(itertools.count() if blocks is None else blocks)
        self.size = size
        self.delta = delta
        self.start = start
        self.mode = mode
        self.jitter = jitter
        self.rng = np.random.default_rng(seed)
        self.marking = marking
        self.packets_emitted = 0
        self.serials_emitted = 0
        self.samples_recorded = 0
        self.deliveries: dict = {}  # (block, host) -> count
        self.finished_at: Optional[int] = None
        self._serial_block: dict = {}
        self._pending: dict = {}
        sim.on_delivery(self._delivered)

    def start_emitting(self) -> None:
        self.sim.schedule(self._emit_time(0), self._emit, 0)

    def _emit_time(self, k: int) -> int:
        t = self.start + k * self.delta
        if self.jitter:
            t += int(self.rng.integers(-self.jitter, self.jitter + 1))
        return max(t, self.sim.now)

    def _finish(self) -> None:
        self.finished_at = self.sim.now
        self.sim.stop_sources()

    def _emit(self, k: int) -> None:
        if self.marking and coverage_complete(self.state):
            return self._finish()
        block = next(self.blocks, None)
        if block is None:
            return self._finish()
        if self.marking:
            plan = plan_round(self.state)
            order = [self.hosts[i] for i in plan.order]
            marks = [(self.hosts[i], self.hosts[j]) for i, j in plan.marked_pairs]
        else:
            order, marks = list(self.hosts), []
        self.sim.emit_serial(k, k, order, self.size, self.sim.now, marks)
        self._serial_block[k] = block
        self.packets_emitted += len(order)
        self.serials_emitted += 1
        self.sim.schedule(self._emit_time(k + 1), self._emit, k + 1)

    def _delivered(self, pkt) -> None:
        if pkt.kind != "measurement" or pkt.dropped:
            return
        block = self._serial_block[pkt.serial_id]
        key = (block, pkt.dst)
        self.deliveries[key] = self.deliveries.get(key, 0) + 1
        for pair in pkt.ir_marks:
            got = self._pending.setdefault((pkt.serial_id, pair), set())
            got.add(pkt.dst)
            if len(got) == 2:
                del self._pending[(pkt.serial_id, pair)]
                ids = tuple(sorted(self.hosts.index(h) for h in pair))
                record_sample(self.state, ids)
                self.samples_recorded += 1

    def timing_records(self) -> dict:
        delta_const = self.delta if self.mode == "constant" else None
        return self.sim.trace.timing_records(delta_const)


def drive(
    sim: Simulator,
    state: ScheduleState,
    block_stream: Iterable = None,
    horizon: Optional[int] = None,
    **kw,
) -> dict:
    """Run passive measurement to completion and return per-pair TimingRecords."""
    driver = PassiveDriver(sim, state, block_stream, **kw)
    driver.start_emitting()
    sim.run(horizon)
    return driver.timing_records()
