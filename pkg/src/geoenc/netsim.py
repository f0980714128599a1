"""Deterministic discrete-event simulation of the protocol over a MANET.

Routing is instantaneous minimum-hop routing on the unit-disk graph of
true positions at send time. Every node has one FIFO transmit queue with
deterministic service time ``size / node_service_rate``, followed by a
fixed per-hop latency, so flows that share relays delay each other.
"""
from __future__ import annotations

import enum
import heapq
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .estimation import GaussMarkovConfig, MobilityEstimator, Thresholds, initial_params
from .geometry import Point
from .mobility import MobilityTrace, PositionTable
from .protocol import (
    DATA_SIZE,
    DEFAULT_POSITION,
    UPDATE_SIZE,
    NodeProtocolState,
    Outcome,
    Packet,
    PacketKind,
    TraceLog,
    make_data,
    make_movement_update,
    on_receive,
)

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    traces: Sequence[MobilityTrace]
    n_senders: int = 10
    n_receivers: int = 10
    cbr_rate: float = 4.0
    packet_size: int = DATA_SIZE
    update_size: int = UPDATE_SIZE
    tolerance: float = 10.0
    duration: float = 900.0
    radio_range: float = 250.0
    per_hop_latency: float = 0.03
    node_service_rate: float = 16_000.0
    seed: int = 0
    mode: str = "static"
    # explicit (sender, receiver) flows; drawn from the seed when None
    pairs: Optional[Sequence[tuple]] = None
    reading_interval: float = 1.0
    gm: GaussMarkovConfig = field(default_factory=GaussMarkovConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    # estimation-driven movement updates; defaults to on in predictive mode
    movement_updates: Optional[bool] = None
    suppress_window: float = 0.0
    discovery_delay: float = 0.0
    initial_sigma: float = 10.0
    keep_log: bool = True

    def __post_init__(self):
        n = len(self.traces)
        if self.pairs is None and not (1 <= self.n_senders <= n and 1 <= self.n_receivers <= n):
            raise ValueError(f"need 1 <= senders, receivers <= {n} nodes")
        for name in ("cbr_rate", "duration", "tolerance", "radio_range", "node_service_rate",
                     "reading_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.per_hop_latency < 0 or self.discovery_delay < 0:
            raise ValueError("latencies must be >= 0")
        if self.mode not in ("static", "predictive"):
            raise ValueError(f"mode must be 'static' or 'predictive', got {self.mode!r}")

    @property
    def movement_updates_on(self) -> bool:
        if self.movement_updates is None:
            return self.mode == "predictive"
        return self.movement_updates


@dataclass
class MetricsReport:
    data_sent: int = 0
    data_received: int = 0
    decrypted: int = 0
    failed: int = 0
    updates_sent: int = 0
    updates_received: int = 0
    preemptive_updates: int = 0
    bootstrap_updates: int = 0
    movement_updates: int = 0
    data_dropped: int = 0
    updates_dropped: int = 0
    data_in_flight: int = 0
    total_delay: float = 0.0

    @property
    def decryption_ratio(self) -> float:
        return self.decrypted / self.data_received if self.data_received else 0.0

    @property
    def overhead_ratio(self) -> float:
        return self.updates_sent / self.data_received if self.data_received else 0.0

    @property
    def mean_delivery_delay(self) -> float:
        return self.total_delay / self.data_received if self.data_received else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(
            decryption_ratio=self.decryption_ratio,
            overhead_ratio=self.overhead_ratio,
            mean_delivery_delay=self.mean_delivery_delay,
        )
        return d


class SimResult(NamedTuple):
    metrics: MetricsReport
    log: TraceLog
    pairs: tuple


class EventKind(enum.IntEnum):
    PACKET_ARRIVAL = 0
    PACKET_SEND = 1
    NODE_DEQUEUE = 2
    CBR_TICK = 3
    ESTIMATION_TICK = 4


class Event(NamedTuple):
    time: float
    seq: int
    kind: EventKind
    payload: object


_ARRIVAL = EventKind.PACKET_ARRIVAL
# send times per batched position/adjacency evaluation
ADJ_CHUNK = 64


def route(src: int, dst: int, positions: np.ndarray, radio_range: float) -> list[int]:
    """Minimum-hop path on the unit-disk graph; node ids are row indices.

    Among equal-length paths the lexicographically smallest is returned.
    Empty when ``dst`` is unreachable.
    """
    if src == dst:
        return [src]
    return _route_adj(src, dst, _unit_disk(positions, radio_range))


def _unit_disk(positions: np.ndarray, radio_range: float) -> np.ndarray:
    """Boolean adjacency; ``positions`` is (N, 2) or a (T, N, 2) stack."""
    x = np.ascontiguousarray(positions[..., 0])
    y = np.ascontiguousarray(positions[..., 1])
    dx = x[..., :, None] - x[..., None, :]
    dy = y[..., :, None] - y[..., None, :]
    dx *= dx
    dy *= dy
    dx += dy
    # the diagonal stays set; self-loops never change a BFS result
    return dx <= radio_range * radio_range


def _bit_rows(adj: np.ndarray) -> list:
    """Rows of a boolean matrix as Python-int bitmasks (bit j = column j).
    A (T, N, N) stack gives one list per matrix."""
    n = adj.shape[-1]
    words = -(-n // 64)
    packed = np.zeros(adj.shape[:-1] + (8 * words,), dtype=np.uint8)
    packed[..., : -(-n // 8)] = np.packbits(adj, axis=-1, bitorder="little")
    w = packed.view("<u8")
    if words == 1:
        return w[..., 0].tolist()
    def join(row):
        return sum(int(x) << (64 * k) for k, x in enumerate(row))
    if w.ndim == 2:
        return [join(row) for row in w.tolist()]
    return [[join(row) for row in m] for m in w.tolist()]


def _route_adj(src: int, dst: int, adj) -> list[int]:
    """BFS levels from ``dst``, then walk forward from ``src`` taking the
    lowest-id neighbor one level closer each hop. ``adj`` is a boolean
    matrix or a list of per-node neighbor bitmasks."""
    if src == dst:
        return [src]
    rows = adj if isinstance(adj, list) else _bit_rows(adj)
    levels = [1 << dst]
    seen = 1 << dst
    target = 1 << src
    frontier = levels[0]
    while not seen & target:
        nxt = 0
        f = frontier
        while f:
            low = f & -f
            nxt |= rows[low.bit_length() - 1]
            f ^= low
        nxt &= ~seen
        if not nxt:
            return []
        seen |= nxt
        levels.append(nxt)
        frontier = nxt
    path = [src]
    cur = src
    for k in range(len(levels) - 2, -1, -1):
        c = rows[cur] & levels[k]
        cur = (c & -c).bit_length() - 1
        path.append(cur)
    return path


def choose_pairs(positions: np.ndarray, n_senders: int, n_receivers: int, radio_range: float,
                 rng: np.random.Generator) -> list[tuple[int, int]]:
    """Seeded sender/receiver flows, all connected at the given positions.

    Candidates are visited in a seeded random order, so a request for more
    flows extends the flows of a smaller request with the same seed.
    """
    n = len(positions)
    adj = _unit_disk(positions, radio_range)
    reach = adj.copy()
    for _ in range(n):
        step = reach | (reach.astype(np.uint8) @ adj.astype(np.uint8) > 0)
        if (step == reach).all():
            break
        reach = step
    cand = [(s, r) for s in range(n) for r in range(n) if s != r]
    order = rng.permutation(len(cand))
    senders: set = set()
    receivers: list = []
    pairs = []
    for idx in order:
        s, r = cand[idx]
        if not reach[s, r] or s in senders:
            continue
        if r not in receivers:
            if len(receivers) >= n_receivers:
                continue
        elif len(receivers) < n_receivers:
            continue
        pairs.append((s, r))
        senders.add(s)
        if r not in receivers:
            receivers.append(r)
        if len(pairs) == n_senders:
            return pairs
    raise ValueError(
        f"only {len(pairs)} connected sender-receiver pairs available, wanted {n_senders}"
    )


class Simulation:
    """One run. Node ids in the output are the traces' node ids."""

    def __init__(self, config: SimConfig):
        self.cfg = config
        self.table = PositionTable(config.traces)
        self.ids = self.table.ids
        self.n = len(self.ids)
        self.metrics = MetricsReport()
        self.log = TraceLog(keep=config.keep_log)
        self.rng = np.random.default_rng(config.seed)
        self._heap: list = []
        self._seq = 0
        self._busy = [0.0] * self.n
        self._rate = float(config.node_service_rate)
        self._latency = float(config.per_hop_latency)
        self._pos_t = None
        self._pos = None
        self._adj_t = None
        self._adj = None
        self._adj_batch: dict = {}
        self._batch_index: dict = {}
        self._cbr_times: list = []
        self.states = [
            NodeProtocolState(i, config.tolerance, config.mode, config.suppress_window)
            for i in range(self.n)
        ]

        p0 = self.positions(0.0)
        if config.pairs is not None:
            idx = self.table.index
            self.pairs = [(idx[s], idx[r]) for s, r in config.pairs]
        else:
            self.pairs = choose_pairs(p0, config.n_senders, config.n_receivers,
                                      config.radio_range, self.rng)
        self.correspondents = defaultdict(list)
        for s, r in self.pairs:
            self.correspondents[r].append(s)
        self.estimators = {
            r: MobilityEstimator(
                initial_params(Point(*p0[r]), 0.0, config.initial_sigma),
                config.gm, config.thresholds, config.reading_interval,
            )
            for r in sorted(self.correspondents)
        }
        self._contacted: set = set()

    # -- helpers --------------------------------------------------------------

    def positions(self, t: float) -> np.ndarray:
        if t != self._pos_t:
            self._pos = self.table.positions(t)
            self._pos_t = t
        return self._pos

    def _adjacency(self, t: float) -> list[int]:
        if t == self._adj_t:
            return self._adj
        adj = self._adj_batch.get(t)
        if adj is None:
            k = self._batch_index.get(t)
            if k is not None:
                # CBR send times are known up front; evaluate them in chunks
                chunk = self._send_times[k: k + ADJ_CHUNK]
                stack = _unit_disk(self.table.positions_many(chunk), self.cfg.radio_range)
                self._adj_batch = dict(zip(chunk.tolist(), _bit_rows(stack)))
                adj = self._adj_batch[t]
            else:
                adj = _bit_rows(_unit_disk(self.positions(t), self.cfg.radio_range))
        self._adj, self._adj_t = adj, t
        return adj

    def route(self, src: int, dst: int, t: float) -> list[int]:
        return _route_adj(src, dst, self._adjacency(t))

    def schedule(self, t: float, kind: EventKind, payload=None):
        # plain tuples: the heap is the hot path
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def _transmit(self, pkt: Packet, hop: int, now: float):
        node = pkt.route[hop]
        busy = self._busy
        done = (now if now > busy[node] else busy[node]) + pkt.size_bytes / self._rate
        busy[node] = done
        heapq.heappush(self._heap, (done + self._latency, self._seq, _ARRIVAL, (pkt, hop + 1)))
        self._seq += 1

    # -- handlers -------------------------------------------------------------

    def _on_cbr(self, now: float, tick: tuple):
        cfg = self.cfg
        flow, k = tick
        s, r = self.pairs[flow]
        times = self._cbr_times[flow]
        if k + 1 < len(times):
            self.schedule(times[k + 1], EventKind.CBR_TICK, (flow, k + 1))
        self.metrics.data_sent += 1
        path = _route_adj(s, r, self._adjacency(now))
        if not path:
            self.metrics.data_dropped += 1
            self.states[s].counters["sent"] += 1
            return
        pkt = make_data(self.states[s], r, now, path, cfg.packet_size)
        if cfg.discovery_delay > 0 and (s, r) not in self._contacted:
            self._contacted.add((s, r))
            self.schedule(now + cfg.discovery_delay, EventKind.PACKET_SEND, pkt)
            return
        self._transmit(pkt, 0, now)

    def _on_arrival(self, now: float, pkt: Packet, hop: int):
        if hop < len(pkt.route) - 1:
            self._transmit(pkt, hop, now)
            return
        m = self.metrics
        dst = pkt.dst
        state = self.states[dst]
        true_pos = self.table.position(dst, now)
        if pkt.kind is PacketKind.DATA:
            m.data_received += 1
            m.total_delay += now - pkt.created_at
            est = self.estimators.get(dst) if self.cfg.movement_updates_on else None
            offer = est.readvertise_candidate(true_pos, now) if est is not None else None
            rx = on_receive(state, pkt, true_pos, now, offer)
            ok = rx.outcome is Outcome.DECRYPTED
            if ok:
                m.decrypted += 1
            else:
                m.failed += 1
            self.log.decrypt(ok, now, self._public(pkt))
            if rx.response is not None:
                resp = rx.response
                if est is not None and offer is not None:
                    est.state.params = offer
                m.updates_sent += 1
                if resp.preemptive:
                    m.preemptive_updates += 1
                if pkt.claimed == DEFAULT_POSITION:
                    m.bootstrap_updates += 1
                self.log.update_sent(now, self._public(resp))
                self._transmit(resp, 0, now)
        elif pkt.kind is PacketKind.POSITION_UPDATE:
            m.updates_received += 1
            on_receive(state, pkt, true_pos, now)
            self.log.update_received(now, self._public(pkt))
        else:
            on_receive(state, pkt, true_pos, now)

    def _on_estimation(self, now: float):
        cfg = self.cfg
        nxt = now + cfg.reading_interval
        if nxt <= cfg.duration:
            self.schedule(nxt, EventKind.ESTIMATION_TICK)
        pos = self.positions(now)
        for node, est in self.estimators.items():
            params = est.observe(Point(*pos[node]), now)
            if params is None:
                continue
            for s in self.correspondents[node]:
                path = self.route(node, s, now)
                if not path:
                    self.metrics.updates_dropped += 1
                    continue
                pkt = make_movement_update(self.states[node], params, s, now, path, cfg.update_size)
                self.metrics.updates_sent += 1
                self.metrics.movement_updates += 1
                self.log.update_sent(now, self._public(pkt))
                self._transmit(pkt, 0, now)

    def _public(self, pkt: Packet) -> "_PublicView":
        return _PublicView(self.ids[pkt.src], self.ids[pkt.dst], pkt.seq)

    # -- main loop ------------------------------------------------------------

    def run(self) -> SimResult:
        self.start_traffic()
        self.advance(self.cfg.duration)
        return self.result()

    def start_traffic(self):
        """Schedule every CBR send and the first GPS reading."""
        cfg = self.cfg
        period = 1.0 / cfg.cbr_rate
        self._cbr_times = []
        for flow in range(len(self.pairs)):
            first = float(self.rng.uniform(0.0, period))
            times = first + period * np.arange(math.ceil((cfg.duration - first) / period) + 1)
            self._cbr_times.append(times[times < cfg.duration].tolist())
        if self._cbr_times:
            self._send_times = np.unique(np.concatenate([np.asarray(t) for t in self._cbr_times]))
            self._batch_index = {t: k for k, t in enumerate(self._send_times.tolist())}
        for flow, times in enumerate(self._cbr_times):
            if times:
                self.schedule(times[0], EventKind.CBR_TICK, (flow, 0))
        if cfg.movement_updates_on:
            self.schedule(cfg.reading_interval, EventKind.ESTIMATION_TICK)

    def deliver(self, pkt: Packet, now: float):
        """Inject ``pkt`` at its first hop; it arrives when :meth:`advance`
        reaches its arrival time."""
        self._transmit(pkt, 0, now)

    def advance(self, until: float):
        """Process every event up to and including time ``until``."""
        heap = self._heap
        pop = heapq.heappop
        on_arrival = self._on_arrival
        while heap:
            t, _, kind, payload = heap[0]
            if t > until:
                break
            pop(heap)
            if kind is _ARRIVAL:
                pkt, hop = payload
                if hop < len(pkt.route) - 1:
                    self._transmit(pkt, hop, t)
                else:
                    on_arrival(t, pkt, hop)
            elif kind is EventKind.CBR_TICK:
                self._on_cbr(t, payload)
            elif kind is EventKind.PACKET_SEND:
                self._transmit(payload, 0, t)
            elif kind is EventKind.ESTIMATION_TICK:
                self._on_estimation(t)

    def result(self) -> SimResult:
        self.metrics.data_in_flight = self._count_in_flight()
        pairs = tuple((self.ids[s], self.ids[r]) for s, r in self.pairs)
        return SimResult(self.metrics, self.log, pairs)

    def _count_in_flight(self) -> int:
        n = 0
        for ev in map(Event._make, self._heap):
            if ev.kind is EventKind.PACKET_ARRIVAL:
                pkt = ev.payload[0]
            elif ev.kind is EventKind.PACKET_SEND:
                pkt = ev.payload
            else:
                continue
            if pkt.kind is PacketKind.DATA:
                n += 1
        return n


class _PublicView(NamedTuple):
    src: int
    dst: int
    seq: int


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()
