"""Reactive position-update protocol run by every node.

Senders keep a table of where their destinations are. A data packet
carries the claimed destination coordinates; the destination decrypts it
when its true position lies inside the tolerance square around them. A
failure, or a pass outside half the tolerance, makes the destination's
GeoHandler send a position update back along the reverse route.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from .geometry import MobilityParams, Point, square_decrypt_test, zone_center

DEFAULT_POSITION = Point(-1.0, -1.0)
DATA_SIZE = 256
UPDATE_SIZE = 64


class PacketKind(enum.Enum):
    DATA = "data"
    POSITION_UPDATE = "position_update"
    ROUTE_REQUEST = "route_request"
    ROUTE_REPLY = "route_reply"


class Outcome(enum.Enum):
    DECRYPTED = "decrypted"
    DECRYPT_FAILED = "decrypt_failed"
    UPDATE_APPLIED = "update_applied"
    UPDATE_STALE = "update_stale"
    CONTROL_IGNORED = "control_ignored"


@dataclass
class Packet:
    kind: PacketKind
    src: int
    dst: int
    seq: int
    claimed: Point
    route: tuple
    size_bytes: int
    created_at: float
    mobility: Optional[MobilityParams] = None
    # set by GeoHandler on decrypted-but-outside-half-tolerance responses
    preemptive: bool = False

    def __post_init__(self):
        self.route = tuple(self.route)
        if not self.route or self.route[0] != self.src or self.route[-1] != self.dst:
            raise ValueError(f"route {self.route} does not run from {self.src} to {self.dst}")
        if self.size_bytes <= 0:
            raise ValueError("packet size must be positive")
        self.claimed = Point(*self.claimed)


@dataclass
class PositionEntry:
    node: int
    last_known: Point
    params: Optional[MobilityParams] = None
    updated_at: float = 0.0
    # creation time of the update this entry came from
    stamp: float = 0.0


class Reception(NamedTuple):
    outcome: Outcome
    response: Optional[Packet] = None


@dataclass
class NodeProtocolState:
    id: int
    tolerance: float = 10.0
    mode: str = "static"
    suppress_window: float = 0.0
    table: dict = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)
    _seq: Counter = field(default_factory=Counter, repr=False)
    _last_update_to: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("static", "predictive"):
            raise ValueError(f"mode must be 'static' or 'predictive', got {self.mode!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")

    def next_seq(self, dst: int) -> int:
        self._seq[dst] += 1
        return self._seq[dst]

    def claimed_position(self, dst: int, now: float) -> Point:
        entry = self.table.get(dst)
        if entry is None:
            return DEFAULT_POSITION
        if self.mode == "predictive" and entry.params is not None and now >= entry.params.anchor_time:
            return zone_center(entry.params, now)
        return entry.last_known


def make_data(state: NodeProtocolState, dst: int, now: float, route: Sequence[int],
              size: int = DATA_SIZE) -> Packet:
    pkt = Packet(
        PacketKind.DATA, state.id, dst, state.next_seq(dst),
        state.claimed_position(dst, now), route, size, now,
    )
    state.counters["sent"] += 1
    return pkt


def reverse_route(route: Sequence[int]) -> tuple:
    return tuple(reversed(route))


def geo_handler(state: NodeProtocolState, failed: Packet, true_pos, now: float,
                params: Optional[MobilityParams] = None, size: int = UPDATE_SIZE,
                preemptive: bool = False) -> Packet:
    """Answer a (near-)failed data packet with our true position on the
    reverse route, carrying ``params`` when movement updates are on."""
    if failed.kind is not PacketKind.DATA:
        raise ValueError("GeoHandler only answers data packets")
    pkt = Packet(
        PacketKind.POSITION_UPDATE, state.id, failed.src, state.next_seq(failed.src),
        Point(*true_pos), reverse_route(failed.route), size, now,
        mobility=params, preemptive=preemptive,
    )
    state.counters["updates_sent"] += 1
    state.counters["preemptive_updates" if preemptive else "reactive_updates"] += 1
    state._last_update_to[failed.src] = now
    return pkt


def make_movement_update(state: NodeProtocolState, params: MobilityParams, dst: int,
                         now: float, route: Sequence[int], size: int = UPDATE_SIZE) -> Packet:
    if params.anchor_time > now:
        raise ValueError("movement update anchored in the future")
    pkt = Packet(
        PacketKind.POSITION_UPDATE, state.id, dst, state.next_seq(dst),
        params.anchor, route, size, now, mobility=params,
    )
    state.counters["updates_sent"] += 1
    state.counters["movement_updates"] += 1
    return pkt


def apply_update(state: NodeProtocolState, pkt: Packet, now: float) -> bool:
    entry = state.table.get(pkt.src)
    if entry is not None and pkt.created_at < entry.stamp:
        return False
    state.table[pkt.src] = PositionEntry(pkt.src, pkt.claimed, pkt.mobility, now, pkt.created_at)
    return True


def on_receive(state: NodeProtocolState, pkt: Packet, true_pos, now: float,
               params: Optional[MobilityParams] = None) -> Reception:
    """Handle a packet addressed to this node.

    ``params`` is what GeoHandler attaches to any response it sends.
    """
    if pkt.dst != state.id:
        raise ValueError(f"misdelivered packet: dst={pkt.dst}, node={state.id}")
    c = state.counters
    if pkt.kind in (PacketKind.ROUTE_REQUEST, PacketKind.ROUTE_REPLY):
        return Reception(Outcome.CONTROL_IGNORED)
    if pkt.kind is PacketKind.POSITION_UPDATE:
        c["updates_received"] += 1
        if apply_update(state, pkt, now):
            return Reception(Outcome.UPDATE_APPLIED)
        return Reception(Outcome.UPDATE_STALE)

    c["received"] += 1
    tol = state.tolerance
    if not square_decrypt_test(true_pos, pkt.claimed, tol, 1.0):
        c["failed"] += 1
        return Reception(Outcome.DECRYPT_FAILED, _respond(state, pkt, true_pos, now, params, False))
    c["decrypted"] += 1
    if not square_decrypt_test(true_pos, pkt.claimed, tol, 0.5):
        return Reception(Outcome.DECRYPTED, _respond(state, pkt, true_pos, now, params, True))
    return Reception(Outcome.DECRYPTED)


def _respond(state, pkt, true_pos, now, params, preemptive):
    if state.suppress_window > 0:
        last = state._last_update_to.get(pkt.src)
        if last is not None and now - last < state.suppress_window:
            state.counters["suppressed_updates"] += 1
            return None
    return geo_handler(state, pkt, true_pos, now, params, preemptive=preemptive)


class TraceLog:
    """Event lines: ``DECRYPT_OK|DECRYPT_FAIL <time> <src> <dst> <seq>`` and
    ``POSUPD_SENT|POSUPD_RECV <time> <src> <dst>``; times to 6 decimals."""

    def __init__(self, keep: bool = True):
        self.keep = keep
        self.lines: list[str] = []

    def decrypt(self, ok: bool, now: float, pkt: Packet):
        if self.keep:
            tag = "DECRYPT_OK" if ok else "DECRYPT_FAIL"
            self.lines.append(f"{tag} {now:.6f} {pkt.src} {pkt.dst} {pkt.seq}")

    def update_sent(self, now: float, pkt: Packet):
        if self.keep:
            self.lines.append(f"POSUPD_SENT {now:.6f} {pkt.src} {pkt.dst}")

    def update_received(self, now: float, pkt: Packet):
        if self.keep:
            self.lines.append(f"POSUPD_RECV {now:.6f} {pkt.src} {pkt.dst}")

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)
