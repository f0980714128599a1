import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoenc.geometry import MobilityParams, Point
from geoenc.protocol import (
    DEFAULT_POSITION,
    NodeProtocolState,
    Outcome,
    Packet,
    PacketKind,
    PositionEntry,
    TraceLog,
    apply_update,
    geo_handler,
    make_data,
    make_movement_update,
    on_receive,
    reverse_route,
)

coord = st.floats(-1e4, 1e4, allow_nan=False)


def node(i, **kw):
    return NodeProtocolState(i, **kw)


def update(src, dst, pos, at, params=None):
    return Packet(PacketKind.POSITION_UPDATE, src, dst, 1, pos, (src, dst), 64, at, mobility=params)


def data(src, dst, claimed, at=0.0, route=None):
    return Packet(PacketKind.DATA, src, dst, 1, claimed, route or (src, dst), 256, at)


# --- claimed positions -------------------------------------------------------

def test_claimed_default_when_unknown():
    assert node(0).claimed_position(7, 0.0) == DEFAULT_POSITION == (-1, -1)


def test_claimed_static_passthrough():
    s = node(0)
    s.table[7] = PositionEntry(7, Point(100, 200))
    assert s.claimed_position(7, 50.0) == (100, 200)


def test_claimed_predictive():
    s = node(0, mode="predictive")
    p = MobilityParams(10, 0, 60, 60, Point(0, 0), 0)
    s.table[7] = PositionEntry(7, Point(0, 0), p)
    assert s.claimed_position(7, 5.0) == pytest.approx((50, 0))


def test_claimed_predictive_static_node():
    s = node(0, mode="predictive")
    p = MobilityParams(0, 1.0, 60, 60, Point(3, 4), 0)
    s.table[7] = PositionEntry(7, Point(3, 4), p)
    assert s.claimed_position(7, 1.0) == s.claimed_position(7, 800.0) == (3, 4)


def test_bad_mode_and_tolerance():
    with pytest.raises(ValueError):
        node(0, mode="oracle")
    with pytest.raises(ValueError):
        node(0, tolerance=0)


# --- packets -------------------------------------------------------------------

def test_packet_route_must_match_endpoints():
    with pytest.raises(ValueError):
        data(0, 1, (0, 0), route=(0, 2))
    with pytest.raises(ValueError):
        Packet(PacketKind.DATA, 0, 1, 1, (0, 0), (0, 1), 0, 0.0)


def test_make_data_sequence_and_counters():
    s = node(0)
    a = make_data(s, 3, 0.0, [0, 1, 3])
    b = make_data(s, 3, 0.25, [0, 3])
    c = make_data(s, 4, 0.25, [0, 4])
    assert (a.seq, b.seq, c.seq) == (1, 2, 1)
    assert a.claimed == DEFAULT_POSITION
    assert s.counters["sent"] == 3


def test_movement_update_contents():
    s = node(5)
    p = MobilityParams(3, 1.0, 40, 50, Point(10, 20), 7.0)
    pkt = make_movement_update(s, p, 2, 9.0, [5, 2])
    assert pkt.kind is PacketKind.POSITION_UPDATE
    assert pkt.mobility == p and pkt.claimed == p.anchor
    with pytest.raises(ValueError, match="future"):
        make_movement_update(s, p, 2, 6.0, [5, 2])


def test_receiver_stores_params():
    a, b = node(0, mode="predictive"), node(1)
    p = MobilityParams(2, math.pi / 2, 40, 50, Point(10, 20), 0.0)
    on_receive(a, make_movement_update(b, p, 0, 0.0, [1, 0]), (0, 0), 0.1)
    assert a.table[1].params == p
    assert a.claimed_position(1, 10.0) == pytest.approx((10, 40))


# --- reception ---------------------------------------------------------------------

def test_receive_within_half_tolerance():
    rx = on_receive(node(1), data(0, 1, (102, 203)), (100, 200), 1.0)
    assert rx == (Outcome.DECRYPTED, None)


def test_receive_default_claim_fails_with_update():
    s = node(3)
    pkt = data(0, 3, DEFAULT_POSITION, route=(0, 1, 2, 3))
    rx = on_receive(s, pkt, (500, 500), 2.0)
    assert rx.outcome is Outcome.DECRYPT_FAILED
    r = rx.response
    assert r.kind is PacketKind.POSITION_UPDATE and r.route == (3, 2, 1, 0)
    assert r.claimed == (500, 500) and not r.preemptive
    assert s.counters["failed"] == 1 and s.counters["reactive_updates"] == 1


def test_receive_preemptive():
    rx = on_receive(node(1), data(0, 1, (107, 200)), (100, 200), 1.0)
    assert rx.outcome is Outcome.DECRYPTED
    assert rx.response is not None and rx.response.preemptive


def test_no_suppression_by_default():
    s = node(1)
    for k in range(2):
        rx = on_receive(s, data(0, 1, DEFAULT_POSITION, at=k * 0.01), (9, 9), 0.1 + k * 0.01)
        assert rx.response is not None
    assert s.counters["updates_sent"] == 2


def test_optional_suppression():
    s = node(1, suppress_window=1.0)
    r1 = on_receive(s, data(0, 1, DEFAULT_POSITION), (9, 9), 0.1).response
    r2 = on_receive(s, data(0, 1, DEFAULT_POSITION), (9, 9), 0.2).response
    r3 = on_receive(s, data(0, 1, DEFAULT_POSITION), (9, 9), 1.5).response
    assert r1 is not None and r2 is None and r3 is not None
    assert s.counters["suppressed_updates"] == 1


def test_update_never_answered():
    rx = on_receive(node(0), update(1, 0, (5, 5), 0.0), (0, 0), 0.1)
    assert rx == (Outcome.UPDATE_APPLIED, None)


def test_control_packets_ignored():
    pkt = Packet(PacketKind.ROUTE_REQUEST, 1, 0, 1, (0, 0), (1, 0), 32, 0.0)
    s = node(0)
    assert on_receive(s, pkt, (0, 0), 0.0) == (Outcome.CONTROL_IGNORED, None)
    assert s.counters["received"] == 0


def test_stale_update_ignored():
    s = node(0)
    on_receive(s, update(1, 0, (5, 5), 2.0), (0, 0), 2.5)
    rx = on_receive(s, update(1, 0, (1, 1), 1.0), (0, 0), 3.0)
    assert rx.outcome is Outcome.UPDATE_STALE
    assert s.table[1].last_known == (5, 5)


def test_misdelivery_rejected():
    with pytest.raises(ValueError, match="misdelivered"):
        on_receive(node(4), data(0, 1, (0, 0)), (0, 0), 0.0)


def test_geo_handler_rejects_updates():
    with pytest.raises(ValueError):
        geo_handler(node(0), update(1, 0, (0, 0), 0.0), (0, 0), 0.0)


@given(coord, coord, st.floats(1e-3, 1e3))
def test_table_coherence_and_fresh_decrypt(x, y, tol):
    a, b = node(0, tolerance=tol), node(1, tolerance=tol)
    on_receive(a, update(1, 0, (x, y), 1.0), (0, 0), 1.0)
    pkt = make_data(a, 1, 1.0, [0, 1])
    assert pkt.claimed == (x, y)
    rx = on_receive(b, pkt, (x, y), 1.0)
    assert rx == (Outcome.DECRYPTED, None)


@given(st.lists(st.integers(0, 100), min_size=1, max_size=12))
def test_reverse_involution(route):
    assert reverse_route(reverse_route(route)) == tuple(route)


@given(st.lists(st.tuples(coord, coord, st.booleans()), max_size=30), st.floats(0.1, 100))
def test_counter_invariants(events, tol):
    s = node(1, tolerance=tol)
    before = dict(s.counters)
    for x, y, is_update in events:
        pkt = update(0, 1, (x, y), 0.0) if is_update else data(0, 1, (x, y))
        on_receive(s, pkt, (0, 0), 0.0)
        for k, v in before.items():
            assert s.counters[k] >= v
        before = dict(s.counters)
    c = s.counters
    assert c["decrypted"] + c["failed"] == c["received"]


# --- trace log ----------------------------------------------------------------------

def test_trace_lines():
    log = TraceLog()
    pkt = data(4, 9, (0, 0))
    log.decrypt(True, 1.5, pkt)
    log.decrypt(False, 2.0, pkt)
    log.update_sent(2.0, update(9, 4, (0, 0), 2.0))
    log.update_received(2.1234567, update(9, 4, (0, 0), 2.0))
    assert log.text() == (
        "DECRYPT_OK 1.500000 4 9 1\n"
        "DECRYPT_FAIL 2.000000 4 9 1\n"
        "POSUPD_SENT 2.000000 9 4\n"
        "POSUPD_RECV 2.123457 9 4\n"
    )


def test_trace_log_disabled():
    log = TraceLog(keep=False)
    log.decrypt(True, 0.0, data(0, 1, (0, 0)))
    assert log.text() == ""
