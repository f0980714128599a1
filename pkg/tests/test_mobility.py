import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoenc.estimation import GaussMarkovConfig
from geoenc.geometry import Point
from geoenc.mobility import (
    ArenaSpec,
    MobilityTrace,
    PositionTable,
    TraceFormatError,
    Waypoint,
    apply_pause,
    format_movement_script,
    format_waypoint_csv,
    load_traces,
    parse_movement_script,
    parse_waypoint_csv,
    position_at,
    preprocess,
    synth_gauss_markov,
)


def trace(node=0, initial=(0, 0), wps=(), horizon=math.inf):
    return MobilityTrace(node, Point(*initial), tuple(Waypoint(t, Point(x, y), v) for t, x, y, v in wps),
                         horizon)


speed = st.one_of(st.just(0.0), st.floats(0.01, 30))


@st.composite
def traces(draw, node=0):
    n = draw(st.integers(0, 8))
    gaps = draw(st.lists(st.floats(0.1, 50), min_size=n, max_size=n))
    times = np.cumsum(gaps).tolist()
    wps = [
        (t, draw(st.floats(0, 1500)), draw(st.floats(0, 1500)), draw(speed))
        for t in times
    ]
    return trace(node, (draw(st.floats(0, 1500)), draw(st.floats(0, 1500))), wps)


# --- parsing ------------------------------------------------------------------

def test_parse_initial_and_setdest():
    text = """
# header comment
$node_(0) set X_ 5.0
$node_(0) set Y_ 7.0
$node_(0) set Z_ 0.0
$ns_ at 3.0 "$node_(0) setdest 10.0 7.0 2.5"
"""
    (tr,) = parse_movement_script(text)
    assert tr.node == 0 and tr.initial == (5, 7)
    assert tr.waypoints == (Waypoint(3.0, Point(10, 7), 2.5),)
    assert tr.horizon == pytest.approx(5.0)


def test_parse_empty():
    assert parse_movement_script("") == []
    assert parse_waypoint_csv("") == []


@pytest.mark.parametrize(
    "bad, lineno",
    [
        ("$node_(0) set X_ 1\n$node_(0) teleport 3\n", 2),
        ("$node_(0) set X_ 1\n\n$node_(0) set X_ 2\n", 3),
        ('$ns_ at 1.0 "$node_(0) setdest 1 2 -3"\n', 1),
        ('$ns_ at 1.0 "$node_(0) setdest 1 2 3"\n$ns_ at 1.0 "$node_(0) setdest 4 5 6"\n', 2),
        ('$ns_ at abc "$node_(0) setdest 1 2 3"\n', 1),
    ],
)
def test_parse_errors_carry_line_numbers(bad, lineno):
    with pytest.raises(TraceFormatError, match=f"line {lineno}:") as exc:
        parse_movement_script(bad)
    assert exc.value.lineno == lineno


def test_csv_parse():
    text = "node,time,x,y,speed\n1,0,5,7,0\n1,3,10,7,2.5\n"
    (tr,) = parse_waypoint_csv(text)
    assert tr.initial == (5, 7) and tr.waypoints[0] == Waypoint(3, Point(10, 7), 2.5)


@pytest.mark.parametrize(
    "bad, lineno",
    [
        ("node,t,x,y,speed\n", 1),
        ("node,time,x,y,speed\n1,0,5,7,0\n1,2,3\n", 3),
        ("node,time,x,y,speed\n1,zz,5,7,0\n", 2),
        ("node,time,x,y,speed\n1,0,5,7,0\n1,0,6,7,0\n", 3),
    ],
)
def test_csv_errors(bad, lineno):
    with pytest.raises(TraceFormatError, match=f"line {lineno}:"):
        parse_waypoint_csv(bad)


def test_movement_script_roundtrip():
    ts = synth_gauss_markov(GaussMarkovConfig(), 3, 5, ArenaSpec(), 200)
    text = format_movement_script(ts)
    once = parse_movement_script(text, horizon=200)
    twice = parse_movement_script(format_movement_script(once), horizon=200)
    assert once == twice
    assert [(t.node, t.initial, t.waypoints) for t in once] == [
        (t.node, t.initial, t.waypoints) for t in ts
    ]


@given(st.lists(traces(), min_size=1, max_size=4))
def test_roundtrip_property(ts):
    ts = [MobilityTrace(i, t.initial, t.waypoints) for i, t in enumerate(ts)]
    for fmt, parse in ((format_movement_script, parse_movement_script),
                       (format_waypoint_csv, parse_waypoint_csv)):
        once = parse(fmt(ts))
        assert [(t.initial, t.waypoints) for t in once] == [(t.initial, t.waypoints) for t in ts]
        assert parse(fmt(once)) == once


def test_load_by_suffix(tmp_path):
    ts = [trace(0, (1, 2), [(1, 5, 5, 1)]), trace(1, (3, 4))]
    (tmp_path / "m.tcl").write_text(format_movement_script(ts))
    (tmp_path / "m.csv").write_text(format_waypoint_csv(ts))
    a, b = load_traces(tmp_path / "m.tcl"), load_traces(tmp_path / "m.csv")
    assert [t.waypoints for t in a] == [t.waypoints for t in b]


# --- interpolation ----------------------------------------------------------------

def test_position_before_first_waypoint():
    tr = trace(initial=(3, 4), wps=[(5, 10, 4, 1)])
    assert position_at(tr, 2.0) == (3, 4)


def test_position_mid_leg():
    tr = trace(wps=[(0, 10, 0, 2)])
    assert position_at(tr, 3.0) == pytest.approx((6, 0))


def test_position_idles_at_target():
    tr = trace(wps=[(0, 10, 0, 2), (20, 0, 0, 1)])
    assert position_at(tr, 5.0) == (10, 0)
    assert position_at(tr, 12.0) == (10, 0)


def test_redirect_mid_leg():
    # second command fires halfway along the first leg
    tr = trace(wps=[(0, 10, 0, 1), (5, 5, 10, 1)])
    assert position_at(tr, 5.0) == pytest.approx((5, 0))
    assert position_at(tr, 10.0) == pytest.approx((5, 5))


def test_position_outside_horizon():
    with pytest.raises(ValueError):
        position_at(trace(horizon=10), 11)


@given(traces(), st.floats(0, 400), st.floats(0, 5))
def test_position_continuous(tr, t, eps):
    a, b = position_at(tr, t), position_at(tr, t + eps)
    assert a.dist(b) <= tr.max_speed * eps + 1e-6


@given(st.lists(traces(), min_size=1, max_size=5), st.lists(st.floats(0, 400), min_size=1, max_size=5))
def test_table_matches_position_at(ts, times):
    ts = [MobilityTrace(i, t.initial, t.waypoints) for i, t in enumerate(ts)]
    table = PositionTable(ts)
    many = table.positions_many(times)
    for k, t in enumerate(times):
        want = np.array([position_at(tr, t) for tr in ts])
        np.testing.assert_allclose(table.positions(t), want, atol=1e-6)
        np.testing.assert_array_equal(many[k], table.positions(t))
        for row in range(len(ts)):
            assert table.position(row, t) == pytest.approx(tuple(want[row]), abs=1e-6)


# --- preprocessing ---------------------------------------------------------------

def test_margin_exclusion():
    arena = ArenaSpec(top_n=10)
    inside = trace(0, (500, 500), [(1, 600, 600, 5)])
    touching = trace(1, (500, 500), [(1, arena.margin - 1, 600, 5)])
    assert [t.node for t in preprocess([inside, touching], arena)] == [0]


def test_top_n_by_waypoint_count():
    arena = ArenaSpec()
    ts = [trace(i, (500, 500), [(k + 1, 500 + k, 500, 1) for k in range(i % 7)]) for i in range(60)]
    kept = preprocess(ts, arena)
    assert len(kept) == 50
    counts = sorted((len(t.waypoints) for t in ts), reverse=True)
    assert sorted((len(t.waypoints) for t in kept), reverse=True) == counts[:50]


def test_top_n_ties_to_lowest_ids():
    ts = [trace(i, (500, 500), [(1, 510, 500, 1)]) for i in range(60)]
    assert [t.node for t in preprocess(ts, ArenaSpec())] == list(range(50))


@given(st.lists(traces(), min_size=1, max_size=6))
def test_preprocess_stays_in_bounds(ts):
    arena = ArenaSpec(duration=300)
    ts = [MobilityTrace(i, t.initial, t.waypoints) for i, t in enumerate(ts)]
    for tr in preprocess(ts, arena):
        for t in np.linspace(0, 300, 31):
            p = position_at(tr, t)
            assert arena.margin <= p.x <= arena.width - arena.margin
            assert arena.margin <= p.y <= arena.height - arena.margin


# --- pause ------------------------------------------------------------------------

def test_pause_zero_identity():
    tr = trace(wps=[(1, 5, 0, 5), (2, 9, 9, 1)])
    assert apply_pause(tr, 0, 1e9) == tr


def test_pause_full_is_static():
    tr = trace(initial=(3, 3), wps=[(1, 5, 0, 5), (2, 9, 9, 1)], horizon=900)
    out = apply_pause(tr, 900, 900)
    assert out.waypoints == ()
    assert position_at(out, 450) == (3, 3)


def test_pause_shift_arithmetic():
    tr = trace(wps=[(1, 5, 0, 5), (2, 5, 5, 1)])
    assert [w.time for w in apply_pause(tr, 10, 900).waypoints] == [1, 12]


def test_pause_purges_late_legs():
    tr = trace(wps=[(1, 5, 0, 5), (2, 5, 5, 1), (3, 0, 0, 1)])
    # second starts at 12, third at 12 + 5 + 10 = 27 > 20
    assert [w.time for w in apply_pause(tr, 10, 20).waypoints] == [1, 12]


def test_pause_rejects_negative():
    with pytest.raises(ValueError):
        apply_pause(trace(), -1, 900)


@given(traces(), st.floats(0, 100), st.floats(0, 100))
def test_pause_monotone(tr, p1, p2):
    lo, hi = sorted((p1, p2))
    assert len(apply_pause(tr, hi, 300).waypoints) <= len(apply_pause(tr, lo, 300).waypoints)


# --- synthesis --------------------------------------------------------------------

def test_synth_deterministic():
    arena = ArenaSpec()
    a = synth_gauss_markov(GaussMarkovConfig(), 7, 10, arena, 300)
    b = synth_gauss_markov(GaussMarkovConfig(), 7, 10, arena, 300)
    c = synth_gauss_markov(GaussMarkovConfig(), 8, 10, arena, 300)
    assert a == b and a != c


def _legs(tr):
    pts = [tr.initial] + [w.target for w in tr.waypoints]
    return np.diff(np.array(pts), axis=0)


def test_synth_fluid_flow_limit():
    # gamma 0, no noise: constant speed and heading apart from wall reflections
    arena = ArenaSpec(width=1e6, height=1e6, margin=10)
    cfg = GaussMarkovConfig(gamma=0.0, noise_sigma=0.0, heading_sigma=0.0)
    (tr,) = synth_gauss_markov(cfg, 1, 1, arena, 500)
    legs = _legs(tr)
    np.testing.assert_allclose(legs, np.broadcast_to(legs[0], legs.shape), atol=1e-6)


def test_synth_random_walk_limit():
    # gamma 1 keeps the previous value even with noise configured
    arena = ArenaSpec(width=1e6, height=1e6, margin=10)
    (tr,) = synth_gauss_markov(GaussMarkovConfig(gamma=1.0, noise_sigma=3.0), 2, 1, arena, 500)
    speeds = {round(w.speed, 9) for w in tr.waypoints}
    assert len(speeds) == 1


def test_synth_stays_in_arena():
    arena = ArenaSpec()
    for tr in synth_gauss_markov(GaussMarkovConfig(), 0, 20, arena, 900):
        _, pts = tr._breakpoints
        assert (pts >= arena.margin - 1e-9).all() and (pts <= arena.width - arena.margin + 1e-9).all()


def test_synth_speed_mean_converges():
    arena = ArenaSpec(width=1e7, height=1e7, margin=10)
    cfg = GaussMarkovConfig(gamma=0.5, noise_sigma=1.0)
    d, T = 10.0, 200_000.0
    for seed in range(3):
        (tr,) = synth_gauss_markov(cfg, seed, 1, arena, T, d=d, speed_range=(10, 10))
        mean = np.mean([w.speed for w in tr.waypoints])
        assert abs(mean - 10) <= 3 * cfg.noise_sigma / math.sqrt(T / d)
