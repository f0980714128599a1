"""Mobility traces: parsing, preprocessing, interpolation and synthesis.

A trace is an initial placement plus ``setdest``-style waypoints: at
``time`` the node heads from wherever it is toward ``target`` at
``speed`` and idles on arrival. A later waypoint that fires mid-leg
redirects the node from its current position, as in ns-2.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from bisect import bisect_right
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .estimation import GaussMarkovConfig
from .geometry import Point, angle_diff, wrap_angle

log = logging.getLogger(__name__)


class TraceFormatError(ValueError):
    def __init__(self, msg: str, lineno: Optional[int] = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


@dataclass(frozen=True)
class Waypoint:
    time: float
    target: Point
    speed: float

    def __post_init__(self):
        if self.time < 0 or self.speed < 0:
            raise ValueError(f"waypoint needs time >= 0 and speed >= 0: {self}")
        object.__setattr__(self, "target", Point(float(self.target[0]), float(self.target[1])))


@dataclass(frozen=True)
class ArenaSpec:
    width: float = 1500.0
    height: float = 1500.0
    margin: float = 150.0
    duration: float = 900.0
    top_n: int = 50

    def __post_init__(self):
        if not self.margin < min(self.width, self.height) / 2:
            raise ValueError("arena margin must be below half the smaller side")
        if not self.duration > 0:
            raise ValueError("arena duration must be > 0")


@dataclass(frozen=True)
class MobilityTrace:
    node: int
    initial: Point
    waypoints: tuple = ()
    horizon: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "initial", Point(float(self.initial[0]), float(self.initial[1])))
        wps = tuple(self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        for a, b in zip(wps, wps[1:]):
            if not b.time > a.time:
                raise ValueError(f"node {self.node}: waypoint times must strictly increase")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    @cached_property
    def _breakpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return compile_breakpoints(self)

    @property
    def max_speed(self) -> float:
        return max((w.speed for w in self.waypoints), default=0.0)

    def position_at(self, t: float) -> Point:
        return position_at(self, t)


def compile_breakpoints(trace: MobilityTrace) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear form of a trace: breakpoint times and positions.

    A zero-speed command halts the node where it is, as ns-2 does. With an
    infinite horizon the last breakpoint is the final arrival.
    """
    horizon = trace.horizon
    times = [0.0]
    pts = [trace.initial]
    seg = None  # (start time, start point, target, arrival time)

    def at(s, t):
        ts, p0, tgt, ta = s
        f = (t - ts) / (ta - ts)
        return Point(p0.x + f * (tgt.x - p0.x), p0.y + f * (tgt.y - p0.y))

    for wp in trace.waypoints:
        tw = wp.time
        if tw > horizon:
            break
        if seg is not None and tw < seg[3]:
            pos = at(seg, tw)
        elif seg is not None:
            if seg[3] > times[-1]:
                times.append(seg[3])
                pts.append(seg[2])
            pos = seg[2]
        else:
            pos = pts[-1]
        seg = None
        if tw > times[-1]:
            times.append(tw)
            pts.append(pos)
        dist = pos.dist(wp.target)
        if wp.speed > 0.0 and dist > 0.0:
            ta = tw + dist / wp.speed
            if ta > tw:
                seg = (tw, pos, wp.target, ta)
    if seg is not None:
        if seg[3] <= horizon:
            times.append(seg[3])
            pts.append(seg[2])
        else:
            times.append(horizon)
            pts.append(at(seg, horizon))
    if math.isfinite(horizon) and horizon > times[-1]:
        times.append(horizon)
        pts.append(pts[-1])
    return np.asarray(times, dtype=float), np.asarray(pts, dtype=float).reshape(-1, 2)


def _natural_end(trace: MobilityTrace) -> float:
    """Time of the final arrival (0 for a static node)."""
    return float(compile_breakpoints(replace(trace, horizon=math.inf))[0][-1])


def position_at(trace: MobilityTrace, t: float) -> Point:
    if not 0.0 <= t <= trace.horizon:
        raise ValueError(f"t={t} outside [0, {trace.horizon}] for node {trace.node}")
    times, pts = trace._breakpoints
    i = int(np.searchsorted(times, t, side="right")) - 1
    if i >= len(times) - 1:
        return Point(*pts[-1])
    t0, t1 = times[i], times[i + 1]
    f = (t - t0) / (t1 - t0)
    p = pts[i] + f * (pts[i + 1] - pts[i])
    return Point(float(p[0]), float(p[1]))


class PositionTable:
    """Positions of many traces, vectorized over nodes."""

    def __init__(self, traces: Iterable[MobilityTrace]):
        self.traces = sorted(traces, key=lambda tr: tr.node)
        self.ids = [tr.node for tr in self.traces]
        self.index = {n: i for i, n in enumerate(self.ids)}
        span = 1.0 + max((tr._breakpoints[0][-1] for tr in self.traces), default=0.0)
        if not math.isfinite(span):
            raise ValueError("position table needs finite trace breakpoints")
        self._span = span
        keys, pts, vels = [], [], []
        self._times, self._tpts, self._tvel = [], [], []
        for i, tr in enumerate(self.traces):
            times, p = tr._breakpoints
            dt = np.diff(times)
            v = np.zeros_like(p)
            moving = dt > 0
            v[:-1][moving] = np.diff(p, axis=0)[moving] / dt[moving, None]
            keys.append(times + i * span)
            pts.append(p)
            vels.append(v)
            self._times.append(times.tolist())
            self._tpts.append(p.tolist())
            self._tvel.append(v.tolist())
        self._keys = np.concatenate(keys) if keys else np.zeros(0)
        self._pts = np.concatenate(pts) if pts else np.zeros((0, 2))
        self._vel = np.concatenate(vels) if vels else np.zeros((0, 2))
        self._offsets = np.arange(len(self.traces)) * span

    def __len__(self):
        return len(self.traces)

    def positions(self, t: float) -> np.ndarray:
        """(N, 2) positions at time ``t``, rows in ascending node-id order."""
        t = min(max(t, 0.0), self._span - 1.0)
        i = np.searchsorted(self._keys, self._offsets + t, side="right") - 1
        return self._pts[i] + (t - (self._keys[i] - self._offsets))[:, None] * self._vel[i]

    def positions_many(self, ts) -> np.ndarray:
        """(T, N, 2) positions at each of the times ``ts``."""
        ts = np.clip(np.asarray(ts, dtype=float), 0.0, self._span - 1.0)[:, None]
        i = np.searchsorted(self._keys, self._offsets + ts, side="right") - 1
        return self._pts[i] + (ts - (self._keys[i] - self._offsets))[..., None] * self._vel[i]

    def position(self, row: int, t: float) -> Point:
        """Position of the node in row ``row`` at time ``t``."""
        times = self._times[row]
        i = bisect_right(times, max(t, 0.0)) - 1
        dt = t - times[i]
        p, v = self._tpts[row][i], self._tvel[row][i]
        return Point(p[0] + dt * v[0], p[1] + dt * v[1])


# --- parsing -----------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_SET_RE = re.compile(rf"^\$node_\((\d+)\)\s+set\s+([XYZ])_\s+({_NUM})$")
_AT_RE = re.compile(
    rf'^\$ns_\s+at\s+({_NUM})\s+"\$node_\((\d+)\)\s+setdest\s+({_NUM})\s+({_NUM})\s+({_NUM})"$'
)


def _assemble(initials: dict, moves: dict, horizon: Optional[float]) -> list[MobilityTrace]:
    nodes = sorted(set(initials) | set(moves))
    staged = []
    for n in nodes:
        wps = sorted(moves.get(n, []), key=lambda item: item[0].time)
        for (a, _), (b, lineno) in zip(wps, wps[1:]):
            if b.time == a.time:
                raise TraceFormatError(f"node {n} has two waypoints at t={b.time}", lineno)
        x, y = initials.get(n, (0.0, 0.0))
        staged.append(MobilityTrace(n, Point(x, y), tuple(w for w, _ in wps)))
    if horizon is None:
        horizon = max((_natural_end(tr) for tr in staged), default=0.0)
    return [replace(tr, horizon=horizon) for tr in staged]


def parse_movement_script(text: str, horizon: Optional[float] = None) -> list[MobilityTrace]:
    """Parse the ns-2 ``set X_/Y_/Z_`` and ``at ... setdest`` subset.

    Returns traces sorted by node id, all sharing one horizon (by default
    the time by which every node has finished moving).
    """
    initials: dict[int, list] = {}
    seen: set = set()
    moves: dict[int, list] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SET_RE.match(line)
        if m:
            node, axis, val = int(m.group(1)), m.group(2), float(m.group(3))
            if axis == "Z":
                continue
            if (node, axis) in seen:
                raise TraceFormatError(f"duplicate initial {axis}_ for node {node}", lineno)
            seen.add((node, axis))
            initials.setdefault(node, [0.0, 0.0])["XY".index(axis)] = val
            continue
        m = _AT_RE.match(line)
        if m:
            t, node = float(m.group(1)), int(m.group(2))
            x, y, speed = float(m.group(3)), float(m.group(4)), float(m.group(5))
            try:
                wp = Waypoint(t, Point(x, y), speed)
            except ValueError as exc:
                raise TraceFormatError(str(exc), lineno) from None
            moves.setdefault(node, []).append((wp, lineno))
            continue
        raise TraceFormatError(f"unrecognized command: {line!r}", lineno)
    return _assemble(initials, moves, horizon)


def format_movement_script(traces: Iterable[MobilityTrace]) -> str:
    traces = sorted(traces, key=lambda tr: tr.node)
    out = []
    for tr in traces:
        out.append(f"$node_({tr.node}) set X_ {tr.initial.x!r}")
        out.append(f"$node_({tr.node}) set Y_ {tr.initial.y!r}")
        out.append(f"$node_({tr.node}) set Z_ 0.0")
    cmds = sorted(
        (wp.time, tr.node, wp) for tr in traces for wp in tr.waypoints
    )
    for t, node, wp in cmds:
        out.append(
            f'$ns_ at {t!r} "$node_({node}) setdest {wp.target.x!r} {wp.target.y!r} {wp.speed!r}"'
        )
    return "\n".join(out) + "\n"


CSV_HEADER = ["node", "time", "x", "y", "speed"]


def parse_waypoint_csv(text: str, horizon: Optional[float] = None) -> list[MobilityTrace]:
    """Parse ``node,time,x,y,speed`` rows; ``time=0,speed=0`` rows place a
    node initially."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if [h.strip() for h in header] != CSV_HEADER:
        raise TraceFormatError(f"expected header {','.join(CSV_HEADER)}", 1)
    initials: dict[int, tuple] = {}
    moves: dict[int, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 5:
            raise TraceFormatError(f"expected 5 fields, got {len(row)}", lineno)
        try:
            node = int(row[0])
            t, x, y, speed = (float(v) for v in row[1:])
        except ValueError:
            raise TraceFormatError(f"non-numeric field in {row!r}", lineno) from None
        if t == 0.0 and speed == 0.0:
            if node in initials:
                raise TraceFormatError(f"duplicate initial position for node {node}", lineno)
            initials[node] = (x, y)
            continue
        try:
            wp = Waypoint(t, Point(x, y), speed)
        except ValueError as exc:
            raise TraceFormatError(str(exc), lineno) from None
        moves.setdefault(node, []).append((wp, lineno))
    return _assemble(initials, moves, horizon)


def format_waypoint_csv(traces: Iterable[MobilityTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for tr in sorted(traces, key=lambda tr: tr.node):
        w.writerow([tr.node, 0.0, repr(tr.initial.x), repr(tr.initial.y), 0.0])
        for wp in tr.waypoints:
            w.writerow([tr.node, repr(wp.time), repr(wp.target.x), repr(wp.target.y), repr(wp.speed)])
    return buf.getvalue()


def load_traces(path, horizon: Optional[float] = None) -> list[MobilityTrace]:
    """Read an ns-2 movement script or a waypoint CSV (by ``.csv`` suffix)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return parse_waypoint_csv(text, horizon)
    return parse_movement_script(text, horizon)


# --- preprocessing -----------------------------------------------------------

def truncate(trace: MobilityTrace, duration: float) -> MobilityTrace:
    return replace(
        trace,
        waypoints=tuple(w for w in trace.waypoints if w.time <= duration),
        horizon=duration,
    )


def preprocess(traces: Iterable[MobilityTrace], arena: ArenaSpec) -> list[MobilityTrace]:
    """Crop to the arena's duration, drop traces that ever come within the
    edge margin, keep the ``top_n`` busiest (ties to the lowest node id)."""
    lo_x, hi_x = arena.margin, arena.width - arena.margin
    lo_y, hi_y = arena.margin, arena.height - arena.margin
    survivors = []
    for tr in traces:
        tr = truncate(tr, arena.duration)
        _, pts = tr._breakpoints
        if (
            pts[:, 0].min() < lo_x or pts[:, 0].max() > hi_x
            or pts[:, 1].min() < lo_y or pts[:, 1].max() > hi_y
        ):
            continue
        survivors.append(tr)
    if len(survivors) < arena.top_n:
        log.warning("only %d traces survive preprocessing (wanted %d)", len(survivors), arena.top_n)
    survivors.sort(key=lambda tr: (-len(tr.waypoints), tr.node))
    return sorted(survivors[: arena.top_n], key=lambda tr: tr.node)


def apply_pause(trace: MobilityTrace, pause: float, purge_limit: float) -> MobilityTrace:
    """Insert at least ``pause`` idle seconds between consecutive legs.

    Each leg starts at ``max(original start, previous arrival + pause)``;
    legs that would start after ``purge_limit`` are removed. A pause of
    ``purge_limit`` or more leaves the node at its initial position.
    """
    if pause < 0:
        raise ValueError("pause must be >= 0")
    if not purge_limit > 0:
        raise ValueError("purge_limit must be > 0")
    if pause >= purge_limit:
        return replace(trace, waypoints=())
    if pause == 0:
        return replace(trace, waypoints=tuple(w for w in trace.waypoints if w.time <= purge_limit))
    out = []
    prev_target = trace.initial
    arrival = None
    for wp in trace.waypoints:
        start = wp.time if arrival is None else max(wp.time, arrival + pause)
        if out and start <= out[-1].time:
            # a pause below float resolution must still keep times increasing
            start = math.nextafter(out[-1].time, math.inf)
        if start > purge_limit:
            break
        if wp.speed > 0:
            arrival = start + prev_target.dist(wp.target) / wp.speed
            prev_target = wp.target
        else:
            arrival = start  # halts in place
        out.append(Waypoint(start, wp.target, wp.speed))
    return replace(trace, waypoints=tuple(out))


# --- synthesis ---------------------------------------------------------------

def gauss_markov_series(z0: float, mu: float, gamma: float, sigma: float, n: int,
                        rng: np.random.Generator) -> np.ndarray:
    """``n`` samples of z_t = g*z_{t-1} + (1-g)*mu + sqrt(1-g^2)*sigma*eps."""
    out = np.empty(n)
    z = z0
    k = math.sqrt(max(0.0, 1.0 - gamma * gamma)) * sigma
    eps = rng.standard_normal(n)
    for i in range(n):
        out[i] = z
        z = gamma * z + (1.0 - gamma) * mu + k * eps[i]
    return out


def _reflect(p: float, lo: float, hi: float) -> tuple[float, bool]:
    flipped = False
    if hi <= lo:
        return lo, False
    while p < lo or p > hi:
        p = 2 * lo - p if p < lo else 2 * hi - p
        flipped = not flipped
    return p, flipped


def synth_gauss_markov(config: GaussMarkovConfig, seed, n_nodes: int, arena: ArenaSpec,
                       duration: float, d: float = 10.0,
                       speed_range: tuple[float, float] = (10.0, 20.0)) -> list[MobilityTrace]:
    """Synthetic traces with Gauss-Markov speed and heading.

    Each node draws its mean speed from ``speed_range`` and a mean heading
    uniformly, starts at its means, and emits one waypoint every ``d``
    seconds. Nodes stay inside the arena's margin box; hitting a wall
    mirrors both the heading and its mean.
    """
    if not 0.0 <= config.gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    gamma = config.gamma
    k = math.sqrt(max(0.0, 1.0 - gamma * gamma))
    lo_x, hi_x = arena.margin, arena.width - arena.margin
    lo_y, hi_y = arena.margin, arena.height - arena.margin
    n_steps = int(math.ceil(duration / d - 1e-12))
    traces = []
    for node in range(n_nodes):
        x, y = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        mu_v = rng.uniform(*speed_range)
        mu_th = rng.uniform(0.0, 2 * math.pi)
        speeds = gauss_markov_series(mu_v, mu_v, gamma, config.noise_sigma, n_steps, rng)
        eps_th = rng.standard_normal(n_steps)
        th = mu_th
        start = Point(x, y)
        wps = []
        for i in range(n_steps):
            v = max(0.0, float(speeds[i]))
            nx, fx = _reflect(x + v * d * math.cos(th), lo_x, hi_x)
            ny, fy = _reflect(y + v * d * math.sin(th), lo_y, hi_y)
            if fx:
                th, mu_th = math.pi - th, math.pi - mu_th
            if fy:
                th, mu_th = -th, -mu_th
            step = math.hypot(nx - x, ny - y)
            wps.append(Waypoint(i * d, Point(nx, ny), step / d))
            x, y = nx, ny
            delta = angle_diff(th, mu_th)
            th = wrap_angle(mu_th + gamma * delta + k * config.heading_sigma * eps_th[i])
            mu_th = wrap_angle(mu_th)
        traces.append(MobilityTrace(node, start, tuple(wps), horizon=duration))
    return traces
