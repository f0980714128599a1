"""Online estimation of a node's own mobility parameters from GPS readings.

Readings arrive every ``d`` seconds. Every ``period_len`` readings the
node re-estimates speed and heading (smoothed by a Gauss-Markov
predictor toward the currently advertised values), the positional
scatter, and the maneuverability extents. A new parameter set is
advertised only when it differs significantly from the advertised one
and the node is in the edge band of its own decryption zone.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    MobilityParams,
    Point,
    Region,
    angle_diff,
    build_zone,
    classify,
    wrap_angle,
)

log = logging.getLogger(__name__)

VERTICAL_EPS = 1e-9


@dataclass(frozen=True)
class GpsTrack:
    readings: np.ndarray  # (n, 2)
    d: float = 1.0
    start_time: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.readings, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "readings", arr)
        if not self.d > 0:
            raise ValueError(f"reading interval must be > 0, got {self.d}")


@dataclass(frozen=True)
class GaussMarkovConfig:
    gamma: float = 0.5
    period_len: int = 10
    noise_sigma: float = 1.0
    # heading innovation std (radians), only used by the synthetic generator
    heading_sigma: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.period_len < 2:
            raise ValueError(f"period_len must be >= 2, got {self.period_len}")


@dataclass(frozen=True)
class Thresholds:
    dv: float = 1.0
    dtheta: float = 0.2
    dalpha: float = 10.0
    dbeta: float = 10.0

    def __post_init__(self):
        if min(self.dv, self.dtheta, self.dalpha, self.dbeta) < 0:
            raise ValueError("thresholds must be non-negative")


@dataclass
class EstimateState:
    v_hat: float
    theta_hat: float
    alpha_hat: float
    beta_hat: float
    params: MobilityParams
    period_index: int = 0

    @classmethod
    def from_params(cls, params: MobilityParams) -> "EstimateState":
        return cls(params.v, params.theta, params.alpha, params.beta, params)


def _as_track(track) -> GpsTrack:
    return track if isinstance(track, GpsTrack) else GpsTrack(track)


def estimate_initial(track) -> tuple[float, float]:
    """Mean step speed and heading over a run of readings.

    The heading is the arctangent of the mean step slope, with the
    quadrant taken from the net displacement. Near-vertical steps are left
    out of the slope mean; a track made only of vertical steps heads
    straight north or south.
    """
    track = _as_track(track)
    pts = track.readings
    if len(pts) < 2:
        raise ValueError("insufficient readings: need at least 2")
    steps = np.diff(pts, axis=0)
    v0 = float(np.mean(np.hypot(steps[:, 0] / track.d, steps[:, 1] / track.d)))

    net = pts[-1] - pts[0]
    ok = np.abs(steps[:, 0]) > VERTICAL_EPS
    if not ok.any():
        return v0, (3 * math.pi / 2 if net[1] < 0 else math.pi / 2)
    slope = float(np.mean(steps[ok, 1] / steps[ok, 0]))
    theta = math.atan(slope)
    # atan only resolves (-pi/2, pi/2); flip when that points against the net motion
    if math.cos(theta) * net[0] + math.sin(theta) * net[1] < 0:
        theta += math.pi
    return v0, wrap_angle(theta)


def gm_update(prev: float, anchor: float, gamma: float) -> float:
    """One Gauss-Markov prediction step from ``prev`` toward the mean ``anchor``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma * prev + (1.0 - gamma) * anchor


def gm_update_angle(prev: float, anchor: float, gamma: float) -> float:
    """:func:`gm_update` on the circle: smooths the wrapped difference."""
    return wrap_angle(anchor + gm_update(angle_diff(prev, anchor), 0.0, gamma))


def estimate_sigmas(track) -> tuple[float, float]:
    pts = _as_track(track).readings
    if len(pts) < 2:
        raise ValueError("insufficient readings: need at least 2")
    sx, sy = np.std(pts, axis=0, ddof=1)
    return float(sx), float(sy)


def estimate_maneuverability(center, sigma_x_hat: float, sigma_y_hat: float,
                             theta_hat: float) -> tuple[float, float]:
    """Invert the zone-shape relation: extents from observed sigmas."""
    if sigma_x_hat < 0 or sigma_y_hat < 0:
        raise ValueError("sigma estimates must be non-negative")
    cx, cy = center
    ct, st = math.cos(theta_hat), math.sin(theta_hat)
    ux, uy = sigma_x_hat - cx, sigma_y_hat - cy
    alpha = cx + 6.0 * ux * ct - 6.0 * uy * st
    beta = cy + 6.0 * ux * st + 6.0 * uy * ct
    if not (alpha > 0.0 and beta > 0.0):
        raise ValueError(f"maneuverability collapse: alpha={alpha}, beta={beta}")
    return alpha, beta


def significant(old: MobilityParams, new: EstimateState, thr: Thresholds) -> bool:
    return (
        abs(new.v_hat - old.v) > thr.dv
        or abs(angle_diff(new.theta_hat, old.theta)) > thr.dtheta
        or abs(new.alpha_hat - old.alpha) > thr.dalpha
        or abs(new.beta_hat - old.beta) > thr.dbeta
    )


def maybe_advertise(state: EstimateState, true_pos, zone, thr: Thresholds,
                    now: float) -> Optional[MobilityParams]:
    """Replace and return the advertised parameters when the current
    estimates are significant and the node sits in the edge band."""
    if not significant(state.params, state, thr):
        return None
    if classify(true_pos, zone) is not Region.EDGE:
        return None
    new = MobilityParams(
        v=state.v_hat, theta=state.theta_hat, alpha=state.alpha_hat, beta=state.beta_hat,
        anchor=Point(*true_pos), anchor_time=now,
    )
    state.params = new
    return new


def initial_params(position, t0: float = 0.0, sigma0: float = 10.0,
                   theta0: float = 0.0) -> MobilityParams:
    """Stationary starting parameters whose zone at ``t0`` has sigmas ``sigma0``.

    Falls back to the origin-frame extents ``6*sigma0`` when inverting at
    ``position`` collapses.
    """
    try:
        alpha, beta = estimate_maneuverability(position, sigma0, sigma0, theta0)
    except ValueError:
        alpha = beta = 6.0 * sigma0
    return MobilityParams(0.0, theta0, alpha, beta, Point(*position), t0)


@dataclass
class MobilityEstimator:
    """Per-node estimation loop driven by periodic GPS readings."""

    params: MobilityParams
    config: GaussMarkovConfig = field(default_factory=GaussMarkovConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    d: float = 1.0

    def __post_init__(self):
        self.state = EstimateState.from_params(self.params)
        self._buf: deque = deque(maxlen=self.config.period_len)
        self._count = 0
        self.advertisements = 0

    @property
    def advertised(self) -> MobilityParams:
        return self.state.params

    def readvertise_candidate(self, pos, now: float) -> MobilityParams:
        """Current estimates anchored at ``pos``. Not committed: assign to
        ``state.params`` once actually sent."""
        s = self.state
        try:
            return MobilityParams(s.v_hat, s.theta_hat, s.alpha_hat, s.beta_hat, Point(*pos), now)
        except ValueError:
            return s.params.reanchored(Point(*pos), now)

    def observe(self, pos, now: float) -> Optional[MobilityParams]:
        """Feed one reading; at period boundaries may return new parameters
        to advertise."""
        self._buf.append(pos)
        self._count += 1
        if self._count % self.config.period_len:
            return None
        s = self.state
        s.period_index += 1
        track = GpsTrack(np.array(self._buf), self.d)
        v_obs, theta_obs = estimate_initial(track)
        gamma = self.config.gamma
        s.v_hat = max(0.0, gm_update(v_obs, s.params.v, gamma))
        s.theta_hat = gm_update_angle(theta_obs, s.params.theta, gamma)
        try:
            sx, sy = estimate_sigmas(track)
            s.alpha_hat, s.beta_hat = estimate_maneuverability(pos, sx, sy, s.theta_hat)
        except ValueError:
            # keep the previous extents
            pass
        try:
            zone = build_zone(s.params, now)
        except ValueError:
            log.debug("zone undefined at t=%.3f, skipping advertisement", now)
            return None
        new = maybe_advertise(s, pos, zone, self.thresholds, now)
        if new is not None:
            self.advertisements += 1
        return new

