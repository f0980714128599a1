"""Moving elliptical decryption zones.

A receiver advertises its speed, heading and two maneuverability extents.
From these a sender can place the center of the decryption ellipse at any
later time, size it, and a receiver can classify its own position into
one of three regions:

* ``Region.CORE``    - advertisement-free core (2-sigma ellipse)
* ``Region.EDGE``    - still decryptable, advertise significant changes
* ``Region.OUTSIDE`` - cannot decrypt

All lengths are planar meters, times are seconds, angles are radians.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Outer zone: extents cover +/-3 sigma. Core: +/-2 sigma.
OUTER_DIVISOR = 6
INNER_DIVISOR = 4
RHO_CLAMP = 0.999


class Point(NamedTuple):
    x: float
    y: float

    def dist(self, other) -> float:
        return math.hypot(self.x - other[0], self.y - other[1])


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod of tiny negatives can round up to exactly 2*pi
    return 0.0 if t >= TWO_PI else t


def angle_diff(a: float, b: float) -> float:
    """Signed difference ``a - b`` mapped into (-pi, pi]."""
    d = math.fmod(a - b, TWO_PI)
    if d > math.pi:
        d -= TWO_PI
    elif d <= -math.pi:
        d += TWO_PI
    return d


@dataclass(frozen=True)
class MobilityParams:
    """Advertised movement state of one node.

    ``alpha`` and ``beta`` are the speed- and breadth-maneuverability
    extents. ``anchor`` is where the node was at ``anchor_time``.
    """

    v: float
    theta: float
    alpha: float
    beta: float
    anchor: Point
    anchor_time: float = 0.0

    def __post_init__(self):
        if not self.v >= 0.0:
            raise ValueError(f"speed must be >= 0, got {self.v}")
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError(
                f"maneuverability extents must be > 0, got alpha={self.alpha}, beta={self.beta}"
            )
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "anchor", Point(float(self.anchor[0]), float(self.anchor[1])))

    def reanchored(self, anchor, anchor_time: float, **changes) -> "MobilityParams":
        fields = dict(
            v=self.v, theta=self.theta, alpha=self.alpha, beta=self.beta,
            anchor=anchor, anchor_time=anchor_time,
        )
        fields.update(changes)
        return MobilityParams(**fields)


class Region(enum.IntEnum):
    CORE = 1
    EDGE = 2
    OUTSIDE = 3


@dataclass(frozen=True)
class DecryptionZone:
    center: Point
    sigma_x: float
    sigma_y: float
    rho: float
    c: float
    sigma_x_inner: float
    sigma_y_inner: float

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_x_inner, self.sigma_y_inner) <= 0.0:
            raise ValueError("zone sigmas must be positive")
        if not (self.sigma_x_inner < self.sigma_x and self.sigma_y_inner < self.sigma_y):
            raise ValueError("core sigmas must be strictly smaller than the zone sigmas")
        if abs(self.rho) > 1.0 or self.c <= 0.0:
            raise ValueError(f"invalid correlation/constant rho={self.rho}, c={self.c}")

    def q_outer(self, point) -> float:
        return quadratic_form(point, self.center, self.sigma_x, self.sigma_y, self.rho)

    def q_inner(self, point) -> float:
        return quadratic_form(point, self.center, self.sigma_x_inner, self.sigma_y_inner, self.rho)


def zone_center(params: MobilityParams, t: float) -> Point:
    """Center of the decryption region at time ``t``: the anchor carried
    along the advertised heading at the advertised speed."""
    dt = t - params.anchor_time
    if dt < 0.0:
        raise ValueError(f"time before anchor: t={t} < anchor_time={params.anchor_time}")
    return Point(
        params.anchor.x + dt * params.v * math.cos(params.theta),
        params.anchor.y + dt * params.v * math.sin(params.theta),
    )


def zone_sigmas(center, params: MobilityParams, divisor: int = OUTER_DIVISOR) -> tuple[float, float]:
    """Shape sigmas from the maneuverability extents.

    The extents are rotated by the heading and scaled by ``1/divisor``
    relative to the center coordinates; signs are dropped since a sigma is
    a length scale.
    """
    if divisor not in (INNER_DIVISOR, OUTER_DIVISOR):
        raise ValueError(f"divisor must be 4 or 6, got {divisor}")
    cx, cy = center
    ct, st = math.cos(params.theta), math.sin(params.theta)
    da, db = params.alpha - cx, params.beta - cy
    sx = cx + (da * ct + db * st) / divisor
    sy = cy + (-da * st + db * ct) / divisor
    if sx == 0.0 or sy == 0.0:
        raise ValueError(f"degenerate shape: sigma_x={sx}, sigma_y={sy}")
    return abs(sx), abs(sy)


def zone_constant(rho: float) -> float:
    """Membership level for the quadratic form: the 3-sigma Mahalanobis
    boundary, rescaled because the form omits the 1/(1-rho^2) factor."""
    if not abs(rho) < 1.0:
        raise ValueError(f"degenerate correlation: |rho|={abs(rho)} >= 1")
    return 9.0 * (1.0 - rho * rho)


def build_zone(params: MobilityParams, t: float) -> DecryptionZone:
    """Evaluate the full decryption zone of ``params`` at time ``t``.

    The core shares the zone's orientation and is the 2-sigma ellipse of
    the same distribution, i.e. its sigmas are the zone sigmas times 4/6.
    """
    center = zone_center(params, t)
    sx, sy = zone_sigmas(center, params, OUTER_DIVISOR)
    rho = math.cos(params.theta)
    if abs(rho) > RHO_CLAMP:
        log.debug("clamping rho=%.6f for theta=%.6f", rho, params.theta)
        rho = math.copysign(RHO_CLAMP, rho)
    scale = INNER_DIVISOR / OUTER_DIVISOR
    return DecryptionZone(
        center=center,
        sigma_x=sx,
        sigma_y=sy,
        rho=rho,
        c=zone_constant(rho),
        sigma_x_inner=sx * scale,
        sigma_y_inner=sy * scale,
    )


def quadratic_form(point, center, sigma_x, sigma_y, rho):
    """Ellipse membership form; broadcasts over numpy arrays of points
    (``point`` may be an ``(..., 2)`` array)."""
    p = np.asarray(point, dtype=float)
    dx = (p[..., 0] - center[0]) / sigma_x
    dy = (p[..., 1] - center[1]) / sigma_y
    q = dx * dx + dy * dy - 2.0 * rho * dx * dy
    return float(q) if q.ndim == 0 else q


def classify(point, zone: DecryptionZone) -> Region:
    if zone.q_inner(point) <= zone.c:
        return Region.CORE
    if zone.q_outer(point) <= zone.c:
        return Region.EDGE
    return Region.OUTSIDE


def classify_many(points, zone: DecryptionZone) -> np.ndarray:
    """Vectorized :func:`classify`; returns an int array of region values."""
    pts = np.asarray(points, dtype=float)
    out = np.full(pts.shape[:-1], int(Region.OUTSIDE), dtype=int)
    out[zone.q_outer(pts) <= zone.c] = int(Region.EDGE)
    out[zone.q_inner(pts) <= zone.c] = int(Region.CORE)
    return out


def square_decrypt_test(true_pos, claimed, tolerance: float, factor: float = 1.0) -> bool:
    """Simplified decryption: claimed coordinates within a square of
    half-width ``factor * tolerance`` around the true position."""
    if not tolerance > 0.0:
        raise ValueError(f"tolerance must be > 0, got {tolerance}")
    half = factor * tolerance
    return abs(claimed[0] - true_pos[0]) <= half and abs(claimed[1] - true_pos[1]) <= half
