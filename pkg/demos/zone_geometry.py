"""
Decryption zones and their core
===============================

A receiver advertises speed, heading and two maneuverability extents.
From those a sender can place the elliptical decryption zone at any
later time. Here we build one, classify a few points, and measure how
much of the implied bivariate normal lands in the advertisement-free
core.
"""

import math

import numpy as np

from geoenc.geometry import MobilityParams, Point, Region, build_zone, classify

# a node heading north-east at 12 m/s, anchored at the origin at t=0
params = MobilityParams(v=12.0, theta=math.pi / 3, alpha=80.0, beta=50.0,
                        anchor=Point(0.0, 0.0), anchor_time=0.0)
zone = build_zone(params, t=5.0)
print("center after 5 s:", zone.center)
print(f"sigmas {zone.sigma_x:.2f} x {zone.sigma_y:.2f}, rho {zone.rho:.3f}, c {zone.c:.3f}")

###############################################################################
# Walk outward from the center along the x axis

for k in (0.0, 1.0, 2.5, 3.5, 10.0):
    p = (zone.center.x + k * zone.sigma_x, zone.center.y)
    print(f"{k:4.1f} sigma_x out -> {classify(p, zone).name}")

###############################################################################
# Monte Carlo: fraction of the zone's distribution inside the core.
# The core is the 2-sigma ellipse, so the answer is 1 - exp(-2).

cov = [[zone.sigma_x**2, zone.rho * zone.sigma_x * zone.sigma_y],
       [zone.rho * zone.sigma_x * zone.sigma_y, zone.sigma_y**2]]
pts = np.random.default_rng(0).multivariate_normal(zone.center, cov, 100_000)
inside = np.mean(zone.q_inner(pts) <= zone.c)
print(f"core mass {inside:.4f}  (analytic {1 - math.exp(-2):.4f})")
print(f"zone mass {np.mean(zone.q_outer(pts) <= zone.c):.4f}  (analytic {1 - math.exp(-4.5):.4f})")
