"""
Estimating your own mobility from GPS readings
==============================================

A node reads its position once a second. Every ten readings it
re-estimates speed and heading, smooths them toward what it last
advertised, and advertises again only when the change is significant
and it has drifted into the edge band of its own zone.
"""

import math

from geoenc.estimation import GaussMarkovConfig, MobilityEstimator, initial_params
from geoenc.geometry import Point

# start near the origin so the first zone is a modest 10 m one
est = MobilityEstimator(initial_params(Point(1.0, 1.0)), GaussMarkovConfig(gamma=0.5))

# drive north-east at ~3.5 m/s, then swing north for a while
pos = Point(1.0, 1.0)
for t in range(1, 121):
    heading = math.pi / 4 if t <= 60 else math.pi / 2
    pos = Point(pos.x + 3.5 * math.cos(heading), pos.y + 3.5 * math.sin(heading))
    new = est.observe(pos, float(t))
    if new is not None:
        print(f"t={t:3d}s advertise v={new.v:.2f} m/s theta={new.theta:.2f} rad "
              f"anchored at ({new.anchor.x:.1f}, {new.anchor.y:.1f})")

s = est.state
print(f"{s.period_index} periods, {est.advertisements} advertisements, "
      f"final estimate v={s.v_hat:.2f} theta={s.theta_hat:.2f}")
