"""Mobile geo-encryption: moving decryption zones, mobility estimation,
a reactive position-update protocol and a discrete-event simulator."""

from .geometry import (
    DecryptionZone,
    MobilityParams,
    Point,
    Region,
    build_zone,
    classify,
    square_decrypt_test,
    zone_center,
    zone_constant,
    zone_sigmas,
)

__version__ = "0.1.0"
