"""Geodesic distances between sensors on the WGS-84 ellipsoid.

Distances are computed with Vincenty's inverse formula. The iteration is
known to stall for nearly antipodal pairs; by default that raises
:class:`NonConvergence`, and callers may opt in to a spherical (haversine)
fallback instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# WGS-84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = (1.0 - WGS84_F) * WGS84_A
MEAN_RADIUS = (2.0 * WGS84_A + WGS84_B) / 3.0

TOLERANCE = 1e-12
MAX_ITERATIONS = 200


class NonConvergence(ArithmeticError):
    """Vincenty's iteration failed to converge for a pair of points."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True)
class GeoCoordinate:
    latitude: float
    longitude: float

    def __post_init__(self):
        lat, lon = float(self.latitude), float(self.longitude)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "latitude", lat)
        object.__setattr__(self, "longitude", lon)


def _as_coordinate(p) -> GeoCoordinate:
    if isinstance(p, GeoCoordinate):
        return p
    lat, lon = p
    return GeoCoordinate(lat, lon)


def haversine_distance(a, b) -> float:
    """Great-circle distance in meters on a sphere of the WGS-84 mean radius."""
    a, b = _as_coordinate(a), _as_coordinate(b)
    phi1, phi2 = math.radians(a.latitude), math.radians(b.latitude)
    dphi = phi2 - phi1
    dlam = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2.0 * MEAN_RADIUS * math.asin(min(1.0, math.sqrt(h)))


def _vincenty_ordered(a: GeoCoordinate, b: GeoCoordinate) -> float:
    f = WGS84_F
    L = math.radians(b.longitude - a.longitude)
    # wrap to (-pi, pi]
    L = (L + math.pi) % (2.0 * math.pi) - math.pi
    U1 = math.atan((1.0 - f) * math.tan(math.radians(a.latitude)))
    U2 = math.atan((1.0 - f) * math.tan(math.radians(b.latitude)))
    sinU1, cosU1 = math.sin(U1), math.cos(U1)
    sinU2, cosU2 = math.sin(U2), math.cos(U2)

    lam = L
    for _ in range(MAX_ITERATIONS):
        sin_lam, cos_lam = math.sin(lam), math.cos(lam)
        sin_sigma = math.hypot(cosU2 * sin_lam, cosU1 * sinU2 - sinU1 * cosU2 * cos_lam)
        if sin_sigma == 0.0:
            return 0.0  # coincident points
        cos_sigma = sinU1 * sinU2 + cosU1 * cosU2 * cos_lam
        sigma = math.atan2(sin_sigma, cos_sigma)
        sin_alpha = cosU1 * cosU2 * sin_lam / sin_sigma
        cos2_alpha = 1.0 - sin_alpha * sin_alpha
        # equatorial line: cos2_alpha == 0
        cos_2sm = cos_sigma - 2.0 * sinU1 * sinU2 / cos2_alpha if cos2_alpha != 0.0 else 0.0
        C = f / 16.0 * cos2_alpha * (4.0 + f * (4.0 - 3.0 * cos2_alpha))
        lam_prev = lam
        lam = L + (1.0 - C) * f * sin_alpha * (
            sigma + C * sin_sigma * (cos_2sm + C * cos_sigma * (-1.0 + 2.0 * cos_2sm * cos_2sm))
        )
        if abs(lam) > math.pi:
            raise NonConvergence("Vincenty iteration left the valid longitude range (near-antipodal pair)")
        if abs(lam - lam_prev) < TOLERANCE:
            break
    else:
        raise NonConvergence(f"Vincenty iteration did not converge in {MAX_ITERATIONS} iterations")

    u2 = cos2_alpha * (WGS84_A ** 2 - WGS84_B ** 2) / WGS84_B ** 2
    A = 1.0 + u2 / 16384.0 * (4096.0 + u2 * (-768.0 + u2 * (320.0 - 175.0 * u2)))
    B = u2 / 1024.0 * (256.0 + u2 * (-128.0 + u2 * (74.0 - 47.0 * u2)))
    d_sigma = B * sin_sigma * (
        cos_2sm
        + B / 4.0 * (
            cos_sigma * (-1.0 + 2.0 * cos_2sm * cos_2sm)
            - B / 6.0 * cos_2sm * (-3.0 + 4.0 * sin_sigma * sin_sigma) * (-3.0 + 4.0 * cos_2sm * cos_2sm)
        )
    )
    return WGS84_B * A * (sigma - d_sigma)


def vincenty_distance(a, b, fallback: bool = False) -> float:
    """Geodesic distance in meters between two points on the WGS-84 ellipsoid.

    ``a`` and ``b`` are :class:`GeoCoordinate` instances or ``(lat, lon)``
    pairs in decimal degrees. With ``fallback=True`` a near-antipodal pair
    that defeats the iteration is measured with :func:`haversine_distance`
    instead of raising :class:`NonConvergence`.
    """
    a, b = _as_coordinate(a), _as_coordinate(b)
    if a == b:
        return 0.0
    # evaluate in a canonical order so that d(a, b) == d(b, a) bitwise
    if (b.latitude, b.longitude) < (a.latitude, a.longitude):
        a, b = b, a
    try:
        return _vincenty_ordered(a, b)
    except NonConvergence:
        if fallback:
            return haversine_distance(a, b)
        raise


def build_distance_matrix(sensors: Sequence, fallback: bool = False) -> np.ndarray:
    """Symmetric matrix of pairwise Vincenty distances in meters."""
    coords = [_as_coordinate(s) for s in sensors]
    n = len(coords)
    if n < 2:
        raise ValueError(f"need at least 2 sensors to build a distance matrix, got {n}")
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            try:
                d = vincenty_distance(coords[i], coords[j], fallback=fallback)
            except NonConvergence as exc:
                raise NonConvergence(f"sensors {i} and {j}: {exc}", pair=(i, j)) from exc
            D[i, j] = D[j, i] = d
    return D


def validate_distance_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {D.shape}")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise ValueError("distance matrix entries must be finite and non-negative")
    if not np.array_equal(D, D.T):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.diag(D) != 0):
        raise ValueError("distance matrix must have a zero diagonal")
    return D
