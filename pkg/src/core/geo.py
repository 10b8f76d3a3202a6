"""Great-circle and planar distances in metres on a 6371 km sphere."""
import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_many_m(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Distances from one point to many, vectorized."""
    phi1 = np.radians(lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(lons - lon)
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def project_planar(lats: np.ndarray, lons: np.ndarray, lat0: float | None = None) -> np.ndarray:
    """Equirectangular projection around `lat0` (default: the centroid), returns (n, 2) metres."""
    if lat0 is None:
        lat0 = float(np.mean(lats)) if len(lats) else 0.0
    lat0 = np.radians(lat0)
    x = np.radians(lons) * np.cos(lat0) * EARTH_RADIUS_M
    y = np.radians(lats) * EARTH_RADIUS_M
    return np.column_stack([x, y])
