"""
Check-in ingestion: Gowalla-layout TSV -> bbox filter -> one node per location.

Gowalla rows are `user_id <TAB> checkin_time <TAB> lat <TAB> lon <TAB> location_id`.
When the real file is unavailable, `synthetic_checkins` produces rows of the
same layout from a mixture of Gaussians inside the box.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.errors import EmptyDatasetError
from src.core.logger.logger import Logger
from src.models.node import NodeRecord

log = Logger("ingest").log

GOWALLA_COLUMNS = ["user_id", "checkin_time", "lat", "lon", "location_id"]


@dataclass(frozen=True)
class BBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"Degenerate bounding box: {self}")

    @classmethod
    def parse(cls, text: str) -> BBox:
        """From `lat1,lat2,lon1,lon2`."""
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 4:
            raise ValueError(f"Bounding box needs lat1,lat2,lon1,lon2, got {text!r}")
        lat1, lat2, lon1, lon2 = (float(p) for p in parts)
        return cls(min(lat1, lat2), max(lat1, lat2), min(lon1, lon2), max(lon1, lon2))

    def contains(self, lat, lon):
        return (lat >= self.lat_min) & (lat <= self.lat_max) & (lon >= self.lon_min) & (lon <= self.lon_max)


BEIJING = BBox(39.433333, 41.05, 115.416666, 117.50)


def read_checkins(path: str | Path) -> tuple[pd.DataFrame, int]:
    """
    Parses a Gowalla-layout file.

    Returns:
        tuple[pd.DataFrame, int]: Well-formed rows (typed) and the number of
        rows skipped because they were malformed.
    """
    skipped = 0

    def bad_line(fields: list[str]):
        nonlocal skipped
        skipped += 1
        return None

    try:
        raw = pd.read_csv(path, sep="\t", header=None, names=GOWALLA_COLUMNS, dtype=str,
                          engine="python", on_bad_lines=bad_line, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raw = pd.DataFrame(columns=GOWALLA_COLUMNS)
    return _typed(raw, skipped)


def _typed(raw: pd.DataFrame, skipped: int = 0) -> tuple[pd.DataFrame, int]:
    df = pd.DataFrame({
        "user_id": pd.to_numeric(raw["user_id"], errors="coerce"),
        "checkin_time": raw["checkin_time"],
        "lat": pd.to_numeric(raw["lat"], errors="coerce"),
        "lon": pd.to_numeric(raw["lon"], errors="coerce"),
        "location_id": pd.to_numeric(raw["location_id"], errors="coerce"),
    })
    times = pd.to_datetime(df["checkin_time"], errors="coerce", utc=True, format="ISO8601")
    ok = (df[["user_id", "lat", "lon", "location_id"]].notna().all(axis=1) & times.notna()
          & df["lat"].between(-90, 90) & df["lon"].between(-180, 180))
    skipped += int((~ok).sum())
    df = df[ok].astype({"user_id": "int64", "location_id": "int64"}).reset_index(drop=True)
    return df, skipped


def nodes_from_checkins(df: pd.DataFrame, bbox: BBox, seed: int,
                        capability_range: tuple[float, float] = (1.0, 10.0)) -> list[NodeRecord]:
    """
    Filters to `bbox`, keeps the first check-in of every location and draws a
    capability per location, uniform over `capability_range`.

    Node ids are location ids; capabilities are assigned in ascending id order
    so they do not depend on row order.
    """
    inside = df[bbox.contains(df["lat"], df["lon"])]
    locations = inside.drop_duplicates("location_id", keep="first").sort_values("location_id")
    low, high = capability_range
    if low > high or low < 0:
        raise ValueError(f"Invalid capability range: {capability_range}")
    caps = np.random.default_rng(seed).uniform(low, high, size=len(locations))
    return [NodeRecord(int(i), float(lat), float(lon), float(cap))
            for i, lat, lon, cap in zip(locations["location_id"], locations["lat"], locations["lon"], caps)]


def ingest(path: str | Path, bbox: BBox = BEIJING, seed: int = 0,
           capability_range: tuple[float, float] = (1.0, 10.0)) -> list[NodeRecord]:
    """
    Reads check-ins, filters them to `bbox` and returns one node per location.

    Raises:
        EmptyDatasetError: If no node survives the filters.
    """
    df, skipped = read_checkins(path)
    if skipped:
        log.warning(f"⚠️ Skipped {skipped} malformed rows in {path}")
    nodes = nodes_from_checkins(df, bbox, seed, capability_range)
    if not nodes:
        raise EmptyDatasetError("no nodes")
    log.info(f"✅ Ingested {len(nodes)} nodes from {len(df)} check-ins in {path}")
    return nodes


def synthetic_checkins(locations: int, seed: int, bbox: BBox = BEIJING, centres: int = 8,
                       outside_share: float = 0.03) -> pd.DataFrame:
    """
    Gowalla-layout check-ins drawn from a mixture of Gaussians inside `bbox`.

    Each location gets one to three check-ins; a small share of extra rows
    falls outside the box so the filter has something to do.
    """
    if locations < 0:
        raise ValueError(f"locations must be nonnegative, got {locations}")
    rng = np.random.default_rng(seed)
    lat_span, lon_span = bbox.lat_max - bbox.lat_min, bbox.lon_max - bbox.lon_min
    mu = np.column_stack([bbox.lat_min + lat_span * rng.uniform(0.15, 0.85, centres),
                          bbox.lon_min + lon_span * rng.uniform(0.15, 0.85, centres)])
    sigma = rng.uniform(0.02, 0.10, centres) * min(lat_span, lon_span)
    weights = rng.dirichlet(np.full(centres, 2.0))

    points = np.empty((0, 2))
    while len(points) < locations:
        k = rng.choice(centres, size=locations, p=weights)
        draw = mu[k] + rng.normal(size=(locations, 2)) * sigma[k, None]
        draw = draw[bbox.contains(draw[:, 0], draw[:, 1])]
        points = np.vstack([points, draw])
    points = points[:locations]

    location_ids = np.arange(1, locations + 1)
    repeats = rng.integers(1, 4, size=locations)
    rows_lat = np.repeat(points[:, 0], repeats)
    rows_lon = np.repeat(points[:, 1], repeats)
    rows_loc = np.repeat(location_ids, repeats)

    n_out = int(round(outside_share * locations))
    out_lat = bbox.lat_max + rng.uniform(0.05, 1.0, n_out)
    out_lon = bbox.lon_min + lon_span * rng.uniform(0, 1, n_out)
    rows_lat = np.concatenate([rows_lat, out_lat])
    rows_lon = np.concatenate([rows_lon, out_lon])
    rows_loc = np.concatenate([rows_loc, np.arange(locations + 1, locations + 1 + n_out)])

    n_rows = len(rows_loc)
    start = pd.Timestamp("2009-02-01T00:00:00Z")
    offsets = pd.to_timedelta(np.sort(rng.integers(0, 600 * 86_400, n_rows)), unit="s")
    return pd.DataFrame({
        "user_id": rng.integers(0, max(1, locations // 3) + 1, n_rows),
        "checkin_time": (start + offsets).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "lat": np.round(rows_lat, 7),
        "lon": np.round(rows_lon, 7),
        "location_id": rows_loc,
    }, columns=GOWALLA_COLUMNS)


def write_checkins(df: pd.DataFrame, path: str | Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep="\t", header=False, index=False)


def synthetic_nodes(locations: int, seed: int, bbox: BBox = BEIJING,
                    capability_range: tuple[float, float] = (1.0, 10.0)) -> list[NodeRecord]:
    """Synthetic dataset-free equivalent of `ingest`."""
    df, _ = _typed(synthetic_checkins(locations, seed, bbox).astype(str))
    nodes = nodes_from_checkins(df, bbox, seed, capability_range)
    if not nodes:
        raise EmptyDatasetError("no nodes")
    return nodes
