"""
Simulated edge-server records and their CSV representation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

import pandas as pd

NODE_COLUMNS = ["node_id", "lat", "lon", "capability", "role"]


class Role(str, Enum):
    LEADER = "leader"
    SECONDARY = "secondary"
    CA = "ca"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class NodeRecord:
    id: int
    lat: float
    lon: float
    capability: float
    role: Role = Role.UNASSIGNED

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"Latitude {self.lat} out of range for node {self.id}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"Longitude {self.lon} out of range for node {self.id}")
        if self.capability < 0:
            raise ValueError(f"Capability of node {self.id} must be nonnegative, got {self.capability}")

    def with_role(self, role: Role) -> NodeRecord:
        return replace(self, role=role)


def nodes_to_frame(nodes: Iterable[NodeRecord]) -> pd.DataFrame:
    rows = [(n.id, n.lat, n.lon, n.capability, n.role.value) for n in nodes]
    return pd.DataFrame(rows, columns=NODE_COLUMNS)


def nodes_from_frame(df: pd.DataFrame) -> list[NodeRecord]:
    missing = set(NODE_COLUMNS[:4]) - set(df.columns)
    if missing:
        raise ValueError(f"Node table is missing columns: {sorted(missing)}")
    roles = df["role"] if "role" in df.columns else [Role.UNASSIGNED.value] * len(df)
    return [NodeRecord(int(i), float(lat), float(lon), float(cap), Role(role))
            for i, lat, lon, cap, role in zip(df["node_id"], df["lat"], df["lon"], df["capability"], roles)]


def write_nodes(nodes: Iterable[NodeRecord], path: str | Path):
    nodes_to_frame(nodes).to_csv(path, index=False, float_format="%.7f")


def read_nodes(path: str | Path) -> list[NodeRecord]:
    return nodes_from_frame(pd.read_csv(path))
