"""
Dual-metric DBSCAN over edge nodes.

Two nodes are neighbours when they are within `eps1` metres of each other AND
their communication capabilities differ by at most `eps2`. Density clustering
then runs on that neighbourhood graph with scikit-learn's DBSCAN on a
precomputed sparse graph, so the classic semantics (core iff at least
`minpts` neighbours including itself, clusters are density-connected cores
plus their borders) come from the library.

Determinism: nodes are processed in ascending id order, cluster ids are
numbered by their smallest core id, and a border node reachable from several
clusters joins the lowest cluster id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from sklearn.cluster import DBSCAN
from sklearn.neighbors import BallTree

from src.core.geo import EARTH_RADIUS_M, haversine_many_m, project_planar
from src.core.logger.logger import Logger
from src.models.node import NodeRecord, Role

log = Logger("clustering").log

NOISE = -1
METRICS = ("haversine", "planar")


@dataclass(frozen=True)
class DbscanParams:
    eps1: float          # metres
    eps2: float          # capability units
    minpts: int
    metric: str = "haversine"

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError(f"eps1 and eps2 must be positive, got eps1={self.eps1}, eps2={self.eps2}")
        if self.minpts < 1:
            raise ValueError(f"minpts must be at least 1, got {self.minpts}")
        if self.metric not in METRICS:
            raise ValueError(f"Distance metric not recognized: {self.metric}")


@dataclass
class ClusterAssignment:
    """node id -> cluster id in [0, count) or NOISE."""
    labels: dict[int, int] = field(default_factory=dict)
    count: int = 0
    core: frozenset[int] = frozenset()

    def members(self, cluster_id: int) -> list[int]:
        return sorted(n for n, c in self.labels.items() if c == cluster_id)

    def clusters(self) -> list[list[int]]:
        groups: list[list[int]] = [[] for _ in range(self.count)]
        for node_id in sorted(self.labels):
            label = self.labels[node_id]
            if label != NOISE:
                groups[label].append(node_id)
        return groups

    def noise(self) -> list[int]:
        return sorted(n for n, c in self.labels.items() if c == NOISE)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.clusters()]

    def largest_fraction(self) -> float:
        if not self.labels:
            return 0.0
        return max(self.sizes(), default=0) / len(self.labels)

    def partition(self) -> set[frozenset[int]]:
        """Label-free view, for comparing assignments up to relabeling."""
        return {frozenset(g) for g in self.clusters()}

    def to_frame(self, roles: dict[int, Role] | None = None) -> pd.DataFrame:
        roles = roles or {}
        rows = [(n, self.labels[n], roles.get(n, Role.UNASSIGNED).value) for n in sorted(self.labels)]
        return pd.DataFrame(rows, columns=["node_id", "cluster_id", "role"])

    def to_csv(self, path: str | Path, roles: dict[int, Role] | None = None):
        self.to_frame(roles).to_csv(path, index=False)


def _arrays(nodes: Sequence[NodeRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lats = np.fromiter((n.lat for n in nodes), dtype=float, count=len(nodes))
    lons = np.fromiter((n.lon for n in nodes), dtype=float, count=len(nodes))
    caps = np.fromiter((n.capability for n in nodes), dtype=float, count=len(nodes))
    return lats, lons, caps


def dual_neighborhood(node: NodeRecord, nodes: Iterable[NodeRecord], params: DbscanParams) -> set[int]:
    """Ids of every node within eps1 metres and eps2 capability of `node`, itself included."""
    nodes = list(nodes)
    if not nodes:
        return {node.id}
    lats, lons, caps = _arrays(nodes)
    if params.metric == "planar":
        xy = project_planar(np.append(lats, node.lat), np.append(lons, node.lon), lat0=float(np.mean(lats)))
        dist = np.hypot(*(xy[:-1] - xy[-1]).T)
    else:
        dist = haversine_many_m(node.lat, node.lon, lats, lons)
    mask = (dist <= params.eps1) & (np.abs(caps - node.capability) <= params.eps2)
    return {nodes[i].id for i in np.flatnonzero(mask)} | {node.id}


def neighborhood_graph(nodes: Sequence[NodeRecord], params: DbscanParams) -> csr_matrix:
    """
    Sparse n x n graph of dual-metric neighbours (diagonal included).

    Stored values are distance + 1 m so that no edge is an implicit zero.
    """
    n = len(nodes)
    lats, lons, caps = _arrays(nodes)
    if params.metric == "planar":
        xy = project_planar(lats, lons)
        tree = BallTree(xy)
        ind, dist = tree.query_radius(xy, r=params.eps1, return_distance=True)
    else:
        coords = np.radians(np.column_stack([lats, lons]))
        tree = BallTree(coords, metric="haversine")
        ind, dist = tree.query_radius(coords, r=params.eps1 / EARTH_RADIUS_M, return_distance=True)
        dist = [d * EARTH_RADIUS_M for d in dist]

    rows, cols, vals = [], [], []
    for i in range(n):
        js, ds = ind[i], dist[i]
        keep = np.abs(caps[js] - caps[i]) <= params.eps2
        rows.append(np.full(int(keep.sum()), i))
        cols.append(js[keep])
        vals.append(ds[keep] + 1.0)
    if n == 0:
        return csr_matrix((0, 0))
    graph = csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    # the ball-tree radius test is inclusive up to float error on both sides; self must always be present
    graph.setdiag(1.0)
    return graph


def cluster(nodes: Iterable[NodeRecord], params: DbscanParams) -> ClusterAssignment:
    """
    Dual-metric DBSCAN.

    Args:
        nodes (Iterable[NodeRecord]): Nodes to cluster; ids must be unique.
        params (DbscanParams): Radii, density threshold and distance metric.

    Returns:
        ClusterAssignment: Every node labeled exactly once, cluster ids dense.
    """
    ordered = sorted(nodes, key=lambda n: n.id)
    if len({n.id for n in ordered}) != len(ordered):
        raise ValueError("Node ids must be unique")
    if not ordered:
        return ClusterAssignment()

    graph = neighborhood_graph(ordered, params)
    model = DBSCAN(eps=params.eps1 + 1.0, min_samples=params.minpts, metric="precomputed")
    raw = model.fit_predict(graph)

    # renumber by smallest core id; sklearn already expands clusters in index
    # order, which makes borders land in the lowest cluster
    core_idx = set(int(i) for i in model.core_sample_indices_)
    first_core: dict[int, int] = {}
    for i in sorted(core_idx):
        first_core.setdefault(int(raw[i]), i)
    remap = {old: new for new, old in enumerate(sorted(first_core, key=first_core.get))}
    labels = {node.id: remap.get(int(label), NOISE) if label != NOISE else NOISE
              for node, label in zip(ordered, raw)}
    assignment = ClusterAssignment(labels, len(remap), frozenset(ordered[i].id for i in core_idx))
    log.debug(f"DBSCAN({params}) -> {assignment.count} clusters, {len(assignment.noise())} noise")
    return assignment


def adopt_noise(assignment: ClusterAssignment, nodes: Iterable[NodeRecord]) -> tuple[ClusterAssignment, list[int]]:
    """
    Attaches each noise node to the cluster of its geographically nearest clustered node.

    Returns the new assignment and the adopted ids. With no cluster at all the
    whole set becomes a single cluster.
    """
    by_id = {n.id: n for n in nodes}
    noise = assignment.noise()
    if not noise:
        return assignment, []
    labels = dict(assignment.labels)
    clustered = [by_id[i] for i in sorted(labels) if labels[i] != NOISE]
    if not clustered:
        return ClusterAssignment({i: 0 for i in labels}, 1 if labels else 0, assignment.core), noise
    lats, lons, _ = _arrays(clustered)
    for node_id in noise:
        node = by_id[node_id]
        dist = haversine_many_m(node.lat, node.lon, lats, lons)
        labels[node_id] = assignment.labels[clustered[int(np.argmin(dist))].id]
    return ClusterAssignment(labels, assignment.count, assignment.core), noise


def assign_roles(assignment: ClusterAssignment, nodes: Iterable[NodeRecord],
                 ca_fraction: float = 0.25) -> dict[int, Role]:
    """
    Per cluster: the most capable node (lowest id on ties) leads, the next
    ceil(ca_fraction * size) nodes by capability are CA nodes, the rest are
    secondaries. Noise stays unassigned.
    """
    if not 0 <= ca_fraction <= 1:
        raise ValueError(f"ca_fraction must lie in [0, 1], got {ca_fraction}")
    by_id = {n.id: n for n in nodes}
    roles = {node_id: Role.UNASSIGNED for node_id in assignment.labels}
    for members in assignment.clusters():
        ranked = sorted(members, key=lambda i: (-by_id[i].capability, i))
        roles[ranked[0]] = Role.LEADER
        n_ca = min(math.ceil(ca_fraction * len(members)), len(members) - 1)
        for node_id in ranked[1:1 + n_ca]:
            roles[node_id] = Role.CA
        for node_id in ranked[1 + n_ca:]:
            roles[node_id] = Role.SECONDARY
    return roles


@dataclass(frozen=True)
class Calibration:
    params: DbscanParams
    largest_fraction: float
    cluster_count: int
    in_band: bool


def calibrate(nodes: Sequence[NodeRecord], grid: Iterable[DbscanParams],
              band: tuple[float, float] = (0.40, 0.72)) -> Calibration:
    """
    Scans `grid` for parameters whose largest cluster holds a share of the
    nodes inside `band`, preferring the share closest to the band centre (first
    grid entry on ties). When nothing lands in the band the closest miss wins.
    """
    lo, hi = band
    centre = (lo + hi) / 2
    best: tuple[tuple, Calibration] | None = None
    for params in grid:
        assignment = cluster(nodes, params)
        fraction = assignment.largest_fraction()
        in_band = lo <= fraction <= hi
        miss = 0.0 if in_band else min(abs(fraction - lo), abs(fraction - hi))
        key = (not in_band, miss, abs(fraction - centre))
        if best is None or key < best[0]:
            best = (key, Calibration(params, fraction, assignment.count, in_band))
    if best is None:
        raise ValueError("Calibration grid is empty")
    result = best[1]
    if result.in_band:
        log.info(f"✅ Calibrated DBSCAN on {len(nodes)} nodes: {result.params} -> largest cluster {result.largest_fraction:.2f}")
    else:
        log.warning(f"⚠️ No grid point puts the largest cluster in {band}; using {result.params} ({result.largest_fraction:.2f})")
    return result


def default_grid(metric: str = "haversine") -> list[DbscanParams]:
    return [DbscanParams(eps1, eps2, minpts, metric)
            for eps1 in (5_000.0, 10_000.0, 20_000.0, 40_000.0, 80_000.0)
            for eps2 in (2.0, 4.0, 6.0, 9.5)
            for minpts in (2, 3, 5)]
