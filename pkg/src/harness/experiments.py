"""
Experiment runners.

    consensus       flat PBFT vs PBFT inside the proposer's cluster, plus the
                    clustered-global mode that gossips the block to every leader
                    and commits it in every cluster
    auth            shares sent to every node vs to the CA nodes of the user's cluster
    auth-multiuser  concurrent users against one cluster's CA nodes
    access          FSS access-control overhead over database size and item size

Every run is a pure function of (configuration, seed): node samples, user
positions, credentials and simulator draws all come from seeds derived from
`sim.seed` and the run coordinates, never from global state.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.core.access_service import AccessService
from src.core.auth_service import AuthService
from src.core.clustering import (
    ClusterAssignment, DbscanParams, adopt_noise, assign_roles, calibrate, cluster, default_grid,
)
from src.core.consensus import (
    PROTOCOL_PHASES, BlockProposal, ChainEntry, ClusterRoster, KeyRing, PbftCluster, RoundOutcome, select_leader,
)
from src.core.fss_access import KeyCeremony
from src.core.geo import haversine_many_m
from src.core.gossip import GossipService, LeaderDirectory
from src.core.logger.logger import Logger
from src.core.netsim import CryptoCosts, Simulator
from src.core.zkp_auth import generate_credential
from src.harness.checks import check_access, check_auth, check_gossip, check_round
from src.harness.config import ExperimentConfig
from src.harness.ingest import BBox, ingest, synthetic_nodes
from src.harness.metrics import ExperimentResult, metrics_frame
from src.models.group import GroupBackend
from src.models.group_factory import get_group
from src.models.node import NodeRecord, Role

log = Logger("experiments").log

USER_ID = 4_000_000_000   # above every location id, inside u32
GOSSIP_TYPES = ("GOSSIP", "PROBE", "PROBE_ACK")


def derive_seed(seed: int, *parts) -> int:
    text = "|".join(str(p) for p in (seed, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


# --- shared setup ----------------------------------------------------------

def load_nodes(cfg: ExperimentConfig) -> list[NodeRecord]:
    bbox = BBox(*cfg.bbox())
    caps = (cfg["data.capability_low"], cfg["data.capability_high"])
    if cfg["data.path"]:
        return ingest(cfg["data.path"], bbox, seed=cfg.seed, capability_range=caps)
    log.info(f"⚠️ data.path not set, generating {cfg['data.synthetic_locations']} synthetic locations")
    return synthetic_nodes(cfg["data.synthetic_locations"], cfg.seed, bbox, caps)


def sample_nodes(nodes: Sequence[NodeRecord], n: int, seed: int) -> list[NodeRecord]:
    """n distinct nodes chosen uniformly, returned in ascending id order."""
    if not 1 <= n <= len(nodes):
        raise ValueError(f"Requested {n} nodes but the dataset holds {len(nodes)}")
    ordered = sorted(nodes, key=lambda node: node.id)
    picked = np.sort(np.random.default_rng(seed).choice(len(ordered), size=n, replace=False))
    return [ordered[i] for i in picked]


def user_position(anchors: Sequence[NodeRecord], rng: random.Random, spread_deg: float = 0.002) -> tuple[float, float]:
    """A user standing near a random anchor node."""
    anchor = anchors[rng.randrange(len(anchors))]
    lat = min(90.0, max(-90.0, anchor.lat + rng.gauss(0.0, spread_deg)))
    lon = min(180.0, max(-180.0, anchor.lon + rng.gauss(0.0, spread_deg)))
    return lat, lon


def crypto_setup(cfg: ExperimentConfig) -> tuple[GroupBackend, CryptoCosts]:
    group = get_group(cfg["crypto.backend"], cfg["crypto.hash"])
    if cfg["crypto.costs"] == "measured":
        log.warning("⚠️ Measured crypto costs make results machine-dependent")
        return group, CryptoCosts.measured(group)
    return group, CryptoCosts()


@dataclass
class Clustering:
    params: DbscanParams
    assignment: ClusterAssignment     # noise already adopted
    roles: dict[int, Role]
    raw_largest_fraction: float
    in_band: bool | None              # None when the parameters were fixed in config
    adopted: int

    def nearest_label(self, nodes: Sequence[NodeRecord], position: tuple[float, float]) -> int:
        lats = np.array([n.lat for n in nodes])
        lons = np.array([n.lon for n in nodes])
        nearest = nodes[int(np.argmin(haversine_many_m(position[0], position[1], lats, lons)))]
        return self.assignment.labels[nearest.id]

    def summary(self) -> dict:
        return {
            "eps1": self.params.eps1, "eps2": self.params.eps2, "minpts": self.params.minpts,
            "metric": self.params.metric, "clusters": self.assignment.count,
            "largest_fraction": round(self.raw_largest_fraction, 6),
            "largest_fraction_adopted": round(self.assignment.largest_fraction(), 6),
            "in_band": self.in_band, "noise_adopted": self.adopted,
        }


def cluster_nodes(sample: Sequence[NodeRecord], cfg: ExperimentConfig) -> Clustering:
    params = cfg.dbscan_params()
    in_band = None
    if params is None:
        result = calibrate(sample, default_grid(cfg["dbscan.metric"]), tuple(cfg["dbscan.band"]))
        params, in_band = result.params, result.in_band
    raw = cluster(sample, params)
    assignment, adopted = adopt_noise(raw, sample)
    roles = assign_roles(assignment, sample, cfg["dbscan.ca_fraction"])
    return Clustering(params, assignment, roles, raw.largest_fraction(), in_band, len(adopted))


def _simulator(cfg: ExperimentConfig, nodes: Sequence[NodeRecord], seed: int) -> Simulator:
    sim = Simulator(cfg.latency(), seed=seed, record_trace=False)
    for node in nodes:
        sim.register(node.id, node.lat, node.lon, node.capability)
    return sim


# --- consensus -------------------------------------------------------------

@dataclass
class _Round:
    time: float
    messages: int


def _payload(trial_seed: int, size: int) -> bytes:
    return random.Random(derive_seed(trial_seed, "payload")).randbytes(size)


def _cluster_round(cfg: ExperimentConfig, members: Sequence[NodeRecord], cluster_id: int,
                   position: tuple[float, float], keyring: KeyRing, costs: CryptoCosts, trial_seed: int) -> _Round:
    """One proposal from the user, committed by `members` alone."""
    sim = _simulator(cfg, members, trial_seed)
    roster = ClusterRoster.build(cluster_id, members, keyring)
    pbft = PbftCluster(sim, roster, keyring, costs, cfg["consensus.view_timeout"], cfg["consensus.client_timeout"])
    pbft.add_client(USER_ID, *position, capability=cfg["sim.user_capability"])
    leader = select_leader(position, roster, random.Random(trial_seed), cfg["consensus.leader_k"])
    proposal = BlockProposal.create(_payload(trial_seed, cfg["consensus.payload_size"]), USER_ID, keyring, 0.0)
    pbft.propose(proposal, leader)
    trace = sim.run_until_quiescent(cfg["sim.max_time"])
    outcome = pbft.outcome(proposal.digest, trace.message_count(PROTOCOL_PHASES))
    check_round(outcome, pbft, f"{len(members)} members")
    return _Round(outcome.last_commit - outcome.start_time, outcome.messages)


def _global_round(cfg: ExperimentConfig, sample: Sequence[NodeRecord], clustering: Clustering, origin: int,
                  position: tuple[float, float], keyring: KeyRing, costs: CryptoCosts,
                  trial_seed: int) -> tuple[_Round, bool]:
    """
    Commit in the origin cluster, gossip among leaders, then every leader
    proposes the block in its own cluster. Time runs until the last cluster
    member anywhere has committed.
    """
    sim = _simulator(cfg, sample, trial_seed)
    by_id = {n.id: n for n in sample}
    clusters = {
        cid: PbftCluster(sim, ClusterRoster.build(cid, [by_id[i] for i in members], keyring), keyring, costs,
                         cfg["consensus.view_timeout"], cfg["consensus.client_timeout"])
        for cid, members in enumerate(clustering.assignment.clusters())
    }
    directory = LeaderDirectory.from_roles(sample, clustering.assignment.labels, clustering.roles)
    leader_of = {info.cluster_id: info.node_id for info in directory}
    digests: dict[int, bytes] = {}

    def relay_commit(leader: int, digest: bytes, payload: bytes):
        cid = directory[leader].cluster_id
        local = BlockProposal.create(payload, leader, keyring, sim.now)
        digests[cid] = local.digest
        node = by_id[leader]
        clusters[cid].add_client(leader, node.lat, node.lon)
        clusters[cid].propose(local, leader)

    gossip = GossipService(sim, directory, cfg.gossip_params(clustering.params.eps1),
                           seed=derive_seed(trial_seed, "gossip"), on_deliver=relay_commit)
    proposal = BlockProposal.create(_payload(trial_seed, cfg["consensus.payload_size"]), USER_ID, keyring, 0.0)
    digests[origin] = proposal.digest
    origin_leader = leader_of[origin]

    def start_gossip(node_id: int, entry: ChainEntry):
        if node_id == origin_leader and entry.digest == proposal.digest:
            gossip.disseminate(entry.digest, origin_leader, proposal.payload)

    home = clusters[origin]
    home.commit_listeners.append(start_gossip)
    home.add_client(USER_ID, *position, capability=cfg["sim.user_capability"])
    leader = select_leader(position, home.roster, random.Random(trial_seed), cfg["consensus.leader_k"])
    home.propose(proposal, leader)
    trace = sim.run_until_quiescent(cfg["sim.max_time"])

    complete = check_gossip(gossip.report(proposal.digest))
    outcomes: list[RoundOutcome] = []
    for cid, digest in sorted(digests.items()):
        outcome = clusters[cid].outcome(digest)
        check_round(outcome, clusters[cid], f"cluster {cid}")
        outcomes.append(outcome)
    last = max(o.last_commit for o in outcomes)
    messages = trace.message_count(PROTOCOL_PHASES + GOSSIP_TYPES)
    return _Round(last - home.start_time[proposal.digest], messages), complete and len(digests) == len(clusters)


def exp_consensus(cfg: ExperimentConfig, nodes: Sequence[NodeRecord]) -> ExperimentResult:
    _, costs = crypto_setup(cfg)
    keyring = KeyRing(cfg.seed)
    trials = cfg["consensus.trials"]
    rows, per_n = [], {}
    for n in cfg["consensus.node_counts"]:
        sample = sample_nodes(nodes, n, derive_seed(cfg.seed, "sample", n))
        clustering = cluster_nodes(sample, cfg)
        by_id = {node.id: node for node in sample}
        runs: dict[str, list[_Round]] = {"flat": [], "clustered": [], "clustered-global": []}
        gossip_complete = True
        for trial in range(trials):
            trial_seed = derive_seed(cfg.seed, "consensus", n, trial)
            position = user_position(sample, random.Random(derive_seed(cfg.seed, "user", n, trial)))
            runs["flat"].append(_cluster_round(cfg, sample, 0, position, keyring, costs, trial_seed))
            label = clustering.nearest_label(sample, position)
            members = [by_id[i] for i in clustering.assignment.members(label)]
            runs["clustered"].append(_cluster_round(cfg, members, label, position, keyring, costs, trial_seed))
            global_round, complete = _global_round(cfg, sample, clustering, label, position, keyring, costs,
                                                   trial_seed)
            runs["clustered-global"].append(global_round)
            gossip_complete &= complete
        for mode, results in runs.items():
            rows.append((n, mode, float(np.mean([r.time for r in results])),
                         float(np.mean([r.messages for r in results]))))
        flat_time = rows[-3][2]
        single = clustering.assignment.count == 1
        if single:
            log.warning(f"⚠️ n={n}: clustering produced a single cluster, clustered mode equals flat")
        per_n[str(n)] = {**clustering.summary(), "single_cluster": single, "gossip_complete": gossip_complete,
                         "clustered_over_flat": rows[-2][2] / flat_time if flat_time > 0 else None}
        log.info(f"✅ consensus n={n}: flat {rows[-3][2]:.4f}s, clustered {rows[-2][2]:.4f}s, "
                 f"global {rows[-1][2]:.4f}s")
    gossip = cfg.gossip_params(1.0)
    metadata = {"per_n": per_n, "trials": trials, "costs": costs.as_dict(),
                "gossip": {"eps3": cfg["gossip.eps3"] or "2 x eps1", "fanout": gossip.fanout, "ttl": gossip.ttl,
                           "weight_form": gossip.weight_form}}
    return ExperimentResult("consensus", metrics_frame("consensus", rows, cfg), metadata)


# --- authentication --------------------------------------------------------

def clustered_cas(clustering: Clustering, sample: Sequence[NodeRecord], label: int, cap: int) -> list[int]:
    """CA nodes of cluster `label`, most capable first, at most `cap` of them."""
    by_id = {n.id: n for n in sample}
    members = clustering.assignment.members(label)
    cas = [i for i in members if clustering.roles.get(i) is Role.CA] or members
    ranked = sorted(cas, key=lambda i: (-by_id[i].capability, i))
    return sorted(ranked[:max(1, cap)])


def run_auth(cfg: ExperimentConfig, group: GroupBackend, costs: CryptoCosts, cas: Sequence[NodeRecord],
             users: Sequence[tuple[float, float]], cred_rng: random.Random, sim_seed: int) -> list[float]:
    """
    Authenticates every user concurrently from time 0.

    Returns:
        list[float]: Request-to-token time of each user, in user order.
    """
    sim = _simulator(cfg, cas, sim_seed)
    service = AuthService(sim, group, [n.id for n in cas], costs, cfg["auth.threshold_fraction"],
                          cfg["auth.share_window"])
    requests = []
    for k, (lat, lon) in enumerate(users):
        service.add_user(USER_ID + k, lat, lon, cfg["sim.user_capability"])
        cred = generate_credential(group, cred_rng)
        requests.append(service.authenticate(USER_ID + k, cred, cred_rng))
    sim.run_until_quiescent(cfg["sim.max_time"])
    check_auth(service, requests)
    return [service.outcomes[r].elapsed for r in requests]


@dataclass
class _AuthScenario:
    position: tuple[float, float]
    cred_seed: int
    sim_seed: int


def _auth_scenario(cfg: ExperimentConfig, sample: Sequence[NodeRecord], trial: int) -> _AuthScenario:
    n = len(sample)
    position = user_position(sample, random.Random(derive_seed(cfg.seed, "user", n, trial)))
    return _AuthScenario(position, derive_seed(cfg.seed, "cred", n, trial), derive_seed(cfg.seed, "auth-sim", n, trial))


def exp_auth(cfg: ExperimentConfig, nodes: Sequence[NodeRecord]) -> ExperimentResult:
    group, costs = crypto_setup(cfg)
    rows, per_n = [], {}
    for n in cfg["auth.node_counts"]:
        sample = sample_nodes(nodes, n, derive_seed(cfg.seed, "sample", n))
        clustering = cluster_nodes(sample, cfg)
        by_id = {node.id: node for node in sample}
        times = {"unclustered": [], "clustered": []}
        ca_counts = []
        for trial in range(cfg["auth.trials"]):
            sc = _auth_scenario(cfg, sample, trial)
            times["unclustered"] += run_auth(cfg, group, costs, sample, [sc.position],
                                             random.Random(sc.cred_seed), sc.sim_seed)
            label = clustering.nearest_label(sample, sc.position)
            cas = [by_id[i] for i in clustered_cas(clustering, sample, label, cfg["auth.ca_cap"])]
            ca_counts.append(len(cas))
            times["clustered"] += run_auth(cfg, group, costs, cas, [sc.position],
                                           random.Random(sc.cred_seed), sc.sim_seed)
        for mode, values in times.items():
            rows.append((n, mode, float(np.mean(values))))
        per_n[str(n)] = {**clustering.summary(), "clustered_ca_counts": ca_counts}
        log.info(f"✅ auth n={n}: unclustered {rows[-2][2]:.4f}s, clustered {rows[-1][2]:.4f}s")
    metadata = {"per_n": per_n, "costs": costs.as_dict(), "ca_cap": cfg["auth.ca_cap"],
                "threshold_fraction": cfg["auth.threshold_fraction"]}
    return ExperimentResult("auth", metrics_frame("auth", rows, cfg), metadata)


def exp_auth_multiuser(cfg: ExperimentConfig, nodes: Sequence[NodeRecord]) -> ExperimentResult:
    group, costs = crypto_setup(cfg)
    n = cfg["multiuser.node_count"]
    rows = []
    counts = [u for u in cfg["multiuser.user_counts"] if u > 0]
    summary = {}
    if counts:
        sample = sample_nodes(nodes, n, derive_seed(cfg.seed, "sample", n))
        sc = _auth_scenario(cfg, sample, 0)
        clustering = cluster_nodes(sample, cfg)
        by_id = {node.id: node for node in sample}
        label = clustering.nearest_label(sample, sc.position)
        cas = [by_id[i] for i in clustered_cas(clustering, sample, label, cfg["auth.ca_cap"])]
        members = [by_id[i] for i in clustering.assignment.members(label)]
        summary = {**clustering.summary(), "ca_count": len(cas), "node_count": n}
        for users in counts:
            placement = random.Random(derive_seed(cfg.seed, "multiuser", n, users))
            positions = [sc.position] + [user_position(members, placement) for _ in range(users - 1)]
            times = run_auth(cfg, group, costs, cas, positions, random.Random(sc.cred_seed), sc.sim_seed)
            rows.append((users, float(np.mean(times)), float(np.percentile(times, 95))))
            log.info(f"✅ auth-multiuser users={users}: mean {rows[-1][1]:.4f}s, p95 {rows[-1][2]:.4f}s")
    metadata = {"clustering": summary, "costs": costs.as_dict()}
    return ExperimentResult("auth-multiuser", metrics_frame("auth-multiuser", rows, cfg), metadata)


# --- access control --------------------------------------------------------

def pick_verifiers(clustering: Clustering, sample: Sequence[NodeRecord], position: tuple[float, float],
                   s: int) -> list[NodeRecord]:
    """
    s verifiers from the user's cluster, CA nodes first by capability; short
    clusters are topped up with the nodes nearest to the user.
    """
    if not 1 <= s <= len(sample):
        raise ValueError(f"Cannot pick {s} verifiers from {len(sample)} nodes")
    label = clustering.nearest_label(sample, position)
    members = [n for n in sample if clustering.assignment.labels[n.id] == label]
    members.sort(key=lambda n: (clustering.roles.get(n.id) is not Role.CA, -n.capability, n.id))
    picked = members[:s]
    if len(picked) < s:
        chosen = {n.id for n in picked}
        others = [n for n in sample if n.id not in chosen]
        dist = haversine_many_m(position[0], position[1], np.array([n.lat for n in others]),
                                np.array([n.lon for n in others]))
        picked += [others[i] for i in np.argsort(dist, kind="stable")[:s - len(picked)]]
    return sorted(picked, key=lambda n: n.id)


def run_access(cfg: ExperimentConfig, group: GroupBackend, costs: CryptoCosts, verifiers: Sequence[NodeRecord],
               position: tuple[float, float], n_items: int, item_size: int, seed: int) -> float:
    """Key ceremony over `n_items` categories, then one authorized access round."""
    rng = random.Random(seed)
    ceremony = KeyCeremony(group, n_items, rng)
    key = ceremony.access_key(rng.randrange(1, n_items + 1))
    sim = _simulator(cfg, verifiers, derive_seed(seed, "sim"))
    scheme = cfg["access.scheme"]
    threshold = cfg["access.threshold"] if scheme == "shamir" else None
    service = AccessService(sim, group, ceremony.acl, [v.id for v in verifiers], costs, scheme, threshold,
                            cfg["access.window"])
    service.add_user(USER_ID, *position, capability=cfg["sim.user_capability"])
    request = service.request(USER_ID, key, rng, item_size)
    sim.run_until_quiescent(cfg["sim.max_time"])
    outcome = service.outcomes[request]
    check_access([outcome])
    return outcome.elapsed


def exp_access(cfg: ExperimentConfig, nodes: Sequence[NodeRecord]) -> ExperimentResult:
    group, costs = crypto_setup(cfg)
    n = cfg["access.node_count"]
    sample = sample_nodes(nodes, n, derive_seed(cfg.seed, "sample", n))
    clustering = cluster_nodes(sample, cfg)
    position = user_position(sample, random.Random(derive_seed(cfg.seed, "user", n, 0)))
    verifiers = pick_verifiers(clustering, sample, position, cfg["access.verifiers"])
    rows = []
    for n_items in cfg["access.item_counts"]:
        # one seed per N: item sizes share every draw, so they differ by transport only
        seed = derive_seed(cfg.seed, "access", n_items)
        for item_size in cfg["access.item_sizes"]:
            rows.append((n_items, item_size, run_access(cfg, group, costs, verifiers, position, n_items,
                                                        item_size, seed)))
        log.info(f"✅ access N={n_items}: " + ", ".join(f"{r[1]}B {r[2]:.4f}s" for r in rows[-len(cfg['access.item_sizes']):]))
    metadata = {"clustering": clustering.summary(), "verifiers": [v.id for v in verifiers],
                "scheme": cfg["access.scheme"], "costs": costs.as_dict(),
                "transport_delta_per_byte": 1.0 / cfg["sim.bandwidth"]}
    return ExperimentResult("access", metrics_frame("access", rows, cfg), metadata)


EXPERIMENT_RUNNERS: dict[str, Callable[[ExperimentConfig, Sequence[NodeRecord]], ExperimentResult]] = {
    "consensus": exp_consensus,
    "auth": exp_auth,
    "auth-multiuser": exp_auth_multiuser,
    "access": exp_access,
}


def run_experiment(cfg: ExperimentConfig, nodes: Sequence[NodeRecord] | None = None) -> ExperimentResult:
    """
    Runs the experiment named by `cfg`.

    Raises:
        ValueError: If the experiment id is not recognized.
        ProtocolInvariantError: If a protocol assertion failed during the run.
    """
    try:
        runner = EXPERIMENT_RUNNERS[cfg.experiment]
    except KeyError:
        raise ValueError(f"Experiment not recognized: {cfg.experiment}") from None
    if nodes is None:
        nodes = load_nodes(cfg)
    log.info(f"Running {cfg.experiment} (config {cfg.config_hash()}, seed {cfg.seed}) on {len(nodes)} nodes")
    return runner(cfg, nodes)
