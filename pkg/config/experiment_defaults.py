"""
Documented schema of experiment configuration files.

A configuration file is key=value text read with python-dotenv, for example:

    sim.seed=7
    consensus.node_counts=25,50,75
    dbscan.eps1=20000

Keys missing from the file take the defaults below; keys not listed here are
rejected. Empty values mean "derive it" where the description says so.
"""
from dataclasses import dataclass

EXPERIMENTS = ("consensus", "auth", "auth-multiuser", "access")

# lat_min, lat_max, lon_min, lon_max
BEIJING_BBOX = "39.433333,41.05,115.416666,117.5"


@dataclass(frozen=True)
class ConfigKey:
    default: str
    kind: str        # int | float | str | ints | floats | int? | float?
    help: str


EXPERIMENT_KEYS: dict[str, ConfigKey] = {
    # simulator and latency model
    "sim.seed": ConfigKey("20240601", "int", "Master seed; every derived RNG is keyed on it"),
    "sim.base_latency": ConfigKey("0.002", "float", "Fixed per-hop latency, seconds"),
    "sim.prop_coeff": ConfigKey("0.000005", "float", "Propagation delay, seconds per km"),
    "sim.jitter": ConfigKey("0.0005", "float", "Upper bound of the uniform per-message jitter, seconds"),
    "sim.bandwidth": ConfigKey("12500000", "float", "Outgoing link bandwidth, bytes per second"),
    "sim.service_base": ConfigKey("0.0002", "float", "Receive processing per message at capability 1, seconds"),
    "sim.user_capability": ConfigKey("1.0", "float", "Capability of simulated user devices"),
    "sim.max_time": ConfigKey("600", "float", "Simulated-time cap of a single run, seconds"),
    # crypto
    "crypto.backend": ConfigKey("prod", "str", "Group backend: prod (P-256) or test467"),
    "crypto.hash": ConfigKey("sha256", "str", "hashlib name of the 256-bit hash H"),
    "crypto.costs": ConfigKey("fixed", "str", "Service-time table: fixed or measured"),
    # dataset
    "data.path": ConfigKey("", "str", "Gowalla check-in TSV; empty uses the synthetic generator"),
    "data.bbox": ConfigKey(BEIJING_BBOX, "floats", "lat_min,lat_max,lon_min,lon_max"),
    "data.synthetic_locations": ConfigKey("6000", "int", "Distinct locations emitted by the synthetic generator"),
    "data.capability_low": ConfigKey("1", "float", "Lower bound of the uniform capability draw"),
    "data.capability_high": ConfigKey("10", "float", "Upper bound of the uniform capability draw"),
    # clustering
    "dbscan.eps1": ConfigKey("", "float?", "Spatial radius in metres; empty calibrates per node count"),
    "dbscan.eps2": ConfigKey("", "float?", "Capability radius; empty calibrates per node count"),
    "dbscan.minpts": ConfigKey("", "int?", "Density threshold; empty calibrates per node count"),
    "dbscan.metric": ConfigKey("haversine", "str", "haversine or planar"),
    "dbscan.band": ConfigKey("0.40,0.72", "floats", "Target share of nodes in the largest cluster"),
    "dbscan.ca_fraction": ConfigKey("0.25", "float", "Share of each cluster assigned the CA role"),
    # consensus
    "consensus.node_counts": ConfigKey("25,50,75,100,125", "ints", "Node counts of the consensus experiment"),
    "consensus.trials": ConfigKey("3", "int", "Proposals per node count, averaged"),
    "consensus.leader_k": ConfigKey("3", "int", "Users pick their leader among the k nearest nodes"),
    "consensus.payload_size": ConfigKey("256", "int", "Behavior-block payload, bytes"),
    "consensus.view_timeout": ConfigKey("0.25", "float", "Initial view-change timeout, seconds"),
    "consensus.client_timeout": ConfigKey("0.5", "float", "Client retransmission timeout, seconds"),
    # gossip
    "gossip.eps3": ConfigKey("", "float?", "Relay radius in metres; empty uses 2 x eps1"),
    "gossip.fanout": ConfigKey("3", "int", "Relays picked per round"),
    "gossip.ttl": ConfigKey("10", "int", "Maximum hop count and rounds per leader"),
    "gossip.weight_form": ConfigKey("mean", "str", "mean, product or harmonic"),
    "gossip.probe_timeout": ConfigKey("0.05", "float", "Wait for probe acknowledgements, seconds"),
    "gossip.round_interval": ConfigKey("0.0", "float", "Pause between a leader's rounds, seconds"),
    # authentication
    "auth.node_counts": ConfigKey("100,500,1000,2000", "ints", "Node counts of the authentication experiment"),
    "auth.trials": ConfigKey("1", "int", "Users authenticated per node count, averaged"),
    "auth.threshold_fraction": ConfigKey("0.25", "float", "Reconstruction threshold t = ceil(q * fraction)"),
    "auth.ca_cap": ConfigKey("32", "int", "Upper bound of CA nodes per cluster in clustered mode"),
    "auth.share_window": ConfigKey("1.0", "float", "CA collection window for missing slices, seconds"),
    "multiuser.node_count": ConfigKey("500", "int", "Node count of the multi-user experiment"),
    "multiuser.user_counts": ConfigKey("1,5,10,20,50", "ints", "Concurrent users per run"),
    # access control
    "access.item_counts": ConfigKey("8,16,32,64,128,256,512,1024", "ints", "Behavior database sizes N"),
    "access.item_sizes": ConfigKey("512,1024", "ints", "Item payload sizes, bytes"),
    "access.node_count": ConfigKey("100", "int", "Nodes sampled to pick the verifier cluster"),
    "access.verifiers": ConfigKey("3", "int", "Verifier nodes s"),
    "access.scheme": ConfigKey("additive", "str", "additive (s-of-s) or shamir (t-of-s)"),
    "access.threshold": ConfigKey("2", "int", "t for the shamir scheme"),
    "access.window": ConfigKey("1.0", "float", "Coordinator wait for missing verifier results, seconds"),
    # output
    "output.dir": ConfigKey("results", "str", "Directory receiving CSV and metadata files"),
}
