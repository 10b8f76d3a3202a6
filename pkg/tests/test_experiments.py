import json

import pandas as pd
import pytest

from src.core.clustering import calibrate, default_grid
from src.core.consensus import message_count
from src.harness.config import load_config
from src.harness.experiments import (derive_seed, exp_access, exp_auth, exp_auth_multiuser, exp_consensus,
                                     run_experiment, sample_nodes)
from src.harness.ingest import synthetic_nodes
from src.harness.metrics import METRIC_COLUMNS, write_result

NODES = synthetic_nodes(150, seed=11)

# one cluster over the whole box
SINGLE_CLUSTER = {"dbscan.eps1": 400000, "dbscan.eps2": 10, "dbscan.minpts": 1}


def _config(experiment, **overrides):
    base = {"crypto.backend": "test467", "sim.seed": 3, **SINGLE_CLUSTER}
    return load_config(experiment, **{**base, **overrides})


def test_derive_seed_is_keyed_on_every_part():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert derive_seed(1, "a", 2) != derive_seed(2, "a", 2)


def test_sample_nodes():
    picked = sample_nodes(NODES, 10, seed=4)
    assert len({n.id for n in picked}) == 10
    assert [n.id for n in picked] == sorted(n.id for n in picked)
    assert picked == sample_nodes(NODES, 10, seed=4)
    with pytest.raises(ValueError, match="Requested 151 nodes"):
        sample_nodes(NODES, 151, seed=4)


def test_consensus_single_cluster_equals_flat():
    cfg = _config("consensus", **{"consensus.node_counts": "4", "consensus.trials": 1})
    result = exp_consensus(cfg, NODES)
    df = result.frame.set_index("mode")
    assert list(result.frame.columns[:4]) == METRIC_COLUMNS["consensus"]
    assert df.loc["clustered", "time"] == pytest.approx(df.loc["flat", "time"])
    assert df.loc["flat", "msg_count"] == message_count(4)
    assert df.loc["clustered", "msg_count"] == message_count(4)
    assert df.loc["flat", "time"] > 0
    assert df.loc["clustered-global", "msg_count"] >= message_count(4)
    meta = result.metadata["per_n"]["4"]
    assert meta["single_cluster"] is True
    assert meta["gossip_complete"] is True


def test_auth_is_deterministic():
    cfg = _config("auth", **{"auth.node_counts": "12,20"})
    first = exp_auth(cfg, NODES)
    pd.testing.assert_frame_equal(first.frame, exp_auth(cfg, NODES).frame)
    assert list(first.frame.columns) == METRIC_COLUMNS["auth"] + ["config_hash", "seed"]
    assert set(first.frame["config_hash"]) == {cfg.config_hash()}
    assert set(first.frame["seed"]) == {3}
    assert (first.frame["time"] > 0).all()


def test_multiuser_single_user_matches_auth_point():
    overrides = {"auth.node_counts": "20", "multiuser.node_count": 20, "multiuser.user_counts": "0,1,4"}
    auth = exp_auth(_config("auth", **overrides), NODES).frame.set_index("mode")
    multi = exp_auth_multiuser(_config("auth-multiuser", **overrides), NODES).frame
    assert list(multi["users"]) == [1, 4]
    one = multi.iloc[0]
    assert one["mean_time"] == pytest.approx(auth.loc["clustered", "time"])
    assert one["p95_time"] == pytest.approx(one["mean_time"])
    assert multi.iloc[1]["p95_time"] >= multi.iloc[1]["mean_time"]


def test_multiuser_without_users_is_empty():
    result = exp_auth_multiuser(_config("auth-multiuser", **{"multiuser.user_counts": "0"}), NODES)
    assert result.frame.empty
    assert list(result.frame.columns[:3]) == METRIC_COLUMNS["auth-multiuser"]
    assert result.metadata["clustering"] == {}


def test_access_overhead():
    cfg = _config("access", **{"access.node_count": 20, "access.item_counts": "8,128,1024",
                               "access.item_sizes": "512,1024", "sim.bandwidth": 1000000})
    df = exp_access(cfg, NODES).frame
    small = df[df["item_size"] == 512].set_index("N")["overhead"]
    large = df[df["item_size"] == 1024].set_index("N")["overhead"]
    assert small.is_monotonic_increasing
    for n in (8, 128, 1024):
        assert large[n] - small[n] == pytest.approx(512 / 1_000_000, rel=1e-6)


def test_access_with_shamir_verifiers():
    cfg = _config("access", **{"access.node_count": 20, "access.item_counts": "16", "access.item_sizes": "64",
                               "access.scheme": "shamir", "access.verifiers": 3, "access.threshold": 2})
    result = exp_access(cfg, NODES)
    assert len(result.frame) == 1
    assert len(result.metadata["verifiers"]) == 3
    assert result.metadata["scheme"] == "shamir"


def test_run_experiment_unknown_id():
    cfg = _config("auth")
    object.__setattr__(cfg, "experiment", "latency")
    with pytest.raises(ValueError, match="Experiment not recognized"):
        run_experiment(cfg, NODES)


def test_write_result(tmp_path):
    cfg = _config("auth", **{"auth.node_counts": "12"})
    result = run_experiment(cfg, NODES)
    csv_path = write_result(result, cfg, tmp_path / "out")
    assert csv_path == tmp_path / "out" / "auth.csv"
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ["n", "mode", "time", "config_hash", "seed"]
    assert list(frame["mode"]) == ["unclustered", "clustered"]
    meta = json.loads((tmp_path / "out" / "auth.metadata.json").read_text(encoding="utf-8"))
    assert meta["experiment"] == "auth"
    assert meta["config_hash"] == cfg.config_hash()
    assert meta["seed"] == 3
    assert meta["config"]["crypto.backend"] == "test467"
    assert "12" in meta["per_n"]


def _calibrated(experiment, **overrides):
    return load_config(experiment, **{"crypto.backend": "test467", "sim.seed": 3, **overrides})


def test_consensus_is_deterministic():
    cfg = _calibrated("consensus", **{"consensus.node_counts": "16", "consensus.trials": 1})
    first = exp_consensus(cfg, NODES)
    pd.testing.assert_frame_equal(first.frame, exp_consensus(cfg, NODES).frame)
    assert first.metadata["per_n"] == exp_consensus(cfg, NODES).metadata["per_n"]


def test_access_is_deterministic():
    cfg = _config("access", **{"access.node_count": 20, "access.item_counts": "8,64", "access.item_sizes": "256"})
    first = exp_access(cfg, NODES)
    pd.testing.assert_frame_equal(first.frame, exp_access(cfg, NODES).frame)
    assert first.metadata["verifiers"] == exp_access(cfg, NODES).metadata["verifiers"]


@pytest.fixture(scope="module")
def city():
    return synthetic_nodes(6000, seed=20240601)


@pytest.mark.slow
@pytest.mark.parametrize("n", [25, 50, 75, 100, 125])
def test_calibration_lands_in_band(city, n):
    sample = sample_nodes(city, n, derive_seed(20240601, "sample", n))
    result = calibrate(sample, default_grid(), (0.40, 0.72))
    assert result.in_band
    assert 0.40 <= result.largest_fraction <= 0.72


@pytest.mark.slow
def test_clustered_consensus_beats_flat(city):
    cfg = _calibrated("consensus", **{"consensus.node_counts": "125"})
    result = exp_consensus(cfg, city)
    df = result.frame.set_index("mode")
    meta = result.metadata["per_n"]["125"]
    assert meta["in_band"] is True
    assert meta["gossip_complete"] is True
    assert df.loc["clustered", "time"] < df.loc["flat", "time"]
    assert df.loc["clustered", "msg_count"] < df.loc["flat", "msg_count"]
    assert meta["clustered_over_flat"] == pytest.approx(df.loc["clustered", "time"] / df.loc["flat", "time"])


@pytest.mark.slow
def test_auth_scaling_shape(city):
    cfg = _calibrated("auth")
    df = exp_auth(cfg, city).frame
    flat = df[df["mode"] == "unclustered"].set_index("n")["time"]
    clustered = df[df["mode"] == "clustered"].set_index("n")["time"]
    assert list(flat.index) == [100, 500, 1000, 2000]
    assert flat.is_monotonic_increasing and flat.is_unique
    assert flat[2000] >= 5 * flat[100]
    assert clustered.max() < 2 * clustered.min()
    assert clustered.mean() <= 0.5 * flat.mean()
