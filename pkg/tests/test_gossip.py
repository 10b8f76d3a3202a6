import math
import random

import numpy as np
import pytest

from src.core.gossip import (GossipMessage, GossipParams, GossipService, LeaderDirectory, LeaderInfo,
                             disseminate, relay_weights, select_relays)
from src.core.netsim import FaultModel, Simulator
from src.core.wire import decode
from src.harness.checks import check_gossip

DIGEST = bytes(range(32))


def _leaders(count, seed=0, spread=0.2):
    rng = np.random.default_rng(seed)
    return LeaderDirectory(LeaderInfo(100 + i, i, float(39.9 + rng.uniform(-spread, spread)),
                                      float(116.4 + rng.uniform(-spread, spread)), 5.0)
                           for i in range(count))


def test_weights_worked_example():
    weights = relay_weights([1, 2], [100.0, 300.0], [2.0, 6.0])
    assert weights.weights == pytest.approx((0.75, 0.25))


def test_weights_trivial_cases():
    assert relay_weights([7], [50.0], [0.01]).weights == (1.0,)
    assert relay_weights([1, 2], [10.0, 10.0], [0.1, 0.1]).weights == pytest.approx((0.5, 0.5))
    assert relay_weights([], [], []).weights == ()


@pytest.mark.parametrize("form", ["mean", "product", "harmonic"])
def test_weights_monotone_and_normalised(form):
    rng = random.Random(1)
    distances = [rng.uniform(100, 5_000) for _ in range(8)]
    pings = [rng.uniform(0.001, 0.02) for _ in range(8)]
    weights = relay_weights(list(range(8)), distances, pings, form)
    assert math.fsum(weights.weights) == pytest.approx(1.0, abs=1e-12)
    for i in range(8):
        for j in range(8):
            if distances[i] <= distances[j] and pings[i] <= pings[j]:
                assert weights.weights[i] >= weights.weights[j]


def test_weights_invalid_input():
    with pytest.raises(ValueError, match="Weight form not recognized"):
        relay_weights([1], [1.0], [1.0], form="max")
    with pytest.raises(ValueError, match="same length"):
        relay_weights([1, 2], [1.0], [1.0, 2.0])


def test_select_relays_frequencies():
    weights = relay_weights([1, 2], [100.0, 300.0], [2.0, 6.0])
    rng = np.random.default_rng(42)
    firsts = sum(select_relays(weights, 1, rng) == [1] for _ in range(10_000))
    assert firsts / 10_000 == pytest.approx(0.75, abs=0.02)


def test_select_relays_is_seeded():
    weights = relay_weights(list(range(10)), [float(100 + i) for i in range(10)], [0.01] * 10)
    first = select_relays(weights, 3, np.random.default_rng(5))
    assert first == select_relays(weights, 3, np.random.default_rng(5))
    assert len(set(first)) == 3


def test_select_relays_all_when_fanout_large():
    weights = relay_weights([1, 2, 3], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    assert select_relays(weights, 5, np.random.default_rng(0)) == [1, 2, 3]
    picked = select_relays(weights, 2, np.random.default_rng(0))
    assert len(set(picked)) == 2
    with pytest.raises(ValueError, match="at least 1"):
        select_relays(weights, 0, np.random.default_rng(0))


def test_single_cluster_complete_at_hop_zero():
    report = disseminate(DIGEST, 100, _leaders(1))
    assert report.complete and report.max_hops == 0


@pytest.mark.parametrize("seed", range(100))
def test_all_leaders_informed(seed):
    directory = _leaders(23, seed=seed)
    report = disseminate(DIGEST, directory.ids[0], directory, GossipParams(eps3=100_000.0), seed=seed)
    assert report.complete
    assert report.max_hops <= math.ceil(math.log(23, 3)) + 2
    assert check_gossip(report)
    frame = report.to_frame()
    assert list(frame.columns) == ["leader_id", "cluster_id", "receipt_time", "hops"]
    assert len(frame) == 23


@pytest.mark.parametrize("seed", range(100))
def test_surviving_leaders_informed_under_crashes(seed):
    directory = _leaders(23, seed=seed)
    rng = random.Random(seed)
    others = directory.ids[1:]
    crashed = [l for l in others if rng.random() < 0.10]
    faults = FaultModel()
    for leader in crashed:
        faults.crash(leader)
    report = disseminate(DIGEST, directory.ids[0], directory, GossipParams(eps3=100_000.0, fanout=3, ttl=10),
                         faults=faults, seed=seed)
    assert set(report.uninformed) == set(crashed)
    assert report.coverage([l for l in directory.ids if l not in crashed]) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_crashed_leaders_skipped(seed):
    directory = _leaders(23, seed=seed)
    crashed = directory.ids[5:7]
    faults = FaultModel()
    for leader in crashed:
        faults.crash(leader)
    report = disseminate(DIGEST, directory.ids[0], directory, GossipParams(eps3=100_000.0), faults=faults, seed=seed)
    assert set(report.uninformed) == set(crashed)
    assert not check_gossip(report)
    assert report.coverage([l for l in directory.ids if l not in crashed]) == 1.0


def test_lost_relay_message_is_retried():
    directory = _leaders(2)
    lost = []

    def drop_first_gossip(src, dst, message):
        if isinstance(message, GossipMessage) and not lost:
            lost.append(dst)
            return None
        return message

    faults = FaultModel().byzantine(100, drop_first_gossip)
    report = disseminate(DIGEST, 100, directory, GossipParams(eps3=100_000.0), faults=faults)
    assert lost == [101]
    assert report.complete
    assert report.receipts[101][1] == 1


def test_small_radius_falls_back_to_nearest():
    # a chain of leaders 5 km apart with eps3 of 1 km
    directory = LeaderDirectory(LeaderInfo(i, i, 39.9 + 0.045 * i, 116.4) for i in range(6))
    report = disseminate(DIGEST, 0, directory, GossipParams(eps3=1_000.0, fanout=1))
    assert report.complete


def test_ttl_zero_informs_nobody_else():
    report = disseminate(DIGEST, 100, _leaders(5), GossipParams(ttl=0))
    assert report.uninformed == [101, 102, 103, 104]
    assert not report.complete


def test_redelivery_is_ignored():
    directory = _leaders(4)
    sim = Simulator(seed=1)
    for leader in directory:
        sim.register(leader.node_id, leader.lat, leader.lon, leader.capability)
    delivered = []
    service = GossipService(sim, directory, GossipParams(eps3=100_000.0),
                            on_deliver=lambda leader, digest, payload: delivered.append(leader))
    service.disseminate(DIGEST, 100, payload=b"block")
    sim.run_until_quiescent()
    assert sorted(delivered) == [101, 102, 103]
    before = service.report(DIGEST).receipts
    sim.send(100, 101, GossipMessage(DIGEST, 100, 1, (100,), b"block"), 64)
    sim.run_until_quiescent()
    assert service.report(DIGEST).receipts == before
    assert sorted(delivered) == [101, 102, 103]


def test_directory_rejects_two_leaders_per_cluster():
    with pytest.raises(ValueError, match="more than one leader"):
        LeaderDirectory([LeaderInfo(1, 0, 39.9, 116.4), LeaderInfo(2, 0, 39.9, 116.5)])


def test_params_validation_and_wire():
    with pytest.raises(ValueError, match="eps3 must be positive"):
        GossipParams(eps3=0.0)
    message = GossipMessage(DIGEST, 3, 2, (3, 9), b"payload")
    assert decode(message.encode()) == message
