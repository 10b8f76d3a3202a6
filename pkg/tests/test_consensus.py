import random
from collections import Counter
from itertools import combinations

import pytest
from scipy.stats import chisquare

from src.core.consensus import (BlockProposal, ClusterRoster, KeyRing, PbftMessage, Phase, SyncStatus,
                                bad_signature, conflicting_commits, consistency_check, equivocate, message_count,
                                pbft_round, quorum, select_leader, silent, wrong_digest)
from src.core.netsim import FaultModel
from src.core.wire import decode
from src.harness.checks import check_round
from src.models.node import NodeRecord

CLIENT = 1000


def _roster(n, keyring, cluster_id=0):
    nodes = [NodeRecord(i, 39.90 + 0.001 * i, 116.40 + 0.001 * i, 5.0) for i in range(1, n + 1)]
    return ClusterRoster.build(cluster_id, nodes, keyring)


def _proposal(keyring, payload=b"heart-rate:72"):
    return BlockProposal.create(payload, CLIENT, keyring, timestamp=0.0)


@pytest.mark.parametrize("n,expected", [(1, 1), (4, 31), (7, 6 + 84 + 7)])
def test_message_count(n, expected):
    assert message_count(n) == expected


def test_message_count_ratio_for_smaller_cluster():
    assert message_count(40) / message_count(100) == pytest.approx(0.16, abs=0.002)


def test_message_count_rejects_empty_cluster():
    with pytest.raises(ValueError, match="must be positive"):
        message_count(0)


def test_quorum():
    assert [quorum(n) for n in (1, 4, 5, 6, 7, 10)] == [1, 3, 4, 4, 5, 7]


@pytest.mark.parametrize("n", range(1, 31))
def test_quorums_intersect_in_an_honest_replica(n):
    f = (n - 1) // 3
    assert 2 * quorum(n) - n >= f + 1
    assert quorum(n) <= n - f


@pytest.mark.parametrize("n", [1, 4, 7])
def test_fault_free_round_matches_formula(n):
    keyring = KeyRing(1)
    roster = _roster(n, keyring)
    outcome, cluster = pbft_round(_proposal(keyring), roster, keyring=keyring)
    assert outcome.committed
    assert outcome.messages == message_count(n)
    assert outcome.reply_time is not None
    assert outcome.view_changes == 0
    check_round(outcome, cluster)
    assert {tuple(e.digest for e in r.chain) for r in cluster.replicas.values()} == {(outcome.digest,)}


@pytest.mark.parametrize("faulty", [1, 2, 3, 4])
def test_one_silent_replica_still_commits(faulty):
    keyring = KeyRing(2)
    roster = _roster(4, keyring)
    faults = FaultModel().byzantine(faulty, silent())
    outcome, cluster = pbft_round(_proposal(keyring), roster, faults, keyring=keyring)
    assert outcome.committed
    assert faulty not in outcome.commit_times
    check_round(outcome, cluster)
    if faulty == roster.order[0]:
        assert outcome.view_changes >= 1


@pytest.mark.parametrize("strategy", ["bad_signature", "wrong_digest"])
def test_misbehaving_backup_tolerated(strategy):
    keyring = KeyRing(3)
    roster = _roster(4, keyring)
    behaviour = bad_signature() if strategy == "bad_signature" else wrong_digest(keyring)
    outcome, cluster = pbft_round(_proposal(keyring), roster, FaultModel().byzantine(3, behaviour), keyring=keyring)
    assert outcome.committed
    check_round(outcome, cluster)


@pytest.mark.parametrize("target", [2, 3, 4])
def test_equivocating_primary_causes_no_conflict(target):
    keyring = KeyRing(4)
    roster = _roster(4, keyring)
    real = _proposal(keyring)
    alternate = _proposal(keyring, payload=b"heart-rate:140")
    faults = FaultModel().byzantine(1, equivocate(alternate, [target], keyring))
    outcome, cluster = pbft_round(real, roster, faults, keyring=keyring, max_time=20.0)
    assert not outcome.conflicting
    assert outcome.committed
    assert outcome.view_changes >= 1
    assert all(alternate.digest not in {e.digest for e in cluster.replicas[i].chain} for i in cluster.honest())


EVERY_PHASE = (Phase.PRE_PREPARE, Phase.PREPARE, Phase.COMMIT)


@pytest.mark.parametrize("phases", [(Phase.PRE_PREPARE, Phase.PREPARE), EVERY_PHASE])
@pytest.mark.parametrize("targets", [(2,), (3,), (4,), (2, 3), (2, 4), (3, 4), (2, 3, 4)])
def test_equivocation_patterns_never_conflict(targets, phases):
    keyring = KeyRing(4)
    roster = _roster(4, keyring)
    real = _proposal(keyring)
    alternate = _proposal(keyring, payload=b"heart-rate:140")
    faults = FaultModel().byzantine(1, equivocate(alternate, targets, keyring, phases))
    outcome, cluster = pbft_round(real, roster, faults, keyring=keyring, max_time=20.0)
    assert not outcome.conflicting
    assert not conflicting_commits([cluster.replicas[i] for i in cluster.honest()])
    if len(targets) == 1:
        assert outcome.committed


@pytest.mark.parametrize("n,targets", [(5, (4, 5)), (5, (3, 4, 5)), (6, (4, 5, 6)), (6, (3, 4)), (6, (2, 4, 6))])
def test_split_equivocation_in_every_phase_is_safe(n, targets):
    keyring = KeyRing(n)
    roster = _roster(n, keyring)
    real = _proposal(keyring)
    alternate = _proposal(keyring, payload=b"heart-rate:140")
    faults = FaultModel().byzantine(1, equivocate(alternate, targets, keyring, EVERY_PHASE))
    outcome, cluster = pbft_round(real, roster, faults, keyring=keyring, max_time=20.0)
    assert not outcome.conflicting
    honest = [cluster.replicas[i] for i in cluster.honest()]
    assert not conflicting_commits(honest)


@pytest.mark.parametrize("kind", ["crash", "silent"])
@pytest.mark.parametrize("placement", [c for k in (1, 2) for c in combinations(range(7), k)])
def test_seven_replicas_survive_any_two_faults(placement, kind):
    keyring = KeyRing(7)
    roster = _roster(7, keyring)
    faults = FaultModel()
    for index in placement:
        node = roster.order[index]
        if kind == "crash":
            faults.crash(node)
        else:
            faults.byzantine(node, silent())
    outcome, cluster = pbft_round(_proposal(keyring), roster, faults, keyring=keyring, max_time=20.0)
    assert outcome.committed
    assert not outcome.conflicting
    assert outcome.view_changes <= 2
    check_round(outcome, cluster)


def test_crashed_majority_fails():
    keyring = KeyRing(5)
    roster = _roster(4, keyring)
    faults = FaultModel().crash(3).crash(4)
    outcome, _ = pbft_round(_proposal(keyring), roster, faults, keyring=keyring, max_time=5.0)
    assert not outcome.committed


def test_leader_alignment_moves_primary():
    keyring = KeyRing(6)
    roster = _roster(4, keyring)
    outcome, cluster = pbft_round(_proposal(keyring), roster, keyring=keyring, leader=3)
    assert outcome.committed
    assert outcome.view == 2
    assert all(r.primary_of(r.view) == 3 for r in cluster.replicas.values())
    with pytest.raises(ValueError, match="not a member"):
        cluster.align_view(99)


def test_select_leader_single_node():
    keyring = KeyRing(0)
    roster = _roster(1, keyring)
    assert select_leader((0.0, 0.0), roster, random.Random(1)) == 1


def test_select_leader_uniform_over_nearest():
    keyring = KeyRing(0)
    nodes = [NodeRecord(1, 39.9, 116.4, 1.0)] + [NodeRecord(i, 40.8, 117.4, 1.0) for i in range(2, 7)]
    roster = ClusterRoster.build(0, nodes, keyring)
    rng = random.Random(7)
    counts = Counter(select_leader((39.9, 116.4), roster, rng, k=3) for _ in range(10_000))
    assert set(counts) == {1, 2, 3}
    assert chisquare([counts[1], counts[2], counts[3]]).pvalue > 0.001


def test_consistency_check_majority_rules():
    keyring = KeyRing(0)
    roster = _roster(4, keyring)
    assert consistency_check(1, roster, {10: roster, 11: roster}).status is SyncStatus.IN_SYNC

    changed = [NodeRecord(i, 39.90 + 0.001 * i, 116.40 + 0.001 * i, 5.0) for i in range(1, 6)]
    agreed = ClusterRoster.build(0, changed, keyring)
    result = consistency_check(1, roster, {10: agreed, 11: agreed, 12: agreed})
    assert result.status is SyncStatus.UPDATED and result.roster == agreed

    split = consistency_check(1, roster, {10: agreed, 11: agreed, 12: roster, 13: roster}, backoff=2.0)
    assert split.status is SyncStatus.FAILED and split.retry_after == 2.0
    assert split.roster == roster


def test_block_signature_and_wire():
    keyring = KeyRing(9)
    proposal = _proposal(keyring)
    assert proposal.valid(keyring)
    assert not proposal.valid(KeyRing(10))
    message = PbftMessage(Phase.PRE_PREPARE, 0, 1, proposal.digest, 1, proposal=proposal).signed(keyring)
    decoded = decode(message.encode())
    assert decoded == message
    assert keyring.verify(1, decoded.signing_bytes(), decoded.signature)


def test_empty_roster_rejected():
    with pytest.raises(ValueError, match="has no members"):
        ClusterRoster.build(3, [], KeyRing(0))
