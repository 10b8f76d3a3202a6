import random

import pytest

from src.core.access_service import AccessService
from src.core.fss_access import AccessDecision, KeyCeremony
from src.core.netsim import FaultModel, LatencyModel, Simulator
from src.harness.checks import check_access
from src.core.errors import ProtocolInvariantError
from src.models.group import Test467Backend

VERIFIERS = [20, 21, 22]
USER = 500
LATENCY = LatencyModel(bandwidth=1_000_000.0)


def _service(faults=None, scheme="additive", threshold=None, categories=8, seed=3):
    group = Test467Backend()
    sim = Simulator(LATENCY, faults, seed=seed)
    for i, v in enumerate(VERIFIERS):
        sim.register(v, 39.90 + 0.01 * i, 116.40, capability=4.0)
    ceremony = KeyCeremony(group, categories, random.Random(seed))
    service = AccessService(sim, group, ceremony.acl, VERIFIERS, scheme=scheme, threshold=threshold, window=0.5)
    service.add_user(USER, 39.899, 116.40)
    return sim, service, ceremony


def test_authorized_request_receives_item():
    sim, service, ceremony = _service()
    rid = service.request(USER, ceremony.access_key(5), random.Random(1))
    sim.run_until_quiescent()
    outcome = service.outcomes[rid]
    assert outcome.decision is AccessDecision.ACCEPT
    assert outcome.end_time > outcome.result_time > outcome.start_time
    check_access([outcome])


def test_wrong_category_rejected_without_item():
    sim, service, ceremony = _service()
    rid = service.request(USER, ceremony.access_key(5), random.Random(2), target=3)
    sim.run_until_quiescent()
    outcome = service.outcomes[rid]
    assert outcome.decision is AccessDecision.REJECT
    assert outcome.end_time == outcome.result_time
    with pytest.raises(ProtocolInvariantError, match="ended as"):
        check_access([outcome])


def test_item_size_changes_overhead_by_transmission_time():
    elapsed = {}
    for size in (512, 1024):
        sim, service, ceremony = _service()
        rid = service.request(USER, ceremony.access_key(2), random.Random(7), item_size=size)
        sim.run_until_quiescent()
        elapsed[size] = service.outcomes[rid].elapsed
    assert elapsed[1024] - elapsed[512] == pytest.approx(512 / LATENCY.bandwidth, rel=1e-6)


def test_coordinator_is_nearest_verifier():
    _, service, _ = _service()
    assert service.coordinator_for(USER) == 20


def test_shamir_tolerates_crashed_verifier():
    faults = FaultModel().crash(22)
    sim, service, ceremony = _service(faults, scheme="shamir", threshold=2)
    rid = service.request(USER, ceremony.access_key(4), random.Random(3))
    sim.run_until_quiescent()
    assert service.outcomes[rid].decision is AccessDecision.ACCEPT


def test_additive_with_crashed_verifier_is_indeterminate():
    faults = FaultModel().crash(22)
    sim, service, ceremony = _service(faults)
    rid = service.request(USER, ceremony.access_key(4), random.Random(4))
    sim.run_until_quiescent()
    assert service.outcomes[rid].decision is AccessDecision.INDETERMINATE


def test_requires_verifiers():
    group = Test467Backend()
    acl = KeyCeremony(group, 2, random.Random(0)).acl
    with pytest.raises(ValueError, match="At least one verifier"):
        AccessService(Simulator(), group, acl, [])
