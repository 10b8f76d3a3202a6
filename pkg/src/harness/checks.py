"""
Protocol assertions run inside every experiment.

Each check raises ProtocolInvariantError when the simulated protocol broke a
guarantee it must keep, so a metrics file is never written from a run that
violated consensus safety, authentication completeness or access completeness.
"""
from __future__ import annotations

from typing import Iterable

from src.core.access_service import AccessOutcome
from src.core.auth_service import AuthService
from src.core.consensus import PbftCluster, RoundOutcome
from src.core.errors import ProtocolInvariantError
from src.core.fss_access import AccessDecision
from src.core.gossip import PropagationReport
from src.core.logger.logger import Logger
from src.core.zkp_auth import AuthDecision

log = Logger("checks").log


def check_round(outcome: RoundOutcome, cluster: PbftCluster, label: str = ""):
    """Commit, no conflicting commits, identical chains on honest replicas."""
    where = f" ({label})" if label else ""
    if outcome.conflicting:
        raise ProtocolInvariantError(f"Conflicting commits in cluster {cluster.roster.cluster_id}{where}")
    if not outcome.committed:
        raise ProtocolInvariantError(f"Proposal {outcome.digest.hex()[:8]} never committed{where}")
    chains = {tuple(e.digest for e in cluster.replicas[i].chain) for i in cluster.honest()}
    if len(chains) > 1:
        raise ProtocolInvariantError(f"Honest replicas of cluster {cluster.roster.cluster_id} hold different chains{where}")


def check_auth(service: AuthService, request_ids: Iterable[int]):
    """Honest proofs are accepted and every CA registry holds the issued token."""
    for request_id in request_ids:
        outcome = service.outcomes[request_id]
        if outcome.decision is not AuthDecision.ACCEPT or outcome.token is None:
            raise ProtocolInvariantError(
                f"Honest authentication request {request_id} ended as {outcome.decision!r}")
        pu = service.public_key_of(request_id)
        stored = {service.registries[ca].lookup(pu) for ca in service.ca_ids}
        if stored != {outcome.token}:
            raise ProtocolInvariantError(f"CA registries disagree on the token of request {request_id}")


def check_access(outcomes: Iterable[AccessOutcome]):
    """Authorized requests are accepted and their item arrives."""
    for outcome in outcomes:
        if outcome.decision is not AccessDecision.ACCEPT or outcome.end_time is None:
            raise ProtocolInvariantError(
                f"Authorized access request {outcome.request_id} ended as {outcome.decision!r}")


def check_gossip(report: PropagationReport) -> bool:
    """
    Logs uninformed leaders; TTL exhaustion is a reported failure, not an exception.

    Returns:
        bool: True when every leader received the block.
    """
    if not report.complete:
        log.error(f"❌ Gossip of {report.digest.hex()[:8]} left {len(report.uninformed)} leaders uninformed")
    return report.complete
