"""
Access-control rounds driven on the simulator.

    user     --ACCESS_REQUEST(key_j, [pi]_j)-->  verifier j       (one per verifier)
    verifier --ACCESS_SHARE(tau_j)-->            every other verifier
    coordinator (verifier nearest to the user), once it can decide:
             --ACCESS_RESULT--> user, then --ITEM--> user on accept
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from src.core.fss_access import (
    AccessControlList, AccessDecision, AccessKey, AccessRequest, AccessResult, AccessShare, ItemMessage,
    access_requests, check_access, local_verify, prepare_access,
)
from src.core.logger.logger import Logger
from src.core.netsim import CryptoCosts, SimEvent, Simulator
from src.models.group import GroupBackend, GroupElement


@dataclass
class AccessOutcome:
    """Timestamps are arrival times at the user, before its receive processing."""
    request_id: int
    user_id: int
    start_time: float
    categories: int
    item_size: int
    decision: AccessDecision | None = None
    result_time: float | None = None
    end_time: float | None = None

    @property
    def elapsed(self) -> float | None:
        return None if self.end_time is None else self.end_time - self.start_time


@dataclass
class _VerifierState:
    header: AccessRequest | None = None
    taus: dict[int, GroupElement] = field(default_factory=dict)
    decided: bool = False
    timer: SimEvent | None = None


@dataclass(frozen=True)
class _Deadline:
    request_id: int


class AccessService(Logger):
    """
    Verifier nodes holding the access-control list, plus the users querying them.

    Args:
        sim (Simulator): Simulator the verifiers are registered in.
        group (GroupBackend): Backend of the access-control list.
        acl (AccessControlList): Verification keys, identical at every verifier.
        verifier_ids (Sequence[int]): Verifier nodes; server index j is position j-1.
        costs (CryptoCosts, optional): Service times charged for crypto work.
        scheme (str, optional): "additive" or "shamir".
        threshold (int, optional): t for the Shamir scheme.
        window (float, optional): How long the coordinator waits for missing results.
    """

    def __init__(self, sim: Simulator, group: GroupBackend, acl: AccessControlList, verifier_ids: Sequence[int],
                 costs: CryptoCosts | None = None, scheme: str = "additive", threshold: int | None = None,
                 window: float = 1.0):
        super().__init__()
        if len(verifier_ids) < 1:
            raise ValueError("At least one verifier node is required")
        self.sim = sim
        self.group = group
        self.acl = acl
        self.verifiers = list(verifier_ids)
        self.costs = costs or CryptoCosts()
        self.scheme = scheme
        self.threshold = threshold
        self.window = window
        self.outcomes: dict[int, AccessOutcome] = {}
        self._state: dict[int, dict[int, _VerifierState]] = {v: {} for v in self.verifiers}
        self._users: set[int] = set()
        self._next_id = 1
        for v in self.verifiers:
            sim.attach(v, self._on_verifier_event)

    def add_user(self, user_id: int, lat: float, lon: float, capability: float = 1.0):
        if user_id not in self.sim.nodes:
            self.sim.register(user_id, lat, lon, capability)
        if user_id not in self._users:
            self.sim.attach(user_id, self._on_user_event)
            self._users.add(user_id)

    def coordinator_for(self, user_id: int) -> int:
        return min(self.verifiers, key=lambda v: (self.sim.distance_m(user_id, v), v))

    def request(self, user_id: int, key: AccessKey, rng: random.Random, item_size: int = 512,
                target: int | None = None, proof_offset: int = 0) -> int:
        """
        Starts an access round for the category of `key`.

        Returns:
            int: Request id, key of `outcomes`.
        """
        s = len(self.verifiers)
        n_categories = len(self.acl)
        request_id = self._next_id
        self._next_id += 1
        self.outcomes[request_id] = AccessOutcome(request_id, user_id, self.sim.now, n_categories, item_size)
        query = prepare_access(self.group, key, n_categories, s, rng, scheme=self.scheme, t=self.threshold,
                               target=target, proof_offset=proof_offset, test_mode=s == 1)
        # one share per category and server plus the proof shares
        self.sim.compute(user_id, (n_categories + 1) * s * self.costs.field_mul)
        coordinator = self.coordinator_for(user_id)
        for node, message in access_requests(query, request_id, coordinator, self.verifiers, item_size,
                                             self.threshold):
            self.sim.send(user_id, node, message, len(message.encode(self.group)))
        return request_id

    # --- verifiers ------------------------------------------------------
    def _on_verifier_event(self, event: SimEvent):
        node = event.destination
        message = event.payload
        if isinstance(message, AccessRequest):
            self._on_request(node, message, event.source)
        elif isinstance(message, AccessShare):
            self._add_tau(node, message.request_id, message.server, message.tau)
        elif isinstance(message, _Deadline):
            self._decide(node, message.request_id, final=True)

    def _request_state(self, node: int, request_id: int) -> _VerifierState:
        return self._state[node].setdefault(request_id, _VerifierState())

    def _on_request(self, node: int, request: AccessRequest, user: int):
        state = self._request_state(node, request.request_id)
        if state.header is not None:
            return
        state.header = request
        self.sim.compute(node, (len(request.key_shares) + 1) * self.costs.scalar_mul)
        try:
            tau = local_verify(self.group, self.acl, request.dpf_key(), request.proof_share)
        except ValueError as e:
            self.log.warning(f"⚠️ Verifier {node}: {e}")
            return
        share = AccessShare(request.request_id, node, request.server, tau)
        peers = [v for v in request.verifiers if v != node]
        self.sim.broadcast(node, peers, share, len(share.encode(self.group)))
        if node == request.coordinator:
            state.timer = self.sim.schedule_timer(node, self.window, _Deadline(request.request_id))
        self._add_tau(node, request.request_id, request.server, tau)

    def _add_tau(self, node: int, request_id: int, server: int, tau: GroupElement):
        state = self._request_state(node, request_id)
        state.taus.setdefault(server, tau)
        self._decide(node, request_id)

    def _decide(self, node: int, request_id: int, final: bool = False):
        state = self._request_state(node, request_id)
        header = state.header
        if state.decided or header is None or node != header.coordinator:
            return
        needed = header.s if header.scheme == "additive" else header.t
        if len(state.taus) < needed and not final:
            return
        state.decided = True
        self.sim.cancel(state.timer)
        self.sim.compute(node, len(state.taus) * self.costs.scalar_mul)
        decision = check_access(self.group, state.taus, header.s, scheme=header.scheme, t=header.t)
        user = self.outcomes[request_id].user_id
        result = AccessResult(request_id, int(decision))
        self.sim.send(node, user, result, len(result.encode()))
        if decision is AccessDecision.ACCEPT:
            item = ItemMessage(request_id, bytes(header.item_size))
            self.sim.send(node, user, item, len(item.encode()))
        else:
            self.log.info(f"⚠️ Access request {request_id} decided {decision.name}")

    # --- users ----------------------------------------------------------
    def _on_user_event(self, event: SimEvent):
        message = event.payload
        if isinstance(message, AccessResult) and message.request_id in self.outcomes:
            outcome = self.outcomes[message.request_id]
            if outcome.decision is None:
                outcome.decision = AccessDecision(message.decision)
                outcome.result_time = event.fire_time
                if outcome.decision is not AccessDecision.ACCEPT:
                    outcome.end_time = event.fire_time
        elif isinstance(message, ItemMessage) and message.request_id in self.outcomes:
            outcome = self.outcomes[message.request_id]
            if outcome.end_time is None:
                outcome.end_time = event.fire_time
