"""
Primary and cross-domain authentication driven on the simulator.

Primary flow for one request:

    user  --AUTH_REQUEST(slice i)-->  CA_i                 (one per CA)
    CA_i  --AUTH_SHARE-->             every other CA        (only for i <= t)
    CA_i  reconstructs from slices 1..t once it holds them all or its
          collection window closes, then sends AUTH_RESULT to the coordinator
    coordinator (CA nearest to the user), on 2f+1 ACCEPTs:
          --TOKEN_RECORD--> every CA,  --TOKEN--> user

Cross-domain flow: user --XDOMAIN_REQUEST--> CA, answered by AUTH_RESULT.
"""
from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from src.core.logger.logger import Logger
from src.core.netsim import CryptoCosts, SimEvent, Simulator
from src.core.secret_sharing import Share
from src.core.zkp_auth import (
    DEFAULT_VALIDITY_WINDOW, AuthDecision, AuthRequest, AuthResult, AuthShare, CaRegistry, Credential,
    ProofBundle, SessionToken, TokenMessage, TokenRecord, XDomainDecision, XDomainRequest, auth_requests,
    ca_verify, cross_domain_verify, prove, share_proof, token_digest,
)
from src.models.group import GroupBackend


def threshold_for(q: int, fraction: float = 0.25) -> int:
    """Reconstruction threshold ceil(q * fraction), at least 1."""
    return max(1, math.ceil(q * fraction))


@dataclass
class AuthOutcome:
    request_id: int
    user_id: int
    kind: str                       # "primary" | "xdomain"
    start_time: float
    end_time: float | None = None
    decision: AuthDecision | XDomainDecision | None = None
    token: SessionToken | None = None
    ca_count: int = 0
    threshold: int = 0

    @property
    def elapsed(self) -> float | None:
        return None if self.end_time is None else self.end_time - self.start_time


@dataclass
class _CaRequestState:
    """What one CA knows about one request."""
    header: AuthRequest | None = None
    kept: list[tuple[int, int, int]] = field(default_factory=list)  # max-heap on index: (-index, c, r)
    received: int = 0
    decided: bool = False
    timer: SimEvent | None = None


@dataclass
class _Window:
    request_id: int


class AuthService(Logger):
    """
    CA nodes of one domain plus the users authenticating against them.

    Args:
        sim (Simulator): Simulator the CA nodes are registered in.
        group (GroupBackend): Backend of credentials and proofs.
        ca_ids (Sequence[int]): CA nodes, in slice order.
        costs (CryptoCosts, optional): Service times charged for crypto work.
        threshold_fraction (float, optional): t = ceil(q * fraction).
        share_window (float, optional): How long a CA waits for missing slices.
        validity_window (float, optional): Token lifetime in simulated seconds.
    """

    def __init__(self, sim: Simulator, group: GroupBackend, ca_ids: Sequence[int],
                 costs: CryptoCosts | None = None, threshold_fraction: float = 0.25,
                 share_window: float = 1.0, validity_window: float = DEFAULT_VALIDITY_WINDOW):
        super().__init__()
        if not ca_ids:
            raise ValueError("At least one CA node is required")
        self.sim = sim
        self.group = group
        self.ca_ids = list(ca_ids)
        self.costs = costs or CryptoCosts()
        self.threshold_fraction = threshold_fraction
        self.share_window = share_window
        self.validity_window = validity_window
        self.registries: dict[int, CaRegistry] = {ca: CaRegistry() for ca in self.ca_ids}
        self.outcomes: dict[int, AuthOutcome] = {}
        self.results: dict[int, dict[int, AuthDecision]] = {}   # coordinator view
        self.decisions: dict[int, dict[int, AuthDecision]] = {}  # every CA's own decision
        self._state: dict[int, dict[int, _CaRequestState]] = {ca: {} for ca in self.ca_ids}
        self._pu: dict[int, object] = {}
        self._issued: set[int] = set()
        self._users: set[int] = set()
        self._next_id = 1
        for ca in self.ca_ids:
            sim.attach(ca, self._on_ca_event)

    # --- users ----------------------------------------------------------
    def add_user(self, user_id: int, lat: float, lon: float, capability: float = 1.0):
        if user_id not in self.sim.nodes:
            self.sim.register(user_id, lat, lon, capability)
        if user_id not in self._users:
            self.sim.attach(user_id, self._on_user_event)
            self._users.add(user_id)

    def coordinator_for(self, user_id: int) -> int:
        return min(self.ca_ids, key=lambda ca: (self.sim.distance_m(user_id, ca), ca))

    def public_key_of(self, request_id: int):
        return self._pu.get(request_id)

    def _new_request_id(self) -> int:
        request_id = self._next_id
        self._next_id += 1
        return request_id

    def authenticate(self, user_id: int, cred: Credential, rng: random.Random) -> int:
        """
        Starts primary authentication of `user_id`; the user proves, slices and
        sends one AUTH_REQUEST per CA at its current local time.

        Returns:
            int: Request id, key of `outcomes`.
        """
        q = len(self.ca_ids)
        t = threshold_for(q, self.threshold_fraction)
        request_id = self._new_request_id()
        start = self.sim.now
        self.outcomes[request_id] = AuthOutcome(request_id, user_id, "primary", start, ca_count=q, threshold=t)
        self._pu[request_id] = cred.pu

        proof = prove(self.group, cred, rng)
        bundle = share_proof(proof.V, proof.c, proof.r, q, t, rng)
        # nonce commitment, challenge hash, two degree-(t-1) polynomials at q points
        self.sim.compute(user_id, self.costs.scalar_mul + self.costs.hash + 2 * q * t * self.costs.field_mul)

        coordinator = self.coordinator_for(user_id)
        for ca, request in auth_requests(bundle, cred.pu, request_id, coordinator, self.ca_ids):
            self.sim.send(user_id, ca, request, len(request.encode(self.group)))
        self.log.debug(f"User {user_id} sent request {request_id} to {q} CA nodes (t={t})")
        return request_id

    def cross_domain(self, user_id: int, token: SessionToken, pu, ca_id: int) -> int:
        request_id = self._new_request_id()
        self.outcomes[request_id] = AuthOutcome(request_id, user_id, "xdomain", self.sim.now, token=token, ca_count=1)
        message = XDomainRequest(request_id, token.digest, token.timestamp, token.validity_window, pu)
        self.sim.send(user_id, ca_id, message, len(message.encode(self.group)))
        return request_id

    def _on_user_event(self, event: SimEvent):
        message = event.payload
        if isinstance(message, TokenMessage):
            outcome = self.outcomes[message.request_id]
            if outcome.end_time is None:
                outcome.end_time = self.sim.now
                outcome.decision = AuthDecision.ACCEPT
                outcome.token = message.token()
        elif isinstance(message, AuthResult) and message.request_id in self.outcomes:
            outcome = self.outcomes[message.request_id]
            if outcome.end_time is not None:
                return
            outcome.end_time = self.sim.now
            if outcome.kind == "xdomain":
                outcome.decision = XDomainDecision(message.decision)
            else:
                outcome.decision = AuthDecision(message.decision)

    # --- CA side --------------------------------------------------------
    def _on_ca_event(self, event: SimEvent):
        ca = event.destination
        message = event.payload
        if isinstance(message, AuthRequest):
            self._on_request(ca, message)
        elif isinstance(message, AuthShare):
            self._add_pair(ca, message.request_id, message.pair())
        elif isinstance(message, _Window):
            self._decide(ca, message.request_id)
        elif isinstance(message, AuthResult):
            self._on_result(ca, message.request_id, message.sender, AuthDecision(message.decision))
        elif isinstance(message, TokenRecord):
            self.registries[ca].record(message.pu, SessionToken(message.digest, message.timestamp,
                                                                 message.validity_window))
        elif isinstance(message, XDomainRequest):
            self.sim.compute(ca, self.costs.hash)
            decision = cross_domain_verify(message.token(), message.pu, self.registries[ca], self.sim.now)
            user = event.source
            reply = AuthResult(message.request_id, ca, int(decision))
            self.sim.send(ca, user, reply, len(reply.encode()))

    def _request_state(self, ca: int, request_id: int) -> _CaRequestState:
        return self._state[ca].setdefault(request_id, _CaRequestState())

    def _on_request(self, ca: int, request: AuthRequest):
        state = self._request_state(ca, request.request_id)
        if state.header is not None:
            return
        state.header = request
        if request.share_index <= request.t:
            # only the t lowest slices are ever used for reconstruction
            share = AuthShare(request.request_id, ca, request.share_index, request.c_share, request.r_share)
            self.sim.broadcast(ca, self.ca_ids, share, len(share.encode(self.group)))
        state.timer = self.sim.schedule_timer(ca, self.share_window, _Window(request.request_id))
        self._add_pair(ca, request.request_id, request.pair())

    def _add_pair(self, ca: int, request_id: int, pair: tuple[Share, Share]):
        state = self._request_state(ca, request_id)
        if state.decided:
            return
        c_share, r_share = pair
        state.received += 1
        if c_share.index < 1:
            return
        heapq.heappush(state.kept, (-c_share.index, c_share.value.value, r_share.value.value))
        header = state.header
        if header is None:
            return
        while len(state.kept) > header.t:
            heapq.heappop(state.kept)
        lowest_complete = len(state.kept) == header.t and -state.kept[0][0] == header.t
        if lowest_complete or state.received >= header.q:
            self._decide(ca, request_id)

    def _decide(self, ca: int, request_id: int):
        state = self._request_state(ca, request_id)
        if state.decided or state.header is None:
            return
        state.decided = True
        self.sim.cancel(state.timer)
        header = state.header
        while len(state.kept) > header.t:
            heapq.heappop(state.kept)
        pairs = [(Share(-neg, self.group.scalar(c)), Share(-neg, self.group.scalar(r)))
                 for neg, c, r in sorted(state.kept, reverse=True)]
        t = header.t
        # Lagrange basis, two reconstructions, two scalar multiplications, challenge hash
        self.sim.compute(ca, (t * t + 2 * t) * self.costs.field_mul + 2 * self.costs.scalar_mul + self.costs.hash)
        bundle = ProofBundle(header.V, (), (), header.q, header.t)
        decision = ca_verify(self.group, bundle, header.pu, pairs)
        self.decisions.setdefault(request_id, {})[ca] = decision
        self._pu[request_id] = header.pu
        state.kept = []
        if decision is not AuthDecision.ACCEPT:
            self.log.info(f"⚠️ CA {ca} decided {decision.name} for request {request_id}")
        if ca == header.coordinator:
            self._on_result(ca, request_id, ca, decision)
        else:
            result = AuthResult(request_id, ca, int(decision))
            self.sim.send(ca, header.coordinator, result, len(result.encode()))

    def _on_result(self, coordinator: int, request_id: int, sender: int, decision: AuthDecision):
        if request_id in self._issued:
            return
        results = self.results.setdefault(request_id, {})
        results[sender] = decision
        q = len(self.ca_ids)
        f = (q - 1) // 3
        quorum = 2 * f + 1
        accepts = sum(1 for d in results.values() if d is AuthDecision.ACCEPT)
        outcome = self.outcomes.get(request_id)
        user = outcome.user_id if outcome else None
        if accepts >= quorum:
            self._issued.add(request_id)
            self._issue(coordinator, request_id, user)
        elif len(results) - accepts > q - quorum:
            self._issued.add(request_id)
            worst = AuthDecision.REJECT if any(d is AuthDecision.REJECT for d in results.values()) \
                else AuthDecision.INDETERMINATE
            self.log.warning(f"⚠️ Request {request_id} failed CA consensus ({accepts}/{quorum} accepts)")
            if user is not None:
                reply = AuthResult(request_id, coordinator, int(worst))
                self.sim.send(coordinator, user, reply, len(reply.encode()))

    def _issue(self, coordinator: int, request_id: int, user: int | None):
        pu = self._pu[request_id]
        now = self.sim.now
        self.sim.compute(coordinator, self.costs.hash)
        digest = token_digest(self.group, pu, now)
        token = SessionToken(digest, now, self.validity_window)
        self.registries[coordinator].record(pu, token)
        record = TokenRecord(request_id, pu, digest, now, self.validity_window)
        self.sim.broadcast(coordinator, self.ca_ids, record, len(record.encode(self.group)))
        if user is not None:
            message = TokenMessage(request_id, digest, now, self.validity_window)
            self.sim.send(coordinator, user, message, len(message.encode()))
