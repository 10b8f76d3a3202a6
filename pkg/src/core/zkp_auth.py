"""
Non-interactive Schnorr identity proof with threshold verification by CA nodes.

The user proves knowledge of `pr` for `pu = pr*G`:

    V = v*G            (fresh nonce v)
    c = H(G || V || pu)
    r = v - pr*c mod n

and Shamir-shares c and r across q CA nodes with threshold t. Each CA
reconstructs from the broadcast shares and accepts iff r*G + c*pu == V and c is
the hash of the transcript. Once the CAs agree, a session token
H(pu || timestamp) is recorded in every CA registry so the user can later
re-authenticate in another cluster without proving again.

The wire messages of the flow live here as well; `AuthService` drives them on
the simulator.
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

from src.core.secret_sharing import Share, shamir_reconstruct, shamir_share
from src.core.wire import FieldReader, FieldWriter, MsgType, frame, register
from src.models.group import GroupBackend, GroupElement, Scalar

DEFAULT_VALIDITY_WINDOW = 24 * 3600.0  # simulated seconds


class AuthDecision(IntEnum):
    ACCEPT = 1
    REJECT = 2
    INDETERMINATE = 3


class XDomainDecision(IntEnum):
    ACCEPT = 1
    REJECT = 2
    REAUTH_REQUIRED = 4


@dataclass(frozen=True)
class Credential:
    pr: Scalar
    pu: GroupElement


@dataclass(frozen=True)
class Proof:
    V: GroupElement
    c: Scalar
    r: Scalar


@dataclass(frozen=True)
class ProofBundle:
    """Commitment plus the Shamir slices of c and r handed to the CA nodes."""
    V: GroupElement
    c_shares: tuple[Share, ...]
    r_shares: tuple[Share, ...]
    q: int
    t: int

    def __post_init__(self):
        if not 1 <= self.t <= self.q:
            raise ValueError(f"Invalid threshold: need 1 <= t <= q, got t={self.t}, q={self.q}")

    def slice(self, index: int) -> tuple[Share, Share]:
        """The (c, r) share pair destined for the CA holding evaluation point `index`."""
        return self.c_shares[index - 1], self.r_shares[index - 1]

    def header(self) -> ProofBundle:
        """Same bundle without shares, as seen by a CA before the broadcast."""
        return ProofBundle(self.V, (), (), self.q, self.t)


def generate_credential(group: GroupBackend, rng: random.Random) -> Credential:
    pr = group.random_scalar(rng)
    return Credential(pr, group.scalar_mul(group.generator, pr))


def challenge(group: GroupBackend, V: GroupElement, pu: GroupElement) -> Scalar:
    """c = H(G || V || pu) over the fixed-width element encodings."""
    transcript = group.encode_element(group.generator) + group.encode_element(V) + group.encode_element(pu)
    return group.hash_to_scalar(transcript)


def prove(group: GroupBackend, cred: Credential, rng: random.Random, *,
          nonce: Scalar | None = None, challenge_override: Scalar | None = None) -> Proof:
    """
    Produces (V, c, r) for `cred`.

    Args:
        group (GroupBackend): Backend the credential lives in.
        cred (Credential): The user's key pair.
        rng (random.Random): Source of the nonce v.
        nonce (Scalar, optional): Fixed v, for worked examples only.
        challenge_override (Scalar, optional): Fixed c instead of the hash, for
            worked examples only. A proof built this way does not verify.

    Returns:
        Proof: Commitment, challenge and response.
    """
    v = nonce if nonce is not None else group.random_scalar(rng)
    V = group.scalar_mul(group.generator, v)
    c = challenge_override if challenge_override is not None else challenge(group, V, cred.pu)
    r = v - cred.pr * c
    return Proof(V, c, r)


def verify(group: GroupBackend, V: GroupElement, c: Scalar, r: Scalar, pu: GroupElement) -> bool:
    kappa = group.combine(group.scalar_mul(group.generator, r), group.scalar_mul(pu, c))
    return kappa == V and c == challenge(group, V, pu)


def share_proof(V: GroupElement, c: Scalar, r: Scalar, q: int, t: int, rng: random.Random) -> ProofBundle:
    """
    Splits c and r into q Shamir slices with threshold t.

    Raises:
        ValueError: If t = 0 or t > q.
    """
    if not 1 <= t <= q:
        raise ValueError(f"Invalid threshold: need 1 <= t <= q, got t={t}, q={q}")
    return ProofBundle(V, tuple(shamir_share(c, q, t, rng)), tuple(shamir_share(r, q, t, rng)), q, t)


def usable_pairs(collected: Iterable[tuple[Share, Share]], q: int, n: int) -> dict[int, tuple[Share, Share]]:
    """Drops malformed pairs (index outside [1, q], mismatched indices, foreign modulus, duplicates)."""
    pairs: dict[int, tuple[Share, Share]] = {}
    for c_share, r_share in collected:
        if c_share.index != r_share.index or not 1 <= c_share.index <= q:
            continue
        if c_share.value.n != n or r_share.value.n != n:
            continue
        pairs.setdefault(c_share.index, (c_share, r_share))
    return pairs


def ca_verify(group: GroupBackend, bundle: ProofBundle, pu: GroupElement,
              collected_shares: Iterable[tuple[Share, Share]] | None = None) -> AuthDecision:
    """
    Reconstructs c and r from the t lowest usable share indices and checks the proof.

    Args:
        group (GroupBackend): Backend of the proof.
        bundle (ProofBundle): At least its header (V, q, t).
        pu (GroupElement): Claimed public key.
        collected_shares (Iterable[tuple[Share, Share]], optional): (c, r) pairs gathered
            from the broadcast; defaults to every slice in `bundle`.

    Returns:
        AuthDecision: INDETERMINATE when fewer than t usable pairs are present.
    """
    if collected_shares is None:
        collected_shares = zip(bundle.c_shares, bundle.r_shares)
    pairs = usable_pairs(collected_shares, bundle.q, group.order)
    if len(pairs) < bundle.t:
        return AuthDecision.INDETERMINATE
    chosen = [pairs[i] for i in sorted(pairs)[:bundle.t]]
    c = shamir_reconstruct([p[0] for p in chosen], group.order)
    r = shamir_reconstruct([p[1] for p in chosen], group.order)
    return AuthDecision.ACCEPT if verify(group, bundle.V, c, r, pu) else AuthDecision.REJECT


# --- tokens --------------------------------------------------------------

def token_digest(group: GroupBackend, pu: GroupElement, timestamp: float) -> bytes:
    return group.digest(group.encode_element(pu) + struct.pack(">d", timestamp))


@dataclass(frozen=True)
class SessionToken:
    digest: bytes
    timestamp: float
    validity_window: float = DEFAULT_VALIDITY_WINDOW

    def expired(self, now: float) -> bool:
        return now > self.timestamp + self.validity_window


@dataclass
class CaRegistry:
    """Verified identities known to one CA node: pu -> token."""
    entries: dict[GroupElement, SessionToken] = field(default_factory=dict)

    def record(self, pu: GroupElement, token: SessionToken):
        self.entries[pu] = token

    def lookup(self, pu: GroupElement) -> SessionToken | None:
        return self.entries.get(pu)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, pu: GroupElement) -> bool:
        return pu in self.entries


def issue_token(group: GroupBackend, pu: GroupElement, now: float, registries: Iterable[CaRegistry] = (),
                validity_window: float = DEFAULT_VALIDITY_WINDOW) -> SessionToken:
    """Builds H(pu || now) and records it in every given registry."""
    token = SessionToken(token_digest(group, pu, now), now, validity_window)
    for registry in registries:
        registry.record(pu, token)
    return token


def cross_domain_verify(token: SessionToken, pu: GroupElement, registry: CaRegistry, now: float) -> XDomainDecision:
    """
    Checks a presented token against the registry of a CA in the new cluster.

    A digest mismatch is a possible forgery and is rejected outright; an unknown
    or expired identity has to authenticate again. The registry is never written.
    """
    stored = registry.lookup(pu)
    if stored is None:
        return XDomainDecision.REAUTH_REQUIRED
    if stored.digest != token.digest:
        return XDomainDecision.REJECT
    if stored.expired(now):
        return XDomainDecision.REAUTH_REQUIRED
    return XDomainDecision.ACCEPT


# --- wire messages -------------------------------------------------------

@register
@dataclass(frozen=True)
class AuthRequest:
    MSG_TYPE = MsgType.AUTH_REQUEST
    request_id: int
    coordinator: int
    q: int
    t: int
    V: GroupElement
    share_index: int
    c_share: Scalar
    r_share: Scalar
    pu: GroupElement

    trace_type = "AUTH_REQUEST"

    def encode(self, group: GroupBackend) -> bytes:
        body = (FieldWriter().u32(self.request_id).u32(self.coordinator).u32(self.q).u32(self.t)
                .element(group, self.V).u32(self.share_index)
                .scalar(group, self.c_share).scalar(group, self.r_share)
                .element(group, self.pu).build())
        return frame(self.MSG_TYPE, body)

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend) -> AuthRequest:
        return cls(reader.u32(), reader.u32(), reader.u32(), reader.u32(), reader.element(group),
                   reader.u32(), reader.scalar(group), reader.scalar(group), reader.element(group))

    def pair(self) -> tuple[Share, Share]:
        return Share(self.share_index, self.c_share), Share(self.share_index, self.r_share)


@register
@dataclass(frozen=True)
class AuthShare:
    MSG_TYPE = MsgType.AUTH_SHARE
    request_id: int
    sender: int
    share_index: int
    c_share: Scalar
    r_share: Scalar

    trace_type = "AUTH_SHARE"

    def encode(self, group: GroupBackend) -> bytes:
        body = (FieldWriter().u32(self.request_id).u32(self.sender).u32(self.share_index)
                .scalar(group, self.c_share).scalar(group, self.r_share).build())
        return frame(self.MSG_TYPE, body)

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend) -> AuthShare:
        return cls(reader.u32(), reader.u32(), reader.u32(), reader.scalar(group), reader.scalar(group))

    def pair(self) -> tuple[Share, Share]:
        return Share(self.share_index, self.c_share), Share(self.share_index, self.r_share)


@register
@dataclass(frozen=True)
class AuthResult:
    """Decision code of an AuthDecision or XDomainDecision, depending on the request."""
    MSG_TYPE = MsgType.AUTH_RESULT
    request_id: int
    sender: int
    decision: int

    trace_type = "AUTH_RESULT"

    def encode(self, group: GroupBackend | None = None) -> bytes:
        return frame(self.MSG_TYPE, FieldWriter().u32(self.request_id).u32(self.sender).u8(self.decision).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend | None = None) -> AuthResult:
        return cls(reader.u32(), reader.u32(), reader.u8())


@register
@dataclass(frozen=True)
class TokenMessage:
    MSG_TYPE = MsgType.TOKEN
    request_id: int
    digest: bytes
    timestamp: float
    validity_window: float

    trace_type = "TOKEN"

    def encode(self, group: GroupBackend | None = None) -> bytes:
        body = (FieldWriter().u32(self.request_id).blob(self.digest)
                .f64(self.timestamp).f64(self.validity_window).build())
        return frame(self.MSG_TYPE, body)

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend | None = None) -> TokenMessage:
        return cls(reader.u32(), reader.blob(), reader.f64(), reader.f64())

    def token(self) -> SessionToken:
        return SessionToken(self.digest, self.timestamp, self.validity_window)


@register
@dataclass(frozen=True)
class TokenRecord:
    """Coordinator-to-CA instruction to store a token after the CA consensus."""
    MSG_TYPE = MsgType.TOKEN_RECORD
    request_id: int
    pu: GroupElement
    digest: bytes
    timestamp: float
    validity_window: float

    trace_type = "TOKEN_RECORD"

    def encode(self, group: GroupBackend) -> bytes:
        body = (FieldWriter().u32(self.request_id).element(group, self.pu).blob(self.digest)
                .f64(self.timestamp).f64(self.validity_window).build())
        return frame(self.MSG_TYPE, body)

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend) -> TokenRecord:
        return cls(reader.u32(), reader.element(group), reader.blob(), reader.f64(), reader.f64())


@register
@dataclass(frozen=True)
class XDomainRequest:
    MSG_TYPE = MsgType.XDOMAIN_REQUEST
    request_id: int
    digest: bytes
    timestamp: float
    validity_window: float
    pu: GroupElement

    trace_type = "XDOMAIN_REQUEST"

    def encode(self, group: GroupBackend) -> bytes:
        body = (FieldWriter().u32(self.request_id).blob(self.digest).f64(self.timestamp)
                .f64(self.validity_window).element(group, self.pu).build())
        return frame(self.MSG_TYPE, body)

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend) -> XDomainRequest:
        return cls(reader.u32(), reader.blob(), reader.f64(), reader.f64(), reader.element(group))

    def token(self) -> SessionToken:
        return SessionToken(self.digest, self.timestamp, self.validity_window)


def auth_requests(bundle: ProofBundle, pu: GroupElement, request_id: int, coordinator: int,
                  ca_ids: Sequence[int]) -> list[tuple[int, AuthRequest]]:
    """One AUTH_REQUEST per CA, the i-th CA (1-based) receiving slice i."""
    if len(ca_ids) != bundle.q:
        raise ValueError(f"Bundle has {bundle.q} slices for {len(ca_ids)} CA nodes")
    out = []
    for index, ca in enumerate(ca_ids, start=1):
        c_share, r_share = bundle.slice(index)
        out.append((ca, AuthRequest(request_id, coordinator, bundle.q, bundle.t, bundle.V,
                                    index, c_share.value, r_share.value, pu)))
    return out
