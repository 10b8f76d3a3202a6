"""
Permission-scoped access to behavior-category databases.

A trusted key ceremony samples one secret d_i per category and publishes the
access-control list vk_i = d_i*G. A user holding d_k secret-shares the point
function P_k (1 at k, 0 elsewhere) and the proof pi = -d_k across s verifier
nodes. Node j computes

    tau_j = sum_i [p_i]_j * vk_i + [pi]_j * G

from uniform shares only, and the combined tau is the identity exactly when the
shared index matches the category of the key.

Two sharing schemes are supported: full-domain additive vectors (every node
needed) and Shamir shares at threshold t (any t nodes decide, each tau_j
weighted by its Lagrange coefficient).
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

import pandas as pd

from src.core.secret_sharing import additive_share, lagrange_at_zero, shamir_share
from src.core.wire import FieldReader, FieldWriter, MsgType, frame, register
from src.models.group import GroupBackend, GroupElement, Scalar

SCHEMES = ("additive", "shamir")
ACL_COLUMNS = ["category_index", "label", "vk_hex"]
DEFAULT_LABELS = ("Sports", "Driving", "Going Home")


class AccessDecision(IntEnum):
    ACCEPT = 1
    REJECT = 2
    INDETERMINATE = 3


def _check_scheme(scheme: str, s: int, t: int | None) -> int:
    if scheme not in SCHEMES:
        raise ValueError(f"Sharing scheme not recognized: {scheme}")
    if scheme == "additive":
        return s
    if t is None or not 1 <= t <= s:
        raise ValueError(f"Shamir sharing needs 1 <= t <= s, got t={t}, s={s}")
    return t


@dataclass(frozen=True)
class PointFunction:
    domain: int
    index: int
    value: Scalar

    def __post_init__(self):
        if self.domain < 1:
            raise ValueError(f"Domain size must be positive, got {self.domain}")
        if not 1 <= self.index <= self.domain:
            raise ValueError(f"Index {self.index} outside [1, {self.domain}]")

    def __call__(self, x: int) -> Scalar:
        return self.value if x == self.index else Scalar(0, self.value.n)


@dataclass(frozen=True)
class DPFKey:
    server: int                  # 1-based, also the Shamir evaluation point
    shares: tuple[Scalar, ...]
    scheme: str = "additive"

    def __len__(self) -> int:
        return len(self.shares)


def dpf_gen(point: PointFunction, s: int, rng: random.Random, *, scheme: str = "additive",
            t: int | None = None, test_mode: bool = False) -> list[DPFKey]:
    """
    Shares `point` into s full-domain keys.

    Additive: the first s-1 vectors are uniform and the last is P minus their
    sum. Shamir: every coordinate is Shamir-shared at threshold t.

    Raises:
        ValueError: If s < 2 outside test mode, or the scheme parameters are invalid.
    """
    if s < 1 or (s < 2 and not test_mode):
        raise ValueError(f"At least 2 servers are required, got s={s}")
    _check_scheme(scheme, s, t)
    columns = []
    for x in range(1, point.domain + 1):
        if scheme == "additive":
            columns.append(additive_share(point(x), s, rng))
        else:
            columns.append([share.value for share in shamir_share(point(x), s, t, rng)])
    return [DPFKey(j + 1, tuple(col[j] for col in columns), scheme) for j in range(s)]


def dpf_eval(key: DPFKey, x: int) -> Scalar:
    if not 1 <= x <= len(key):
        raise ValueError(f"Evaluation point {x} outside [1, {len(key)}]")
    return key.shares[x - 1]


@dataclass(frozen=True)
class AccessControlList:
    vks: tuple[GroupElement, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.vks) != len(self.labels):
            raise ValueError("Every verification key needs a label")

    def __len__(self) -> int:
        return len(self.vks)

    def to_frame(self, group: GroupBackend) -> pd.DataFrame:
        rows = [(i, label, group.encode_element(vk).hex())
                for i, (vk, label) in enumerate(zip(self.vks, self.labels), start=1)]
        return pd.DataFrame(rows, columns=ACL_COLUMNS)

    def to_csv(self, group: GroupBackend, path: str | Path):
        self.to_frame(group).to_csv(path, index=False)

    @classmethod
    def from_csv(cls, group: GroupBackend, path: str | Path) -> AccessControlList:
        df = pd.read_csv(path, dtype={"vk_hex": str, "label": str}).sort_values("category_index")
        return cls(tuple(group.decode_element(bytes.fromhex(h)) for h in df["vk_hex"]), tuple(df["label"]))


@dataclass(frozen=True)
class AccessKey:
    category: int
    secret: Scalar


def category_labels(n: int) -> tuple[str, ...]:
    return tuple(DEFAULT_LABELS[i] if i < len(DEFAULT_LABELS) else f"category-{i + 1}" for i in range(n))


class KeyCeremony:
    """
    Trusted setup: samples d_1..d_N uniformly from [1, n-1] once, publishes the
    access-control list and hands out per-category access keys.
    """

    def __init__(self, group: GroupBackend, n_categories: int, rng: random.Random,
                 labels: Sequence[str] | None = None):
        if n_categories < 1:
            raise ValueError(f"At least one category is required, got {n_categories}")
        labels = tuple(labels) if labels is not None else category_labels(n_categories)
        if len(labels) != n_categories:
            raise ValueError(f"Expected {n_categories} labels, got {len(labels)}")
        self.group = group
        self._secrets = [group.random_scalar(rng) for _ in range(n_categories)]
        g = group.generator
        self.acl = AccessControlList(tuple(group.scalar_mul(g, d) for d in self._secrets), labels)

    def access_key(self, category: int) -> AccessKey:
        if not 1 <= category <= len(self._secrets):
            raise ValueError(f"Category {category} outside [1, {len(self._secrets)}]")
        return AccessKey(category, self._secrets[category - 1])


def keygen(group: GroupBackend, n_categories: int, category: int, rng: random.Random,
           labels: Sequence[str] | None = None) -> tuple[AccessKey, AccessControlList]:
    if not 1 <= category <= n_categories:
        raise ValueError(f"Category {category} outside [1, {n_categories}]")
    ceremony = KeyCeremony(group, n_categories, rng, labels)
    return ceremony.access_key(category), ceremony.acl


@dataclass(frozen=True)
class ProofShares:
    shares: tuple[Scalar, ...]
    scheme: str = "additive"


def share_proof(secret: Scalar, s: int, rng: random.Random, *, scheme: str = "additive",
                t: int | None = None) -> ProofShares:
    """Shares pi = -secret across s nodes."""
    _check_scheme(scheme, s, t)
    pi = -secret
    if scheme == "additive":
        return ProofShares(tuple(additive_share(pi, s, rng)), scheme)
    return ProofShares(tuple(share.value for share in shamir_share(pi, s, t, rng)), scheme)


@dataclass(frozen=True)
class AccessQuery:
    keys: tuple[DPFKey, ...]
    proof: ProofShares

    def for_server(self, j: int) -> tuple[DPFKey, Scalar]:
        return self.keys[j - 1], self.proof.shares[j - 1]


def prepare_access(group: GroupBackend, key: AccessKey, n_categories: int, s: int, rng: random.Random, *,
                   scheme: str = "additive", t: int | None = None, target: int | None = None,
                   proof_offset: int = 0, test_mode: bool = False) -> AccessQuery:
    """
    User side: DPF keys for the point function at `target` (default: the key's
    category, value 1) plus shares of -d_k (+ `proof_offset`).
    """
    point = PointFunction(n_categories, target or key.category, group.scalar(1))
    keys = dpf_gen(point, s, rng, scheme=scheme, t=t, test_mode=test_mode)
    proof = share_proof(key.secret - proof_offset, s, rng, scheme=scheme, t=t)
    return AccessQuery(tuple(keys), proof)


def local_verify(group: GroupBackend, acl: AccessControlList, key: DPFKey, proof_share: Scalar) -> GroupElement:
    """tau_j = sum over i of [p_i]_j * vk_i, plus [pi]_j * G."""
    if len(key) != len(acl):
        raise ValueError(f"DPF key covers {len(key)} categories but the access-control list has {len(acl)}")
    terms = [group.scalar_mul(vk, dpf_eval(key, i)) for i, vk in enumerate(acl.vks, start=1)]
    terms.append(group.scalar_mul(group.generator, proof_share))
    return group.combine_all(terms)


def check_access(group: GroupBackend, taus: Mapping[int, GroupElement | None], s: int, *,
                 scheme: str = "additive", t: int | None = None) -> AccessDecision:
    """
    Combines the local results keyed by server index (1..s).

    Additive sharing needs all s results; Shamir needs any t, of which the t
    lowest indices are used. Fewer results give INDETERMINATE.
    """
    needed = _check_scheme(scheme, s, t)
    present = sorted(j for j, tau in taus.items() if tau is not None and 1 <= j <= s)
    if len(present) < needed:
        return AccessDecision.INDETERMINATE
    if scheme == "additive":
        combined = group.combine_all(taus[j] for j in present)
    else:
        chosen = tuple(present[:needed])
        coefficients = lagrange_at_zero(chosen, group.order)
        combined = group.combine_all(group.scalar_mul(taus[j], c) for j, c in zip(chosen, coefficients))
    return AccessDecision.ACCEPT if group.is_identity(combined) else AccessDecision.REJECT


# --- wire ----------------------------------------------------------------

@register
@dataclass(frozen=True)
class AccessRequest:
    MSG_TYPE = MsgType.ACCESS_REQUEST
    request_id: int
    coordinator: int
    server: int
    s: int
    t: int
    scheme: str
    item_size: int
    verifiers: tuple[int, ...]
    key_shares: tuple[Scalar, ...]
    proof_share: Scalar

    trace_type = "ACCESS_REQUEST"

    def dpf_key(self) -> DPFKey:
        return DPFKey(self.server, self.key_shares, self.scheme)

    def encode(self, group: GroupBackend) -> bytes:
        writer = (FieldWriter().u32(self.request_id).u32(self.coordinator).u32(self.server).u32(self.s)
                  .u32(self.t).u8(SCHEMES.index(self.scheme)).u32(self.item_size).u32(len(self.verifiers)))
        for v in self.verifiers:
            writer.u32(v)
        writer.u32(len(self.key_shares))
        for share in self.key_shares:
            writer.scalar(group, share)
        return frame(self.MSG_TYPE, writer.scalar(group, self.proof_share).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend) -> AccessRequest:
        request_id, coordinator, server, s, t = (reader.u32() for _ in range(5))
        scheme = SCHEMES[reader.u8()]
        item_size = reader.u32()
        verifiers = tuple(reader.u32() for _ in range(reader.u32()))
        key_shares = tuple(reader.scalar(group) for _ in range(reader.u32()))
        return cls(request_id, coordinator, server, s, t, scheme, item_size, verifiers, key_shares,
                   reader.scalar(group))


@register
@dataclass(frozen=True)
class AccessShare:
    MSG_TYPE = MsgType.ACCESS_SHARE
    request_id: int
    sender: int
    server: int
    tau: GroupElement

    trace_type = "ACCESS_SHARE"

    def encode(self, group: GroupBackend) -> bytes:
        body = FieldWriter().u32(self.request_id).u32(self.sender).u32(self.server).element(group, self.tau).build()
        return frame(self.MSG_TYPE, body)

    @classmethod
    def decode_body(cls, reader: FieldReader, group: GroupBackend) -> AccessShare:
        return cls(reader.u32(), reader.u32(), reader.u32(), reader.element(group))


@register
@dataclass(frozen=True)
class AccessResult:
    MSG_TYPE = MsgType.ACCESS_RESULT
    request_id: int
    decision: int

    trace_type = "ACCESS_RESULT"

    def encode(self, group=None) -> bytes:
        return frame(self.MSG_TYPE, FieldWriter().u32(self.request_id).u8(self.decision).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> AccessResult:
        return cls(reader.u32(), reader.u8())


@register
@dataclass(frozen=True)
class ItemMessage:
    MSG_TYPE = MsgType.ITEM
    request_id: int
    payload: bytes

    trace_type = "ITEM"

    def encode(self, group=None) -> bytes:
        return frame(self.MSG_TYPE, FieldWriter().u32(self.request_id).blob(self.payload).build())

    @classmethod
    def decode_body(cls, reader: FieldReader, group=None) -> ItemMessage:
        return cls(reader.u32(), reader.blob())


def access_requests(query: AccessQuery, request_id: int, coordinator: int, verifiers: Sequence[int],
                    item_size: int, t: int | None = None) -> list[tuple[int, AccessRequest]]:
    """One ACCESS_REQUEST per verifier, server indices following the order of `verifiers`."""
    s = len(verifiers)
    if len(query.keys) != s:
        raise ValueError(f"Query was shared for {len(query.keys)} nodes, {s} verifiers given")
    scheme = query.proof.scheme
    return [(node, AccessRequest(request_id, coordinator, j, s, t or s, scheme, item_size, tuple(verifiers),
                                 query.keys[j - 1].shares, query.proof.shares[j - 1]))
            for j, node in enumerate(verifiers, start=1)]
