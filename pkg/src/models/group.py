"""
This module provides the prime-order group abstraction behind every
cryptographic protocol of the stack.

A `GroupBackend` exposes one uniform interface (scalar multiplication, the
group law, hashing to scalars, seeded sampling and a fixed-width encoding)
whatever the underlying group is. The identity proof uses it in additive
(elliptic-curve) notation and the access-control algebra in multiplicative
(g^x) notation; both go through `scalar_mul` and `combine`.

Two backends are provided:
    * `Test467Backend`: the order-233 subgroup of Z_467^* generated by 4.
      Small enough for exhaustive oracles in tests.
    * `P256Backend`: NIST P-256, with the point arithmetic delegated to the
      `ecdsa` package at the boundary.
"""
from __future__ import annotations

import hashlib
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Hashable

from ecdsa import NIST256p
from ecdsa.ellipticcurve import INFINITY, PointJacobi

from src.core.logger.logger import Logger

PROTOCOL_TAG = b"IOB-STACK/v1|"


@dataclass(frozen=True)
class Scalar:
    """An integer modulo the group order n, always kept reduced."""
    value: int
    n: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value % self.n)

    def _coerce(self, other: Scalar | int) -> int:
        if isinstance(other, Scalar):
            if other.n != self.n:
                raise ValueError(f"Scalar moduli differ: {self.n} != {other.n}")
            return other.value
        return int(other)

    def __add__(self, other: Scalar | int) -> Scalar:
        return Scalar(self.value + self._coerce(other), self.n)

    __radd__ = __add__

    def __sub__(self, other: Scalar | int) -> Scalar:
        return Scalar(self.value - self._coerce(other), self.n)

    def __rsub__(self, other: Scalar | int) -> Scalar:
        return Scalar(self._coerce(other) - self.value, self.n)

    def __mul__(self, other: Scalar | int) -> Scalar:
        return Scalar(self.value * self._coerce(other), self.n)

    __rmul__ = __mul__

    def __neg__(self) -> Scalar:
        return Scalar(-self.value, self.n)

    def __int__(self) -> int:
        return self.value

    def inverse(self) -> Scalar:
        if self.value == 0:
            raise ValueError("Zero scalar has no inverse")
        return Scalar(pow(self.value, -1, self.n), self.n)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(max(1, (self.n.bit_length() + 7) // 8), "big")


@dataclass(frozen=True)
class GroupElement:
    """Opaque group element; `rep` is only meaningful to the backend named in `backend`."""
    rep: Hashable
    backend: str


@dataclass(frozen=True)
class GroupParams:
    generator: GroupElement
    order: int
    description: str


class GroupBackend(ABC, Logger):
    """
    Common interface of the prime-order group backends.

    Subclasses implement the `_..._rep` primitives on raw representations;
    everything else (validation, scalars, hashing, sampling) lives here so
    the protocols never touch a backend-specific type.
    """
    name: str = "abstract"
    description: str = ""

    def __init__(self, order: int, hash_name: str = "sha256"):
        self.order = order
        self.hash_name = hash_name
        digest_size = hashlib.new(hash_name).digest_size
        if digest_size < 32:
            raise ValueError(f"Hash '{hash_name}' has a {digest_size * 8}-bit digest; 256 bits are required.")
        self.scalar_width = max(1, (order.bit_length() + 7) // 8)

    # --- primitives -----------------------------------------------------
    @abstractmethod
    def _identity_rep(self) -> Hashable: ...

    @abstractmethod
    def _generator_rep(self) -> Hashable: ...

    @abstractmethod
    def _mul_rep(self, rep: Hashable, k: int) -> Hashable: ...

    @abstractmethod
    def _add_rep(self, a: Hashable, b: Hashable) -> Hashable: ...

    @abstractmethod
    def _neg_rep(self, a: Hashable) -> Hashable: ...

    @abstractmethod
    def _contains_rep(self, rep: Any) -> bool: ...

    @abstractmethod
    def _encode_rep(self, rep: Hashable) -> bytes: ...

    @abstractmethod
    def _decode_rep(self, data: bytes) -> Hashable: ...

    @property
    @abstractmethod
    def element_width(self) -> int: ...

    # --- elements -------------------------------------------------------
    def _wrap(self, rep: Hashable) -> GroupElement:
        return GroupElement(rep, self.name)

    def element(self, rep: Any) -> GroupElement:
        """Validates a raw representation and wraps it."""
        if not self._contains_rep(rep):
            raise ValueError(f"{rep!r} is not a member of the order-{self.order} subgroup")
        return self._wrap(rep)

    def _check(self, el: GroupElement) -> Hashable:
        if el.backend != self.name:
            raise ValueError(f"Element from backend '{el.backend}' used with '{self.name}'")
        return el.rep

    @property
    def identity(self) -> GroupElement:
        return self._wrap(self._identity_rep())

    @property
    def generator(self) -> GroupElement:
        return self._wrap(self._generator_rep())

    @property
    def params(self) -> GroupParams:
        return GroupParams(self.generator, self.order, self.description)

    def contains(self, el: GroupElement) -> bool:
        return el.backend == self.name and self._contains_rep(el.rep)

    def is_identity(self, el: GroupElement) -> bool:
        return self._check(el) == self._identity_rep()

    # --- group law ------------------------------------------------------
    def scalar_mul(self, base: GroupElement, k: Scalar | int) -> GroupElement:
        """Combines `base` with itself k times (k taken mod n)."""
        k = int(k) % self.order
        rep = self._check(base)
        if k == 0 or rep == self._identity_rep():
            return self.identity
        return self._wrap(self._mul_rep(rep, k))

    def combine(self, a: GroupElement, b: GroupElement) -> GroupElement:
        ra, rb = self._check(a), self._check(b)
        identity = self._identity_rep()
        if ra == identity:
            return b
        if rb == identity:
            return a
        return self._wrap(self._add_rep(ra, rb))

    def combine_all(self, elements) -> GroupElement:
        acc = self.identity
        for el in elements:
            acc = self.combine(acc, el)
        return acc

    def inverse(self, a: GroupElement) -> GroupElement:
        ra = self._check(a)
        if ra == self._identity_rep():
            return a
        return self._wrap(self._neg_rep(ra))

    # --- scalars --------------------------------------------------------
    def scalar(self, value: int) -> Scalar:
        return Scalar(value, self.order)

    def random_scalar(self, rng: random.Random) -> Scalar:
        """Uniform draw from [1, n-1]; reproducible when `rng` is seeded."""
        return Scalar(rng.randrange(1, self.order), self.order)

    def random_any(self, rng: random.Random) -> Scalar:
        """Uniform draw from [0, n-1], used for shares and masks."""
        return Scalar(rng.randrange(self.order), self.order)

    def digest(self, data: bytes) -> bytes:
        return hashlib.new(self.hash_name, data).digest()

    def hash_to_scalar(self, transcript: bytes) -> Scalar:
        """
        Maps a transcript to a scalar by reducing a domain-separated digest mod n.

        The reduction bias is negligible for the 256-bit backend and accepted for
        the tiny test backend.
        """
        digest = self.digest(PROTOCOL_TAG + transcript)
        return Scalar(int.from_bytes(digest, "big"), self.order)

    # --- encoding -------------------------------------------------------
    def encode_element(self, el: GroupElement) -> bytes:
        return self._encode_rep(self._check(el))

    def decode_element(self, data: bytes) -> GroupElement:
        if len(data) != self.element_width:
            raise ValueError(f"Expected {self.element_width} bytes, got {len(data)}")
        return self.element(self._decode_rep(data))

    def encode_scalar(self, s: Scalar) -> bytes:
        return int(s).to_bytes(self.scalar_width, "big")

    def decode_scalar(self, data: bytes) -> Scalar:
        value = int.from_bytes(data, "big")
        if value >= self.order:
            raise ValueError(f"Scalar {value} out of range [0, {self.order - 1}]")
        return Scalar(value, self.order)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.description})"


class Test467Backend(GroupBackend):
    """Order-233 subgroup of the integers mod 467, generated by 4."""
    __test__ = False  # not a pytest class despite the name

    name = "test467"
    description = "Z_467^* subgroup of order 233, generator 4"

    P = 467
    N = 233
    G = 4

    def __init__(self, hash_name: str = "sha256"):
        super().__init__(self.N, hash_name)

    @property
    def element_width(self) -> int:
        return 2

    def _identity_rep(self) -> int:
        return 1

    def _generator_rep(self) -> int:
        return self.G

    def _mul_rep(self, rep: int, k: int) -> int:
        return pow(rep, k, self.P)

    def _add_rep(self, a: int, b: int) -> int:
        return (a * b) % self.P

    def _neg_rep(self, a: int) -> int:
        return pow(a, -1, self.P)

    def _contains_rep(self, rep: Any) -> bool:
        return isinstance(rep, int) and 1 <= rep < self.P and pow(rep, self.N, self.P) == 1

    def _encode_rep(self, rep: int) -> bytes:
        return rep.to_bytes(2, "big")

    def _decode_rep(self, data: bytes) -> int:
        return int.from_bytes(data, "big")


class P256Backend(GroupBackend):
    """
    NIST P-256 (cofactor 1). Representations are affine (x, y) tuples, None for
    the point at infinity.
    """
    name = "prod"
    description = "NIST P-256 via ecdsa"

    def __init__(self, hash_name: str = "sha256"):
        super().__init__(NIST256p.order, hash_name)
        self._curve = NIST256p.curve
        self._gen = NIST256p.generator
        self._coord_width = (self._curve.p().bit_length() + 7) // 8
        self._gen_rep = (self._gen.x(), self._gen.y())

    @property
    def element_width(self) -> int:
        return 1 + 2 * self._coord_width

    def _to_jacobi(self, rep) -> PointJacobi:
        if rep == self._gen_rep:
            return self._gen  # carries precomputation tables
        return PointJacobi(self._curve, rep[0], rep[1], 1, self.order)

    @staticmethod
    def _from_point(point) -> tuple[int, int] | None:
        affine = point.to_affine() if isinstance(point, PointJacobi) else point
        if affine is INFINITY or affine.x() is None:
            return None
        return (affine.x(), affine.y())

    def _identity_rep(self) -> None:
        return None

    def _generator_rep(self) -> tuple[int, int]:
        return self._gen_rep

    def _mul_rep(self, rep, k: int):
        return self._from_point(self._to_jacobi(rep) * k)

    def _add_rep(self, a, b):
        return self._from_point(self._to_jacobi(a) + self._to_jacobi(b))

    def _neg_rep(self, a):
        return (a[0], (-a[1]) % self._curve.p())

    def _contains_rep(self, rep: Any) -> bool:
        if rep is None:
            return True
        if not (isinstance(rep, tuple) and len(rep) == 2):
            return False
        x, y = rep
        p = self._curve.p()
        return 0 <= x < p and 0 <= y < p and self._curve.contains_point(x, y)

    def _encode_rep(self, rep) -> bytes:
        if rep is None:
            return bytes(self.element_width)
        w = self._coord_width
        return b"\x04" + rep[0].to_bytes(w, "big") + rep[1].to_bytes(w, "big")

    def _decode_rep(self, data: bytes):
        if data == bytes(self.element_width):
            return None
        if data[0] != 0x04:
            raise ValueError("Only uncompressed points are accepted")
        w = self._coord_width
        return (int.from_bytes(data[1:1 + w], "big"), int.from_bytes(data[1 + w:], "big"))
