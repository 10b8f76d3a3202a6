"""
Secret sharing over the scalar field Z_n.

Shamir sharing backs the identity-proof slices and the t-of-s access-control
variant; additive sharing backs the default access-control proof and the DPF
key vectors.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from src.models.group import Scalar


@dataclass(frozen=True)
class Share:
    index: int  # evaluation point, 1-based
    value: Scalar


def shamir_share(secret: Scalar, q: int, t: int, rng: random.Random) -> list[Share]:
    """
    Splits `secret` into q Shamir shares with reconstruction threshold t.

    A random polynomial of degree t-1 with constant term `secret` is evaluated
    at x = 1..q. Any t shares determine it; any t-1 are consistent with every
    possible secret.

    Raises:
        ValueError: If t = 0, t > q, or q >= n (evaluation points would collide).
    """
    n = secret.n
    if t < 1 or t > q:
        raise ValueError(f"Invalid threshold: need 1 <= t <= q, got t={t}, q={q}")
    if q >= n:
        raise ValueError(f"Share count q={q} must be below the group order {n}")
    coefficients = [secret.value] + [rng.randrange(n) for _ in range(t - 1)]
    shares = []
    for x in range(1, q + 1):
        # Horner evaluation
        acc = 0
        for coefficient in reversed(coefficients):
            acc = (acc * x + coefficient) % n
        shares.append(Share(x, Scalar(acc, n)))
    return shares


@lru_cache(maxsize=256)
def lagrange_at_zero(xs: tuple[int, ...], n: int) -> tuple[int, ...]:
    """Lagrange basis coefficients at 0 for the evaluation points `xs`, mod n."""
    if len(set(xs)) != len(xs):
        raise ValueError("Duplicate evaluation points")
    coefficients = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                num = (num * xj) % n
                den = (den * (xj - xi)) % n
        coefficients.append((num * pow(den, -1, n)) % n)
    return tuple(coefficients)


def shamir_reconstruct(shares: Sequence[Share], n: int) -> Scalar:
    """Interpolates the shared polynomial at 0 from exactly the given shares."""
    if not shares:
        raise ValueError("At least one share is required")
    xs = tuple(s.index for s in shares)
    coefficients = lagrange_at_zero(xs, n)
    return Scalar(sum(c * s.value.value for c, s in zip(coefficients, shares)), n)


def additive_share(secret: Scalar, s: int, rng: random.Random) -> list[Scalar]:
    """Splits `secret` into s uniformly random scalars summing to it."""
    if s < 1:
        raise ValueError(f"Share count must be positive, got {s}")
    n = secret.n
    shares = [Scalar(rng.randrange(n), n) for _ in range(s - 1)]
    shares.append(secret - sum(shares, Scalar(0, n)))
    return shares


def additive_reconstruct(shares: Iterable[Scalar], n: int) -> Scalar:
    return sum(shares, Scalar(0, n))
