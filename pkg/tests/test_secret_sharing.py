import random
from itertools import combinations

import pytest

from src.core.secret_sharing import (Share, additive_reconstruct, additive_share, lagrange_at_zero,
                                     shamir_reconstruct, shamir_share)
from src.models.group import Scalar

N = 233


def test_any_t_shares_reconstruct():
    secret = Scalar(101, N)
    shares = shamir_share(secret, q=5, t=3, rng=random.Random(1))
    for subset in combinations(shares, 3):
        assert shamir_reconstruct(list(subset), N) == secret


def test_threshold_one_copies_secret():
    shares = shamir_share(Scalar(9, N), q=3, t=1, rng=random.Random(3))
    assert {int(s.value) for s in shares} == {9}


@pytest.mark.parametrize("q,t", [(3, 0), (3, 4)])
def test_invalid_threshold(q, t):
    with pytest.raises(ValueError, match="Invalid threshold"):
        shamir_share(Scalar(1, N), q=q, t=t, rng=random.Random(0))


def test_share_count_below_order():
    with pytest.raises(ValueError, match="below the group order"):
        shamir_share(Scalar(1, N), q=N, t=2, rng=random.Random(0))


def test_lagrange_duplicate_points():
    with pytest.raises(ValueError, match="Duplicate"):
        lagrange_at_zero((1, 1), N)


def test_reconstruct_requires_shares():
    with pytest.raises(ValueError, match="At least one share"):
        shamir_reconstruct([], N)


def test_additive_shares_sum_to_secret():
    secret = Scalar(77, N)
    shares = additive_share(secret, 4, random.Random(7))
    assert len(shares) == 4
    assert additive_reconstruct(shares, N) == secret


def test_additive_share_count_positive():
    with pytest.raises(ValueError, match="must be positive"):
        additive_share(Scalar(1, N), 0, random.Random(0))


def test_missing_share_leaves_every_secret_feasible():
    # t-1 known shares plus every possible value of one unseen share
    shares = shamir_share(Scalar(42, N), q=4, t=3, rng=random.Random(2))
    known = shares[:2]
    secrets = {int(shamir_reconstruct([*known, Share(4, Scalar(y, N))], N)) for y in range(N)}
    assert secrets == set(range(N))


def test_worked_two_of_three():
    shares = shamir_share(Scalar(100, N), q=3, t=2, rng=random.Random(8))
    for subset in combinations(shares, 2):
        assert int(shamir_reconstruct(list(subset), N)) == 100
