import random

import pytest
from unittest.mock import patch

from src.models.group import P256Backend, Scalar, Test467Backend
from src.models.group_factory import get_group


@pytest.fixture
def small():
    return Test467Backend()


def test_generator_has_subgroup_order(small):
    g = small.generator
    assert small.is_identity(small.scalar_mul(g, small.order))
    assert not small.is_identity(small.scalar_mul(g, 1))


def test_combine_with_inverse_is_identity(small):
    g = small.scalar_mul(small.generator, 17)
    assert small.is_identity(small.combine(g, small.inverse(g)))


def test_scalar_mul_distributes_over_combine(small):
    g = small.generator
    lhs = small.scalar_mul(g, 30)
    rhs = small.combine(small.scalar_mul(g, 12), small.scalar_mul(g, 18))
    assert lhs == rhs


def test_element_outside_subgroup_rejected(small):
    # 2 is a non-residue mod 467
    with pytest.raises(ValueError, match="not a member"):
        small.element(2)


def test_decode_element_wrong_width(small):
    with pytest.raises(ValueError, match="Expected 2 bytes"):
        small.decode_element(b"\x00\x04\x00")


def test_decode_scalar_out_of_range(small):
    with pytest.raises(ValueError, match="out of range"):
        small.decode_scalar((233).to_bytes(1, "big"))


def test_hash_to_scalar_is_deterministic(small):
    assert small.hash_to_scalar(b"abc") == small.hash_to_scalar(b"abc")
    assert 0 <= int(small.hash_to_scalar(b"abc")) < small.order


def test_short_hash_rejected():
    with pytest.raises(ValueError, match="256 bits are required"):
        Test467Backend("md5")


def test_random_scalar_reproducible(small):
    a = small.random_scalar(random.Random(5))
    b = small.random_scalar(random.Random(5))
    assert a == b and int(a) != 0


def test_scalar_arithmetic_wraps():
    a = Scalar(230, 233)
    assert int(a + 5) == 2
    assert int(a * a.inverse()) == 1
    with pytest.raises(ValueError, match="moduli differ"):
        a + Scalar(1, 7)
    with pytest.raises(ValueError, match="no inverse"):
        Scalar(0, 233).inverse()


def test_elements_from_other_backend_rejected(small):
    prod = P256Backend()
    with pytest.raises(ValueError, match="used with"):
        small.combine(small.generator, prod.generator)


def test_p256_group_law_and_encoding():
    group = P256Backend()
    g = group.generator
    two_g = group.scalar_mul(g, 2)
    assert two_g == group.combine(g, g)
    assert group.is_identity(group.combine(two_g, group.inverse(two_g)))
    assert group.decode_element(group.encode_element(two_g)) == two_g
    assert group.decode_element(group.encode_element(group.identity)) == group.identity


def test_get_group_returns_cached_backend():
    assert get_group("test467") is get_group("test467")
    assert get_group("prod").name == "prod"


def test_get_group_invalid_choice():
    with pytest.raises(ValueError, match="Crypto backend not recognized"):
        get_group("rsa")


@patch("src.models.group_factory.P256Backend", side_effect=Exception("curve failure"))
def test_get_group_prod_failure_wrapped(mock_backend):
    get_group.cache_clear()
    with pytest.raises(RuntimeError, match="Error initializing prod backend"):
        get_group("prod", "sha3_256")
    mock_backend.assert_called_once()
    get_group.cache_clear()


def test_small_backend_worked_values(small):
    assert small.scalar_mul(small.generator, 5).rep == 90
    assert small.combine(small.element(4), small.element(4)).rep == 16
    assert small.scalar_mul(small.generator, 0) == small.identity
    assert small.scalar_mul(small.generator, 1) == small.generator


def test_small_backend_matches_square_and_multiply(small):
    def naive(base, e):
        acc = 1
        while e:
            if e & 1:
                acc = acc * base % 467
            base = base * base % 467
            e >>= 1
        return acc

    rng = random.Random(11)
    for _ in range(1000):
        base = small.scalar_mul(small.generator, rng.randrange(233))
        k = rng.randrange(233)
        assert small.scalar_mul(base, k).rep == naive(base.rep, k)


def test_random_scalar_covers_small_field(small):
    rng = random.Random(3)
    draws = {int(small.random_scalar(rng)) for _ in range(10_000)}
    assert draws == set(range(1, 233))


def test_hash_to_scalar_empty_transcript_in_range(small):
    assert 0 <= int(small.hash_to_scalar(b"")) < 233
