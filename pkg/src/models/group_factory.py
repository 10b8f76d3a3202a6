"""
This module provides a factory for the prime-order group backends.

The backend is chosen by the `crypto.backend` configuration key ("prod" for
NIST P-256, "test467" for the tiny test group). `get_group` is the single
entry point used by the protocols and the harness.
"""
from functools import lru_cache

from src.core.logger.logger import Logger
from src.models.group import GroupBackend, P256Backend, Test467Backend
from config.settings import HASH_NAME

log = Logger("group_factory").log

BACKENDS = ("prod", "test467")


def get_group_test467(hash_name: str = HASH_NAME) -> GroupBackend:
    """
    Initializes and returns the order-233 test backend.

    Args:
        hash_name (str, optional): hashlib algorithm used by `hash_to_scalar`.

    Returns:
        GroupBackend: The test backend.
    """
    backend = Test467Backend(hash_name)
    log.debug(f"✅ Group backend '{backend.name}' initialized ({hash_name}).")
    return backend


def get_group_prod(hash_name: str = HASH_NAME) -> GroupBackend:
    """
    Initializes and returns the NIST P-256 backend.

    Raises:
        Exception: If the curve arithmetic cannot be initialized.
    """
    try:
        backend = P256Backend(hash_name)
        log.debug(f"✅ Group backend '{backend.name}' initialized ({hash_name}).")
        return backend
    except Exception as e:
        log.error(f"❌ Error initializing P-256 backend: {e}")
        raise e


@lru_cache(maxsize=None)
def get_group(choice: str, hash_name: str = HASH_NAME) -> GroupBackend:
    """
    Factory function returning a group backend by name.

    Backends are immutable, so instances are cached per (choice, hash).

    Args:
        choice (str): "prod" or "test467".
        hash_name (str, optional): hashlib algorithm fixed for reproducibility.

    Returns:
        GroupBackend: The selected backend.

    Raises:
        RuntimeError: If the selected backend fails to initialize.
        ValueError: If `choice` is not a recognized backend.
    """
    if choice == "test467":
        try:
            return get_group_test467(hash_name)
        except Exception as e:
            raise RuntimeError(f"Error initializing test467 backend. Check crypto settings. Error: {e}")

    elif choice == "prod":
        try:
            return get_group_prod(hash_name)
        except Exception as e:
            raise RuntimeError(f"Error initializing prod backend. Check crypto settings. Error: {e}")

    else:
        raise ValueError(f"Crypto backend not recognized: {choice}")
