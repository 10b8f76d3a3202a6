"""
Exception hierarchy shared by the protocol engines and the experiment harness.

Protocol outcomes such as a rejected proof or an exhausted gossip TTL are not
errors and are returned as values; these classes cover broken inputs and
violated invariants.
"""


class IobError(Exception):
    """Base class for every error raised by this package."""


class WireFormatError(IobError):
    """A frame is truncated, carries an unknown type or an unsupported version."""


class UnknownNodeError(IobError):
    """A message was addressed to (or sent from) a node the simulator does not know."""


class EmptyDatasetError(IobError):
    """Ingestion left no nodes after filtering."""


class ProtocolInvariantError(IobError):
    """An assertion of the in-experiment protocol suite failed."""


class ConfigError(IobError):
    """A configuration key is missing, unknown or holds an invalid value."""
