"""
Length-prefixed binary wire format shared by every protocol message.

Frame layout (all integers big-endian):

    u32 total_length | u8 version | u8 msg_type | body

`total_length` counts the whole frame including itself. Variable-size fields
inside a body are `u32 length | bytes`. Scalars are written at the backend's
fixed scalar width and group elements with the backend encoding, so a digest
computed over an encoded field is reproducible bit for bit.

Message classes live next to the protocol that uses them and register
themselves with `register`; `decode` dispatches on the type byte.
"""
from __future__ import annotations

import struct
from enum import IntEnum
from typing import Callable, Protocol

from src.core.errors import WireFormatError
from src.models.group import GroupBackend, GroupElement, Scalar

VERSION = 1
_HEADER = struct.Struct(">IBB")


class MsgType(IntEnum):
    AUTH_REQUEST = 1
    AUTH_SHARE = 2
    AUTH_RESULT = 3
    TOKEN = 4
    TOKEN_RECORD = 5
    XDOMAIN_REQUEST = 6
    PBFT = 10
    CLIENT_REQUEST = 11
    GOSSIP = 20
    PROBE = 21
    PROBE_ACK = 22
    ACCESS_REQUEST = 30
    ACCESS_SHARE = 31
    ACCESS_RESULT = 32
    ITEM = 33


class WireMessage(Protocol):
    MSG_TYPE: MsgType

    def encode(self, group: GroupBackend | None = None) -> bytes: ...


class FieldWriter:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> FieldWriter:
        self._parts.append(struct.pack(">B", v))
        return self

    def u32(self, v: int) -> FieldWriter:
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> FieldWriter:
        self._parts.append(struct.pack(">Q", v))
        return self

    def f64(self, v: float) -> FieldWriter:
        self._parts.append(struct.pack(">d", v))
        return self

    def fixed(self, data: bytes, width: int) -> FieldWriter:
        if len(data) != width:
            raise WireFormatError(f"Fixed field expects {width} bytes, got {len(data)}")
        self._parts.append(data)
        return self

    def blob(self, data: bytes) -> FieldWriter:
        self._parts.append(struct.pack(">I", len(data)))
        self._parts.append(data)
        return self

    def scalar(self, group: GroupBackend, s: Scalar) -> FieldWriter:
        self._parts.append(group.encode_scalar(s))
        return self

    def element(self, group: GroupBackend, el: GroupElement) -> FieldWriter:
        self._parts.append(group.encode_element(el))
        return self

    def build(self) -> bytes:
        return b"".join(self._parts)


class FieldReader:
    def __init__(self, body: bytes):
        self._body = body
        self._pos = 0

    def _take(self, width: int) -> bytes:
        end = self._pos + width
        if end > len(self._body):
            raise WireFormatError(f"Truncated body: need {width} bytes at offset {self._pos}")
        chunk = self._body[self._pos:end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def fixed(self, width: int) -> bytes:
        return self._take(width)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def scalar(self, group: GroupBackend) -> Scalar:
        try:
            return group.decode_scalar(self._take(group.scalar_width))
        except ValueError as e:
            raise WireFormatError(str(e)) from e

    def element(self, group: GroupBackend) -> GroupElement:
        try:
            return group.decode_element(self._take(group.element_width))
        except ValueError as e:
            raise WireFormatError(str(e)) from e

    def done(self):
        if self._pos != len(self._body):
            raise WireFormatError(f"{len(self._body) - self._pos} trailing bytes in body")


def frame(msg_type: MsgType, body: bytes) -> bytes:
    return _HEADER.pack(_HEADER.size + len(body), VERSION, int(msg_type)) + body


def unframe(data: bytes) -> tuple[MsgType, bytes]:
    if len(data) < _HEADER.size:
        raise WireFormatError("Frame shorter than its header")
    total, version, raw_type = _HEADER.unpack_from(data)
    if total != len(data):
        raise WireFormatError(f"Length prefix {total} does not match frame size {len(data)}")
    if version != VERSION:
        raise WireFormatError(f"Unsupported wire version {version}")
    try:
        msg_type = MsgType(raw_type)
    except ValueError:
        raise WireFormatError(f"Unknown message type {raw_type}")
    return msg_type, data[_HEADER.size:]


_DECODERS: dict[MsgType, Callable[[FieldReader, GroupBackend | None], object]] = {}


def register(cls):
    """Class decorator: records `cls.decode_body` as the decoder for `cls.MSG_TYPE`."""
    _DECODERS[cls.MSG_TYPE] = cls.decode_body
    return cls


def decode(data: bytes, group: GroupBackend | None = None):
    msg_type, body = unframe(data)
    decoder = _DECODERS.get(msg_type)
    if decoder is None:
        raise WireFormatError(f"No decoder registered for {msg_type.name}")
    reader = FieldReader(body)
    message = decoder(reader, group)
    reader.done()
    return message
