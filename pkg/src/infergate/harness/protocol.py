"""Binary wire protocol between clients and the gateway.

All integers are big-endian.

Request:  "SSIP" | version u8 | type u8 = 1 | token_len u16 | token
          | name_len u16 | model name (UTF-8) | batch u32 | payload_len u32 | payload
Response: "SSIP" | version u8 | type u8 = 2 | status u8 | queue_ns u64
          | compute_ns u64 | payload_len u32 | payload
"""
from __future__ import annotations

import asyncio
import struct
from dataclasses import dataclass
from enum import IntEnum

from ..core.types import Outcome

MAGIC = b"SSIP"
VERSION = 1
TYPE_REQUEST = 1
TYPE_RESPONSE = 2
MAX_PAYLOAD = 16 * 1024 * 1024

_HEAD = struct.Struct(">4sBB")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_RESP_BODY = struct.Struct(">BQQI")


class Status(IntEnum):
    OK = 0
    AUTH = 1
    RATE = 2
    CAPACITY = 3
    NO_BACKEND = 4


STATUS_FOR_OUTCOME = {
    Outcome.OK: Status.OK,
    Outcome.REJECTED_AUTH: Status.AUTH,
    Outcome.REJECTED_RATE: Status.RATE,
    Outcome.REJECTED_CAPACITY: Status.CAPACITY,
    Outcome.NO_BACKEND: Status.NO_BACKEND,
}
OUTCOME_FOR_STATUS = {v: k for k, v in STATUS_FOR_OUTCOME.items()}


class DecodeError(ValueError):
    pass


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class Truncated(DecodeError):
    """The buffer ends before the frame its length fields declare."""


class LengthMismatch(DecodeError):
    """Bytes remain after the declared frame, or a length exceeds its bound."""


class MalformedField(DecodeError):
    pass


@dataclass(frozen=True)
class Request:
    token: bytes
    model: str
    batch: int
    payload: bytes = b""


@dataclass(frozen=True)
class Response:
    status: Status
    queue_ns: int = 0
    compute_ns: int = 0
    payload: bytes = b""


Message = Request | Response


def encode_message(msg: Message) -> bytes:
    if isinstance(msg, Request):
        name = msg.model.encode("utf-8")
        if len(msg.token) > 0xFFFF or len(name) > 0xFFFF:
            raise ValueError("token and model name are limited to 65535 bytes")
        if not 1 <= msg.batch <= 0xFFFFFFFF:
            raise ValueError("batch must fit u32 and be >= 1")
        if len(msg.payload) > MAX_PAYLOAD:
            raise ValueError("payload too large")
        return b"".join(
            (
                _HEAD.pack(MAGIC, VERSION, TYPE_REQUEST),
                _U16.pack(len(msg.token)),
                msg.token,
                _U16.pack(len(name)),
                name,
                _U32.pack(msg.batch),
                _U32.pack(len(msg.payload)),
                msg.payload,
            )
        )
    if isinstance(msg, Response):
        if len(msg.payload) > MAX_PAYLOAD:
            raise ValueError("payload too large")
        return (
            _HEAD.pack(MAGIC, VERSION, TYPE_RESPONSE)
            + _RESP_BODY.pack(int(msg.status), msg.queue_ns, msg.compute_ns, len(msg.payload))
            + msg.payload
        )
    raise TypeError(f"cannot encode {type(msg).__name__}")


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise Truncated(f"need {end} bytes, frame has {len(self.buf)}")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def unpack(self, s: struct.Struct) -> tuple:
        return s.unpack(self.take(s.size))


def _check_head(r: _Reader) -> int:
    prefix = r.buf[:4]
    if prefix != MAGIC[: len(prefix)]:
        raise BadMagic(f"bad magic {prefix!r}")
    _, version, mtype = r.unpack(_HEAD)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if mtype not in (TYPE_REQUEST, TYPE_RESPONSE):
        raise UnknownType(f"message type {mtype}")
    return mtype


def decode_message(data: bytes) -> Message:
    """Decode exactly one frame; never reads beyond `data`."""
    r = _Reader(bytes(data))
    mtype = _check_head(r)
    if mtype == TYPE_REQUEST:
        (tlen,) = r.unpack(_U16)
        token = r.take(tlen)
        (nlen,) = r.unpack(_U16)
        raw_name = r.take(nlen)
        batch, plen = r.unpack(struct.Struct(">II"))
        if plen > MAX_PAYLOAD:
            raise LengthMismatch(f"payload_len {plen} exceeds limit")
        payload = r.take(plen)
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedField("model name is not UTF-8") from None
        if batch < 1:
            raise MalformedField("batch must be >= 1")
        msg: Message = Request(token, name, batch, payload)
    else:
        status, queue_ns, compute_ns, plen = r.unpack(_RESP_BODY)
        if plen > MAX_PAYLOAD:
            raise LengthMismatch(f"payload_len {plen} exceeds limit")
        payload = r.take(plen)
        try:
            st = Status(status)
        except ValueError:
            raise MalformedField(f"status {status}") from None
        msg = Response(st, queue_ns, compute_ns, payload)
    if r.pos != len(r.buf):
        raise LengthMismatch(f"{len(r.buf) - r.pos} bytes beyond declared frame")
    return msg


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    """Read one complete frame from a stream, using its length fields."""
    head = await reader.readexactly(_HEAD.size)
    magic, version, mtype = _HEAD.unpack(head)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    parts = [head]
    if mtype == TYPE_REQUEST:
        for _ in range(2):
            raw = await reader.readexactly(2)
            parts += [raw, await reader.readexactly(_U16.unpack(raw)[0])]
        tail = await reader.readexactly(8)
        plen = _U32.unpack(tail[4:])[0]
    elif mtype == TYPE_RESPONSE:
        tail = await reader.readexactly(_RESP_BODY.size)
        plen = _U32.unpack(tail[-4:])[0]
    else:
        raise UnknownType(f"message type {mtype}")
    if plen > MAX_PAYLOAD:
        raise LengthMismatch(f"payload_len {plen} exceeds limit")
    parts += [tail, await reader.readexactly(plen)]
    return b"".join(parts)
