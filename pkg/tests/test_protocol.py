import asyncio
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infergate.harness.protocol import (
    BadMagic,
    DecodeError,
    LengthMismatch,
    MalformedField,
    Request,
    Response,
    Status,
    Truncated,
    UnknownType,
    UnsupportedVersion,
    decode_message,
    encode_message,
    read_frame,
)

GOLDEN = bytes.fromhex("53 53 49 50 01 01 00 03 61 62 63 00 01 6D 00 00 00 04 00 00 00 00")

requests = st.builds(
    Request,
    token=st.binary(max_size=64),
    model=st.text(max_size=32),
    batch=st.integers(1, 2**32 - 1),
    payload=st.binary(max_size=256),
)
responses = st.builds(
    Response,
    status=st.sampled_from(list(Status)),
    queue_ns=st.integers(0, 2**64 - 1),
    compute_ns=st.integers(0, 2**64 - 1),
    payload=st.binary(max_size=256),
)


def random_message(rng: random.Random):
    if rng.random() < 0.5:
        name = "".join(rng.choice("abcxyz_-0é模") for _ in range(rng.randrange(20)))
        return Request(rng.randbytes(rng.randrange(40)), name, rng.randrange(1, 2**32), rng.randbytes(rng.randrange(100)))
    return Response(Status(rng.randrange(5)), rng.randrange(2**64), rng.randrange(2**64), rng.randbytes(rng.randrange(100)))


def test_golden_request_bytes():
    assert encode_message(Request(b"abc", "m", 4)) == GOLDEN
    assert decode_message(GOLDEN) == Request(b"abc", "m", 4)


def test_response_layout():
    frame = encode_message(Response(Status.RATE, 7, 9, b"x"))
    assert frame == b"SSIP\x01\x02\x02" + (7).to_bytes(8, "big") + (9).to_bytes(8, "big") + b"\x00\x00\x00\x01x"


@given(st.one_of(requests, responses))
def test_round_trip(msg):
    assert decode_message(encode_message(msg)) == msg


def test_round_trip_bulk():
    rng = random.Random(0)
    for _ in range(10_000):
        m = random_message(rng)
        assert decode_message(encode_message(m)) == m


class TestErrors:
    def test_bad_magic_first_byte(self):
        with pytest.raises(BadMagic):
            decode_message(b"\x00" + GOLDEN[1:])
        with pytest.raises(BadMagic):
            decode_message(b"\x00")

    def test_version(self):
        with pytest.raises(UnsupportedVersion):
            decode_message(GOLDEN[:4] + b"\x02" + GOLDEN[5:])

    def test_type(self):
        with pytest.raises(UnknownType):
            decode_message(GOLDEN[:5] + b"\x07" + GOLDEN[6:])

    @pytest.mark.parametrize("cut", range(len(GOLDEN)))
    def test_every_truncation(self, cut):
        with pytest.raises(Truncated):
            decode_message(GOLDEN[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(LengthMismatch):
            decode_message(GOLDEN + b"\x00")

    def test_declared_payload_longer_than_frame(self):
        bad = GOLDEN[:-4] + (5).to_bytes(4, "big") + b"ab"
        with pytest.raises(Truncated):
            decode_message(bad)

    def test_zero_batch(self):
        bad = GOLDEN[:14] + (0).to_bytes(4, "big") + GOLDEN[18:]
        with pytest.raises(MalformedField):
            decode_message(bad)

    def test_bad_status(self):
        frame = bytearray(encode_message(Response(Status.OK)))
        frame[6] = 9
        with pytest.raises(MalformedField):
            decode_message(bytes(frame))

    def test_distinct_classes(self):
        classes = {BadMagic, UnsupportedVersion, UnknownType, Truncated, LengthMismatch, MalformedField}
        assert len(classes) == 6
        assert all(issubclass(c, DecodeError) for c in classes)

    def test_encode_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            encode_message(Request(b"", "m", 0))
        with pytest.raises(ValueError):
            encode_message(Request(b"x" * 70_000, "m", 1))


@settings(max_examples=500)
@given(st.binary(max_size=80))
def test_fuzz_never_crashes(data):
    try:
        msg = decode_message(data)
    except DecodeError:
        return
    assert encode_message(msg) == data


@settings(max_examples=300)
@given(st.one_of(requests, responses), st.data())
def test_mutated_frames_never_crash(msg, data):
    frame = bytearray(encode_message(msg))
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(frame) - 1))
        frame[i] = data.draw(st.integers(0, 255))
    try:
        decode_message(bytes(frame))
    except DecodeError:
        pass


def test_read_frame_splits_stream():
    msgs = [Request(b"t", "m", 3, b"abc"), Response(Status.OK, 1, 2), Request(b"", "model", 1)]
    stream = b"".join(encode_message(m) for m in msgs)

    async def go():
        reader = asyncio.StreamReader()
        reader.feed_data(stream)
        reader.feed_eof()
        return [decode_message(await read_frame(reader)) for _ in msgs]

    assert asyncio.run(go()) == msgs


def test_read_frame_bad_magic():
    async def go():
        reader = asyncio.StreamReader()
        reader.feed_data(b"HTTP/1.1 200")
        reader.feed_eof()
        await read_frame(reader)

    with pytest.raises(BadMagic):
        asyncio.run(go())
