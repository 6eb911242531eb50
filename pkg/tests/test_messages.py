"""Wire format: golden frames, round-trips, size contract."""

import struct

import pytest

from dlsbench.runtime.messages import (
    FRAME_PAYLOAD_SIZE,
    Message,
    MessageKind,
    decode_frame,
    encode_frame,
)


def test_payload_is_37_bytes():
    assert FRAME_PAYLOAD_SIZE == 37


def test_golden_work_request_frame():
    frame = encode_frame(Message.work_request(3))
    # u32 length, u8 kind=0, u32 rank=3, zeros for the rest
    assert frame == b"\x25\x00\x00\x00" + b"\x00" + b"\x03\x00\x00\x00" + b"\x00" * 32


def test_golden_assignment_frame():
    frame = encode_frame(Message.work_assignment(1, start=0x0102030405, size=7))
    expect = (
        b"\x25\x00\x00\x00"  # length 37
        + b"\x01"  # kind
        + b"\x01\x00\x00\x00"  # rank 1
        + b"\x05\x04\x03\x02\x01\x00\x00\x00"  # start little-endian
        + b"\x07\x00\x00\x00\x00\x00\x00\x00"  # size
        + b"\x00" * 16
    )
    assert frame == expect


def test_golden_report_times_are_f64_le():
    msg = Message.completion_report(2, 10, 20, exec_time=1.5, sched_time=0.25)
    frame = encode_frame(msg)
    assert frame[4 + 21 : 4 + 29] == struct.pack("<d", 1.5)
    assert frame[4 + 29 : 4 + 37] == struct.pack("<d", 0.25)


@pytest.mark.parametrize(
    "msg",
    [
        Message.work_request(0),
        Message.work_assignment(4, 123456789, 42),
        Message.terminate(7),
        Message.completion_report(2, 999, 1000, 0.125, 3.75),
    ],
)
def test_roundtrip(msg):
    frame = encode_frame(msg)
    assert int.from_bytes(frame[:4], "little") == FRAME_PAYLOAD_SIZE
    assert decode_frame(frame[4:]) == msg


def test_decode_rejects_bad_length():
    with pytest.raises(ValueError):
        decode_frame(b"\x00" * 5)


def test_kind_values_are_stable():
    assert [k.value for k in MessageKind] == [0, 1, 2, 3]
