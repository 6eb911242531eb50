"""Master/worker protocol messages and their binary wire format.

Frames are length-prefixed little-endian: a u32 payload length, then the
37-byte payload ``u8 kind, u32 rank, u64 start, u64 size, f64 exec_time,
f64 sched_time``.  The encoding is bit-exact so workers written in other
languages can interoperate over the socket transport.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

__all__ = ["Message", "MessageKind", "decode_frame", "encode_frame", "FRAME_PAYLOAD_SIZE"]

_PAYLOAD = struct.Struct("<BIQQdd")
_LENGTH = struct.Struct("<I")

FRAME_PAYLOAD_SIZE = _PAYLOAD.size  # 37 bytes


class MessageKind(enum.IntEnum):
    WORK_REQUEST = 0
    WORK_ASSIGNMENT = 1
    TERMINATE = 2
    COMPLETION_REPORT = 3


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    rank: int
    start: int = 0
    size: int = 0
    exec_time: float = 0.0
    sched_time: float = 0.0

    @classmethod
    def work_request(cls, rank: int) -> "Message":
        return cls(MessageKind.WORK_REQUEST, rank)

    @classmethod
    def work_assignment(cls, rank: int, start: int, size: int) -> "Message":
        return cls(MessageKind.WORK_ASSIGNMENT, rank, start, size)

    @classmethod
    def terminate(cls, rank: int) -> "Message":
        return cls(MessageKind.TERMINATE, rank)

    @classmethod
    def completion_report(
        cls, rank: int, start: int, size: int, exec_time: float, sched_time: float
    ) -> "Message":
        return cls(MessageKind.COMPLETION_REPORT, rank, start, size, exec_time, sched_time)


def encode_frame(msg: Message) -> bytes:
    payload = _PAYLOAD.pack(
        int(msg.kind), msg.rank, msg.start, msg.size, msg.exec_time, msg.sched_time
    )
    return _LENGTH.pack(len(payload)) + payload


def decode_frame(payload: bytes) -> Message:
    if len(payload) != FRAME_PAYLOAD_SIZE:
        raise ValueError(f"expected {FRAME_PAYLOAD_SIZE}-byte payload, got {len(payload)}")
    kind, rank, start, size, exec_time, sched_time = _PAYLOAD.unpack(payload)
    return Message(MessageKind(kind), rank, start, size, exec_time, sched_time)
