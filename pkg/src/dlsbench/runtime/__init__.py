from .dispenser import SubChunk, ThreadDispenser
from .messages import Message, MessageKind, decode_frame, encode_frame
from .runner import (
    RunPlan,
    RunResult,
    RuntimeHandle,
    WorkerCrash,
    setup,
    thread_schedule_from_env,
)
from .transport import InProcessTransport, LocalSocketTransport, TransportError, make_transport

__all__ = [
    "InProcessTransport",
    "LocalSocketTransport",
    "Message",
    "MessageKind",
    "RunPlan",
    "RunResult",
    "RuntimeHandle",
    "SubChunk",
    "ThreadDispenser",
    "TransportError",
    "WorkerCrash",
    "decode_frame",
    "encode_frame",
    "make_transport",
    "setup",
    "thread_schedule_from_env",
]
