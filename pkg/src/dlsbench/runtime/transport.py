"""Message transports between the master and its workers.

Both backends expose the same four-call surface; the in-process backend
moves Message objects through queues while the local-socket backend pushes
the binary wire frames over loopback TCP.  Workers run as threads of the
host process in either case: the socket backend exists to exercise the wire
format and to keep the protocol open to out-of-process workers.
"""

from __future__ import annotations

import queue
import socket
import threading

from .messages import FRAME_PAYLOAD_SIZE, Message, decode_frame, encode_frame

__all__ = ["InProcessTransport", "LocalSocketTransport", "TransportError", "make_transport"]

_POLL_SECONDS = 0.05


class TransportError(RuntimeError):
    pass


class InProcessTransport:
    """Queue-per-rank message passing inside one process."""

    name = "in-process"

    def __init__(self, ranks: int):
        self.ranks = ranks
        self._master_inbox: queue.Queue[Message] = queue.Queue()
        self._worker_inboxes = [queue.Queue() for _ in range(ranks)]

    def send_to_master(self, msg: Message) -> None:
        self._master_inbox.put(msg)

    def send_to_worker(self, rank: int, msg: Message) -> None:
        self._worker_inboxes[rank].put(msg)

    def recv_master(self, timeout: float | None = None) -> Message | None:
        try:
            return self._master_inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def recv_worker(self, rank: int, timeout: float | None = None) -> Message | None:
        try:
            return self._worker_inboxes[rank].get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        pass


class LocalSocketTransport:
    """Loopback TCP transport speaking the length-prefixed binary frames.

    The master listens on an ephemeral 127.0.0.1 port; each rank owns one
    connection.  Ranks are identified by the rank field of the first frame
    a connection delivers, so workers must speak before the master can
    address them (they always do: the protocol opens with a work request).
    """

    name = "local-socket"

    def __init__(self, ranks: int):
        self.ranks = ranks
        self._master_inbox: queue.Queue[Message] = queue.Queue()
        self._server_conns: dict[int, socket.socket] = {}
        self._conn_ready = [threading.Event() for _ in range(ranks)]
        self._closing = threading.Event()
        self._send_lock = threading.Lock()
        try:
            self._listener = socket.create_server(("127.0.0.1", 0))
        except OSError as exc:
            raise TransportError(f"cannot bind loopback listener: {exc}") from exc
        self._listener.settimeout(_POLL_SECONDS)
        self.address = self._listener.getsockname()
        self._reader_threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="dls-accept", daemon=True
        )
        self._accept_thread.start()
        self._worker_conns: list[socket.socket] = []
        self._worker_bufs = [bytearray() for _ in range(ranks)]
        try:
            for _ in range(ranks):
                conn = socket.create_connection(self.address, timeout=5.0)
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                conn.settimeout(_POLL_SECONDS)
                self._worker_conns.append(conn)
        except OSError as exc:
            self.close()
            raise TransportError(f"worker connection failed: {exc}") from exc

    # --- master side ---

    def _accept_loop(self) -> None:
        accepted = 0
        while accepted < self.ranks and not self._closing.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(_POLL_SECONDS)
            accepted += 1
            reader = threading.Thread(
                target=self._reader_loop, args=(conn,), name="dls-reader", daemon=True
            )
            reader.start()
            self._reader_threads.append(reader)

    def _reader_loop(self, conn: socket.socket) -> None:
        while not self._closing.is_set():
            payload = self._read_frame(conn)
            if payload is None:
                return
            msg = decode_frame(payload)
            if msg.rank not in self._server_conns:
                self._server_conns[msg.rank] = conn
                self._conn_ready[msg.rank].set()
            self._master_inbox.put(msg)

    def _read_frame(self, conn: socket.socket) -> bytes | None:
        header = self._read_exact(conn, 4)
        if header is None:
            return None
        length = int.from_bytes(header, "little")
        if length != FRAME_PAYLOAD_SIZE:
            raise TransportError(f"bad frame length {length}")
        return self._read_exact(conn, length)

    def _read_exact(self, conn: socket.socket, count: int) -> bytes | None:
        buf = b""
        while len(buf) < count:
            if self._closing.is_set():
                return None
            try:
                part = conn.recv(count - len(buf))
            except socket.timeout:
                continue
            except OSError:
                return None
            if not part:
                return None
            buf += part
        return buf

    def recv_master(self, timeout: float | None = None) -> Message | None:
        try:
            return self._master_inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def send_to_worker(self, rank: int, msg: Message) -> None:
        if not self._conn_ready[rank].wait(timeout=10.0):
            raise TransportError(f"rank {rank} never connected")
        with self._send_lock:
            self._server_conns[rank].sendall(encode_frame(msg))

    # --- worker side ---

    def send_to_master(self, msg: Message) -> None:
        self._worker_conns[msg.rank].sendall(encode_frame(msg))

    def recv_worker(self, rank: int, timeout: float | None = None) -> Message | None:
        # each rank's connection is read only by its own controller thread;
        # partial frames survive timeouts in the per-rank buffer
        conn = self._worker_conns[rank]
        buf = self._worker_bufs[rank]
        waited = 0.0
        while True:
            if len(buf) >= 4:
                length = int.from_bytes(buf[:4], "little")
                if length != FRAME_PAYLOAD_SIZE:
                    raise TransportError(f"bad frame length {length}")
                if len(buf) >= 4 + length:
                    payload = bytes(buf[4 : 4 + length])
                    del buf[: 4 + length]
                    return decode_frame(payload)
            if self._closing.is_set():
                return None
            try:
                part = conn.recv(4096)
                if not part:
                    return None
                buf += part
            except socket.timeout:
                waited += _POLL_SECONDS
                if timeout is not None and waited >= timeout:
                    return None
            except OSError:
                return None

    def close(self) -> None:
        self._closing.set()
        for conn in self._worker_conns:
            try:
                conn.close()
            except OSError:
                pass
        for conn in self._server_conns.values():
            try:
                conn.close()
            except OSError:
                pass
        try:
            self._listener.close()
        except OSError:
            pass


def make_transport(name: str, ranks: int):
    if name == "in-process":
        return InProcessTransport(ranks)
    if name == "local-socket":
        return LocalSocketTransport(ranks)
    raise ValueError(f"unknown transport {name!r} (in-process or local-socket)")
