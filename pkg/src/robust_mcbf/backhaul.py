"""Broadcast of local ICI vectors between BS agents.

Wire format of one :class:`IciMessage` (all little endian)::

    u32 frame length (bytes that follow)
    u8  protocol version
    u32 iteration q
    u16 sender BS id
    u32 vector length L
    L x f64 payload
    u32 CRC32 of everything above

The 15-byte header plus 4-byte trailer give ``19 + 8 L`` bytes per message.
Two transports share this format: an in-process loopback bus and a TCP hub
that relays every frame to every connected agent.
"""

import os
import socket
import struct
import threading
import zlib
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import CorruptMessage, InvalidInput, ProtocolError, RoundTimeout

VERSION = 1
HEADER = struct.Struct("<IBIHI")
TRAILER = struct.Struct("<I")
HEADER_BYTES = HEADER.size  # 15
TRAILER_BYTES = TRAILER.size  # 4


def message_bytes(length):
    return HEADER_BYTES + 8 * length + TRAILER_BYTES


def round_bytes(Nc, K):
    """Bytes put on the backhaul per ADMM round."""
    return Nc * message_bytes(Nc * K)


@dataclass(frozen=True)
class IciMessage:
    q: int
    sender: int
    payload: np.ndarray
    version: int = VERSION

    def encode(self):
        data = np.ascontiguousarray(self.payload, dtype="<f8")
        body_len = HEADER_BYTES - 4 + data.nbytes + TRAILER_BYTES
        head = HEADER.pack(body_len, self.version, self.q, self.sender, data.size)
        frame = head + data.tobytes()
        return frame + TRAILER.pack(zlib.crc32(frame) & 0xFFFFFFFF)

    @classmethod
    def decode(cls, frame):
        if len(frame) < HEADER_BYTES + TRAILER_BYTES:
            raise CorruptMessage(f"frame of {len(frame)} bytes is too short")
        body_len, version, q, sender, length = HEADER.unpack_from(frame)
        if body_len != len(frame) - 4 or len(frame) != message_bytes(length):
            raise CorruptMessage("frame length does not match header")
        (crc,) = TRAILER.unpack_from(frame, len(frame) - TRAILER_BYTES)
        if zlib.crc32(frame[:-TRAILER_BYTES]) & 0xFFFFFFFF != crc:
            raise CorruptMessage(f"checksum mismatch (q={q}, sender={sender})")
        if version != VERSION:
            raise ProtocolError(f"unsupported protocol version {version}")
        payload = np.frombuffer(frame, dtype="<f8", count=length, offset=HEADER_BYTES).astype(float)
        return cls(q, sender, payload, version)


class _Inbox:
    """Per-agent message store with the round barrier."""

    def __init__(self):
        self.cond = threading.Condition()
        self.rounds = defaultdict(dict)
        self.error = None

    def put_frame(self, frame):
        try:
            msg = IciMessage.decode(frame)
        except Exception as exc:  # surfaced on the next gather
            with self.cond:
                self.error = exc
                self.cond.notify_all()
            return
        with self.cond:
            if msg.sender in self.rounds[msg.q]:
                self.error = ProtocolError(f"duplicate message from {msg.sender} in round {msg.q}")
            else:
                self.rounds[msg.q][msg.sender] = msg
            self.cond.notify_all()

    def gather(self, q, expected, timeout):
        expected = set(expected)
        with self.cond:
            ok = self.cond.wait_for(
                lambda: self.error is not None or expected <= set(self.rounds[q]), timeout)
            if self.error is not None:
                err, self.error = self.error, None
                raise err
            if not ok:
                raise RoundTimeout(q, expected - set(self.rounds[q]))
            got = self.rounds.pop(q)
        return [got[s] for s in sorted(expected)]


class Endpoint:
    """One agent's view of the backhaul."""

    def __init__(self, bs, send, inbox, stats):
        self.bs = bs
        self._send = send
        self._inbox = inbox
        self._stats = stats

    def broadcast(self, msg):
        if msg.sender != self.bs:
            raise ProtocolError(f"agent {self.bs} cannot send as {msg.sender}")
        frame = msg.encode()
        self._stats.record(msg.q, len(frame), msg.payload.size)
        self._send(frame)

    def gather(self, q, expected, timeout=30.0):
        return self._inbox.gather(q, expected, timeout)


class TrafficStats:
    """Bytes and real scalars sent per round (each broadcast counted once)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes = defaultdict(int)
        self.scalars = defaultdict(int)

    def record(self, q, nbytes, nscalars):
        with self._lock:
            self.bytes[q] += nbytes
            self.scalars[q] += nscalars


class LoopbackTransport:
    """In-process bus; messages still travel as encoded bytes."""

    name = "loopback"

    def __init__(self, Nc):
        self.Nc = Nc
        self.stats = TrafficStats()
        self.wire = TrafficStats()
        self._inboxes = [_Inbox() for _ in range(Nc)]
        self._corrupt = None

    def _deliver(self, frame):
        (_, _, q, _, length) = HEADER.unpack_from(frame)
        self.wire.record(q, len(frame), length)
        if self._corrupt is not None:
            frame = self._corrupt(frame)
        for box in self._inboxes:
            box.put_frame(bytes(frame))

    def endpoint(self, bs):
        return Endpoint(bs, self._deliver, self._inboxes[bs], self.stats)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def _read_frame(sock):
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (body_len,) = struct.unpack("<I", head)
    body = _recv_exact(sock, body_len)
    if body is None:
        return None
    return head + body


class TcpHub:
    """Relay: every frame received from an agent is forwarded to all agents."""

    def __init__(self, Nc, host="127.0.0.1", port=0):
        self.Nc = Nc
        self.wire = TrafficStats()
        self._srv = socket.create_server((host, port))
        self.address = self._srv.getsockname()
        self._conns = []
        self._lock = threading.Lock()
        self._ready = threading.Event()
        self._threads = []
        threading.Thread(target=self._accept, daemon=True).start()

    def _accept(self):
        while len(self._conns) < self.Nc:
            try:
                conn, _ = self._srv.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.append(conn)
            t = threading.Thread(target=self._relay, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)
        self._ready.set()

    def wait_ready(self, timeout=10.0):
        if not self._ready.wait(timeout):
            raise RoundTimeout(-1, set(range(len(self._conns), self.Nc)))

    def _relay(self, conn):
        while True:
            try:
                frame = _read_frame(conn)
            except OSError:
                return
            if frame is None:
                return
            if len(frame) >= HEADER_BYTES:
                (_, _, q, _, length) = HEADER.unpack_from(frame)
                self.wire.record(q, len(frame), length)
            with self._lock:
                for c in self._conns:
                    try:
                        c.sendall(frame)
                    except OSError:
                        pass

    def close(self):
        self._srv.close()
        with self._lock:
            for c in self._conns:
                try:
                    c.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                c.close()


class _TcpLink:
    def __init__(self, address):
        self.sock = socket.create_connection(address)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.inbox = _Inbox()
        self._lock = threading.Lock()
        threading.Thread(target=self._reader, daemon=True).start()

    def _reader(self):
        while True:
            try:
                frame = _read_frame(self.sock)
            except OSError:
                return
            if frame is None:
                return
            self.inbox.put_frame(frame)

    def send(self, frame):
        with self._lock:
            self.sock.sendall(frame)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpTransport:
    """A hub plus one TCP connection per agent over local sockets."""

    name = "tcp"

    def __init__(self, Nc, host="127.0.0.1", port=0):
        self.Nc = Nc
        self.hub = TcpHub(Nc, host, port)
        self.stats = TrafficStats()
        self._links = [_TcpLink(self.hub.address) for _ in range(Nc)]
        self.hub.wait_ready()

    @property
    def wire(self):
        return self.hub.wire

    def endpoint(self, bs):
        link = self._links[bs]
        return Endpoint(bs, link.send, link.inbox, self.stats)

    def close(self):
        for link in self._links:
            link.close()
        self.hub.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_transport(kind, Nc, port=0):
    """``kind`` is 'loopback', 'tcp' or None (read ``ROBUST_MCBF_TRANSPORT``)."""
    kind = kind or os.environ.get("ROBUST_MCBF_TRANSPORT", "loopback")
    if kind == "loopback":
        return LoopbackTransport(Nc)
    if kind == "tcp":
        return TcpTransport(Nc, port=port)
    raise InvalidInput(f"unknown transport {kind!r}")
