"""Reliable ordered byte streams: an in-process pipe pair and TCP.

Both expose ``send_bytes(data)``, ``recv_exact(n)`` and ``close()``; the
frame codec only needs those three.
"""

import queue
import socket
import time

from ..errors import TransportError

DEFAULT_TIMEOUT = 60.0
_EOF = None


class _Endpoint:
    def __init__(self, inbox, outbox, timeout):
        self._inbox = inbox
        self._outbox = outbox
        self._buf = bytearray()
        self._closed = False
        self.timeout = timeout

    def send_bytes(self, data):
        if self._closed:
            raise TransportError("send on closed transport")
        self._outbox.put(bytes(data))

    def recv_exact(self, n):
        while len(self._buf) < n:
            try:
                chunk = self._inbox.get(timeout=self.timeout)
            except queue.Empty:
                raise TransportError(f"no data within {self.timeout}s") from None
            if chunk is _EOF:
                self._inbox.put(_EOF)
                raise TransportError("peer closed the stream")
            self._buf += chunk
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def close(self):
        if not self._closed:
            self._closed = True
            self._outbox.put(_EOF)


def inproc_pair(timeout=DEFAULT_TIMEOUT):
    """Two connected in-process endpoints."""
    a_to_b, b_to_a = queue.Queue(), queue.Queue()
    return _Endpoint(b_to_a, a_to_b, timeout), _Endpoint(a_to_b, b_to_a, timeout)


class TcpTransport:
    def __init__(self, sock, timeout=DEFAULT_TIMEOUT):
        self.sock = sock
        self.sock.settimeout(timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send_bytes(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_exact(self, n):
        parts = bytearray()
        while len(parts) < n:
            try:
                chunk = self.sock.recv(n - len(parts))
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            parts += chunk
        return bytes(parts)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpListener:
    """Bound listening socket; ``port=0`` picks a free port (see ``.port``)."""

    def __init__(self, host="127.0.0.1", port=0, timeout=DEFAULT_TIMEOUT):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(1)
        self.sock.settimeout(timeout)
        self.timeout = timeout

    @property
    def port(self):
        return self.sock.getsockname()[1]

    def accept(self):
        try:
            conn, _ = self.sock.accept()
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        return TcpTransport(conn, self.timeout)

    def close(self):
        self.sock.close()


def tcp_connect(host, port, timeout=DEFAULT_TIMEOUT, retries=50, delay=0.1):
    last = None
    for _ in range(retries):
        try:
            return TcpTransport(socket.create_connection((host, port), timeout=timeout), timeout)
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise TransportError(f"could not connect to {host}:{port}: {last}")
