"""Test-side TCP and WebSocket clients speaking the gateway's frame protocol.

The WebSocket implementation here is intentionally independent of the
server's: handshake, masking, and frame parsing are written from the RFC
so both ends get exercised for real.
"""

import base64
import hashlib
import os
import socket
import struct

from fhirgate.canonical import canonical_json
from fhirgate.errors import Truncated
from fhirgate.gateway.framing import Frame, decode_frame, encode_frame

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class TcpFrameClient:
    def __init__(self, port, host="127.0.0.1", timeout=10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.buf = b""
        self.received = []  # every raw byte ever read, for instrumentation

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def send_frame(self, msg_type: int, doc=None, payload: bytes | None = None):
        if payload is None:
            payload = canonical_json(doc if doc is not None else {})
        self.send_raw(encode_frame(msg_type, payload))

    def recv_frame(self) -> Frame | None:
        """Next frame, or None once the server closes the connection."""
        while True:
            try:
                frame, self.buf = decode_frame(self.buf)
                return frame
            except Truncated:
                pass
            try:
                data = self.sock.recv(65536)
            except (TimeoutError, OSError):
                return None
            if not data:
                return None
            self.received.append(data)
            self.buf += data

    def hello(self, device_id="aa:bb:cc:dd:ee:01"):
        self.send_frame(0x01, {"device_id": device_id, "client_version": "test"})
        return self.recv_frame()

    def request(self, msg_type: int, doc=None) -> Frame | None:
        self.send_frame(msg_type, doc)
        return self.recv_frame()

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class WsFrameClient:
    def __init__(self, port, host="127.0.0.1", path="/ws", timeout=10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.received = []
        self._message_buf = b""
        key = base64.b64encode(os.urandom(16)).decode("ascii")
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        self.sock.sendall(request.encode("latin-1"))
        raw = b""
        while b"\r\n\r\n" not in raw:
            piece = self.sock.recv(4096)
            if not piece:
                raise ConnectionError("closed during handshake")
            raw += piece
        head, _, leftover = raw.partition(b"\r\n\r\n")
        status = head.split(b"\r\n")[0]
        if b"101" not in status:
            raise ConnectionError(f"handshake refused: {status!r}")
        expected = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()).decode("ascii")
        accept = next((line.split(b":", 1)[1].strip().decode("ascii")
                       for line in head.split(b"\r\n")
                       if line.lower().startswith(b"sec-websocket-accept")), None)
        if accept != expected:
            raise ConnectionError("bad Sec-WebSocket-Accept")
        self._message_buf = leftover

    def _recv_exact(self, n: int) -> bytes:
        while len(self._message_buf) < n:
            piece = self.sock.recv(65536)
            if not piece:
                raise ConnectionError("closed mid-frame")
            self.received.append(piece)
            self._message_buf += piece
        out, self._message_buf = self._message_buf[:n], self._message_buf[n:]
        return out

    def send_message(self, data: bytes):
        # clients must mask (RFC 6455 section 5.3)
        mask = os.urandom(4)
        masked = bytes(c ^ mask[i % 4] for i, c in enumerate(data))
        n = len(data)
        if n < 126:
            head = bytes([0x82, 0x80 | n])
        elif n < 65536:
            head = bytes([0x82, 0x80 | 126]) + struct.pack(">H", n)
        else:
            head = bytes([0x82, 0x80 | 127]) + struct.pack(">Q", n)
        self.sock.sendall(head + mask + masked)

    def recv_message(self) -> bytes | None:
        assembled = b""
        while True:
            try:
                b0, b1 = self._recv_exact(2)
            except (ConnectionError, TimeoutError, OSError):
                return None
            fin, opcode = bool(b0 & 0x80), b0 & 0x0F
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack(">H", self._recv_exact(2))
            elif length == 127:
                (length,) = struct.unpack(">Q", self._recv_exact(8))
            payload = self._recv_exact(length) if length else b""
            if opcode == 0x8:
                return None
            if opcode == 0x9:
                self.sock.sendall(bytes([0x8A, 0x80]) + os.urandom(4))
                continue
            if opcode == 0xA:
                continue
            assembled += payload
            if fin:
                return assembled

    def send_frame(self, msg_type: int, doc=None, payload: bytes | None = None):
        if payload is None:
            payload = canonical_json(doc if doc is not None else {})
        self.send_message(encode_frame(msg_type, payload))

    def recv_frame(self) -> Frame | None:
        message = self.recv_message()
        if message is None:
            return None
        frame, rest = decode_frame(message)
        assert not rest, "server sent more than one frame per message"
        return frame

    def hello(self, device_id="aa:bb:cc:dd:ee:01"):
        self.send_frame(0x01, {"device_id": device_id, "client_version": "test"})
        return self.recv_frame()

    def request(self, msg_type: int, doc=None) -> Frame | None:
        self.send_frame(msg_type, doc)
        return self.recv_frame()

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
