"""Minimal server-side WebSocket (RFC 6455) over a blocking socket.

Only what the gateway needs: the HTTP upgrade handshake, binary messages,
close, and ping/pong. One wire-protocol frame travels per message.
"""

import base64
import hashlib
import socket
import struct

from fhirgate.errors import SessionClosed

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_OP_CONT = 0x0
_OP_TEXT = 0x1
_OP_BINARY = 0x2
_OP_CLOSE = 0x8
_OP_PING = 0x9
_OP_PONG = 0xA


class HandshakeFailed(Exception):
    pass


def _recv_exact(conn: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        piece = conn.recv(min(n, 65536))
        if not piece:
            raise SessionClosed("peer closed during read")
        chunks.append(piece)
        n -= len(piece)
    return b"".join(chunks)


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def handshake(conn: socket.socket) -> str:
    """Perform the server side of the upgrade; returns the request path."""
    raw = b""
    while b"\r\n\r\n" not in raw:
        piece = conn.recv(4096)
        if not piece:
            raise HandshakeFailed("connection closed before request complete")
        raw += piece
        if len(raw) > 65536:
            raise HandshakeFailed("oversized upgrade request")
    head = raw.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    parts = lines[0].split(" ")
    if len(parts) != 3 or parts[0] != "GET":
        _refuse(conn, "400 Bad Request")
        raise HandshakeFailed("not a GET request")
    path = parts[1]
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    if headers.get("upgrade", "").lower() != "websocket":
        _refuse(conn, "400 Bad Request")
        raise HandshakeFailed("missing websocket upgrade header")
    key = headers.get("sec-websocket-key")
    if not key:
        _refuse(conn, "400 Bad Request")
        raise HandshakeFailed("missing sec-websocket-key")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    )
    conn.sendall(response.encode("latin-1"))
    return path


def _refuse(conn: socket.socket, status: str) -> None:
    try:
        conn.sendall(f"HTTP/1.1 {status}\r\nConnection: close\r\n\r\n".encode("latin-1"))
    except OSError:
        pass


def _read_frame(conn: socket.socket) -> tuple[int, bool, bytes]:
    b0, b1 = _recv_exact(conn, 2)
    fin = bool(b0 & 0x80)
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    length = b1 & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _recv_exact(conn, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _recv_exact(conn, 8))
    mask = _recv_exact(conn, 4) if masked else b""
    payload = _recv_exact(conn, length) if length else b""
    if masked and payload:
        payload = bytes(c ^ mask[i % 4] for i, c in enumerate(payload))
    return opcode, fin, payload


def recv_message(conn: socket.socket) -> bytes | None:
    """Next binary or text message as bytes; None once the peer closes."""
    assembled = b""
    while True:
        try:
            opcode, fin, payload = _read_frame(conn)
        except (SessionClosed, OSError):
            return None
        if opcode == _OP_CLOSE:
            try:
                conn.sendall(_pack_frame(_OP_CLOSE, payload[:2]))
            except OSError:
                pass
            return None
        if opcode == _OP_PING:
            conn.sendall(_pack_frame(_OP_PONG, payload))
            continue
        if opcode == _OP_PONG:
            continue
        if opcode in (_OP_BINARY, _OP_TEXT, _OP_CONT):
            assembled += payload
            if fin:
                return assembled


def _pack_frame(opcode: int, payload: bytes) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 65536:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


def send_message(conn: socket.socket, data: bytes) -> None:
    conn.sendall(_pack_frame(_OP_BINARY, data))


def send_close(conn: socket.socket) -> None:
    try:
        conn.sendall(_pack_frame(_OP_CLOSE, struct.pack(">H", 1000)))
    except OSError:
        pass
