"""Minimal WebSocket (RFC 6455) text-frame transport over stdlib sockets.

Covers exactly what the teleop bridge needs: HTTP upgrade handshake, masked
client frames, unmasked server frames, ping/pong, close. No extensions, no
fragmentation of outgoing messages; incoming fragmented messages are
reassembled. Browser clients interoperate since this is the standard wire
format.
"""
from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT, OP_TEXT, OP_BIN, OP_CLOSE, OP_PING, OP_PONG = 0x0, 0x1, 0x2, 0x8, 0x9, 0xA


class SocketClosed(ConnectionError):
    pass


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        part = sock.recv(n - len(buf))
        if not part:
            raise SocketClosed("peer closed the connection")
        buf += part
    return buf


def _read_until(sock: socket.socket, marker: bytes, limit: int = 65536) -> bytes:
    # byte-wise read: never consumes frame bytes pipelined after the marker
    buf = b""
    while not buf.endswith(marker):
        if len(buf) > limit:
            raise ConnectionError("handshake too large")
        part = sock.recv(1)
        if not part:
            raise SocketClosed("peer closed during handshake")
        buf += part
    return buf


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def server_handshake(conn: socket.socket) -> None:
    """Answer an HTTP upgrade request on a freshly accepted connection."""
    request = _read_until(conn, b"\r\n\r\n").decode("latin-1")
    key = None
    for line in request.split("\r\n"):
        if ":" in line:
            name, _, value = line.partition(":")
            if name.strip().lower() == "sec-websocket-key":
                key = value.strip()
    if key is None:
        conn.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        raise ConnectionError("not a websocket upgrade request")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n"
    )
    conn.sendall(response.encode("latin-1"))


def client_handshake(sock: socket.socket, host: str, port: int, path: str = "/") -> None:
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode("latin-1"))
    response = _read_until(sock, b"\r\n\r\n").decode("latin-1")
    if "101" not in response.split("\r\n")[0]:
        raise ConnectionError(f"upgrade refused: {response.splitlines()[0]}")
    want = accept_key(key)
    if f"Sec-WebSocket-Accept: {want}".lower() not in response.lower():
        raise ConnectionError("bad Sec-WebSocket-Accept")


def _encode_frame(opcode: int, payload: bytes, mask: bool) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if n < 126:
        head += bytes([mask_bit | n])
    elif n < 65536:
        head += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        head += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return head + key + masked
    return head + payload


def send_text(sock: socket.socket, text: str, mask: bool = False) -> None:
    sock.sendall(_encode_frame(OP_TEXT, text.encode("utf-8"), mask))


def send_close(sock: socket.socket, mask: bool = False) -> None:
    try:
        sock.sendall(_encode_frame(OP_CLOSE, b"", mask))
    except OSError:
        pass


def recv_message(sock: socket.socket) -> tuple[int, bytes]:
    """Next complete message as (opcode, payload); answers pings internally."""
    message = b""
    message_op = None
    while True:
        b1, b2 = _read_exact(sock, 2)
        opcode = b1 & 0x0F
        masked = bool(b2 & 0x80)
        n = b2 & 0x7F
        if n == 126:
            (n,) = struct.unpack(">H", _read_exact(sock, 2))
        elif n == 127:
            (n,) = struct.unpack(">Q", _read_exact(sock, 8))
        key = _read_exact(sock, 4) if masked else None
        payload = _read_exact(sock, n) if n else b""
        if key:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        if opcode == OP_PING:
            sock.sendall(_encode_frame(OP_PONG, payload, mask=False))
            continue
        if opcode == OP_PONG:
            continue
        if opcode == OP_CLOSE:
            return OP_CLOSE, payload
        if opcode in (OP_TEXT, OP_BIN):
            message = payload
            message_op = opcode
        elif opcode == OP_CONT:
            message += payload
        if b1 & 0x80:  # FIN
            return message_op if message_op is not None else opcode, message
