"""Length-prefixed frame transport shared by the source server, the attestor
proxy, and the multi-process committee transport.

Frame format: 4-byte big-endian payload length, then the canonical encoding
of one message document. Frames above 16 MiB are rejected.
"""

from __future__ import annotations

import socket
import struct

from .core import Doc, canonical_decode, canonical_encode
from .errors import ConnectFailure, MalformedFrame, NonCanonicalValue

MAX_FRAME = 16 * 1024 * 1024

# Error codes carried in {"op": "error", "code": ..., "message": ...} frames.
ERR_AUTH_DENIED = "AuthDenied"
ERR_NOT_FOUND = "NotFound"
ERR_MALFORMED = "MalformedFrame"
ERR_UNKNOWN_SOURCE = "UnknownSource"


def connect(host: str, port: int, timeout: float = 5.0) -> socket.socket:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectFailure(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.settimeout(timeout)
    return sock


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout as exc:
            raise ConnectFailure("read timed out") from exc
        except OSError as exc:
            raise ConnectFailure(f"read failed: {exc}") from exc
        if not chunk:
            raise EOFError
        buf.extend(chunk)
    return bytes(buf)


def send_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise MalformedFrame(f"frame of {len(payload)} bytes exceeds the 16 MiB cap")
    try:
        sock.sendall(struct.pack(">I", len(payload)) + payload)
    except OSError as exc:
        raise ConnectFailure(f"write failed: {exc}") from exc


def recv_frame(sock: socket.socket) -> bytes | None:
    """One frame payload, or None if the peer closed at a frame boundary.

    EOF inside a frame and oversized lengths raise MalformedFrame.
    """
    try:
        header = _recv_exact(sock, 4)
    except EOFError:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise MalformedFrame(f"declared frame length {length} exceeds the 16 MiB cap")
    try:
        return _recv_exact(sock, length)
    except EOFError as exc:
        raise MalformedFrame("connection closed mid-frame") from exc


def send_doc(sock: socket.socket, doc: Doc) -> bytes:
    """Encode and send one message; returns the exact bytes put on the wire."""
    payload = canonical_encode(doc)
    send_frame(sock, payload)
    return payload


def recv_doc(sock: socket.socket) -> Doc:
    """Receive one message; the peer closing early is a malformed exchange."""
    payload = recv_frame(sock)
    if payload is None:
        raise MalformedFrame("connection closed before a frame arrived")
    return decode_frame(payload)


def decode_frame(payload: bytes) -> Doc:
    try:
        return canonical_decode(payload)
    except NonCanonicalValue as exc:
        raise MalformedFrame(f"frame payload is not canonical: {exc}") from exc


def error_doc(code: str, message: str) -> Doc:
    return {"op": "error", "code": code, "message": message}


def raise_for_error(doc: Doc) -> Doc:
    """Map an error frame onto the matching typed exception; pass others through."""
    from .errors import AttestorUnavailable, AuthDenied, NotFound

    if isinstance(doc, dict) and doc.get("op") == "error":
        code = doc.get("code")
        message = str(doc.get("message", ""))
        if code == ERR_AUTH_DENIED:
            raise AuthDenied(message)
        if code == ERR_NOT_FOUND:
            raise NotFound(message)
        if code == ERR_UNKNOWN_SOURCE:
            raise AttestorUnavailable(message)
        raise MalformedFrame(f"{code}: {message}")
    return doc
