"""Simulated deep-web source: an authenticated record server plus the client
used by the data subject.

The server speaks the framed protocol from props.wire on plain TCP and is
deliberately oblivious to attestors: proxied and direct sessions hit the
same code path. With ``signing_enabled`` the server additionally signs the
digest of every served record (the infrastructure-modification deployment
mode); by default it serves unsigned records like any portal behind TLS.
"""

from __future__ import annotations

import dataclasses
import socket
import threading

from . import wire
from .core import (
    DOMAIN_SOURCE_RECORD,
    DataRecord,
    Doc,
    KeyIdentity,
    SecretKey,
    hex_to_bytes,
    record_digest,
    sign,
)
from .errors import BindFailure, ConfigError, MalformedFrame, NonCanonicalValue


@dataclasses.dataclass(frozen=True)
class SourceDescriptor:
    source_id: str
    host: str
    port: int
    source_identity: KeyIdentity
    signing_enabled: bool = False


@dataclasses.dataclass(frozen=True)
class FetchRequest:
    subject_id: str
    credential: str
    record_type: str

    def __post_init__(self):
        if not self.credential:
            raise ConfigError("credential must be non-empty")

    def to_doc(self) -> Doc:
        return {
            "credential": self.credential,
            "op": "fetch",
            "record_type": self.record_type,
            "subject_id": self.subject_id,
        }


@dataclasses.dataclass(frozen=True)
class FetchResponse:
    record: DataRecord
    source_signature: bytes | None = None

    def to_doc(self) -> Doc:
        doc: dict = {"op": "record", "record": self.record.to_doc()}
        if self.source_signature is not None:
            doc["source_signature"] = self.source_signature.hex()
        return doc

    @classmethod
    def from_doc(cls, doc: Doc) -> "FetchResponse":
        if not isinstance(doc, dict) or doc.get("op") != "record":
            raise MalformedFrame("expected a record frame")
        try:
            record = DataRecord.from_doc(doc["record"])
        except (KeyError, NonCanonicalValue) as exc:
            raise MalformedFrame(f"bad record frame: {exc}") from exc
        sig_hex = doc.get("source_signature")
        signature = hex_to_bytes(sig_hex) if isinstance(sig_hex, str) else None
        return cls(record=record, source_signature=signature)


class RecordStore:
    """Read-only map of (subject_id, record_type) -> stored record fields.

    Credentials are per subject: one opaque bearer token each. ``fetched_at``
    is fixed at seeding time so that served content is byte-stable across
    runs and processes.
    """

    def __init__(self):
        self._records: dict[tuple[str, str], tuple[Doc, int]] = {}
        self._credentials: dict[str, str] = {}

    def seed_credential(self, subject_id: str, credential: str) -> None:
        self._credentials[subject_id] = credential

    def seed_record(self, subject_id: str, record_type: str, content: Doc, fetched_at: int) -> None:
        self._records[(subject_id, record_type)] = (content, fetched_at)

    @classmethod
    def from_doc(cls, doc: Doc) -> "RecordStore":
        store = cls()
        if not isinstance(doc, dict):
            raise ConfigError("record store config must be an object")
        for subject_id, credential in (doc.get("credentials") or {}).items():
            store.seed_credential(subject_id, credential)
        for entry in doc.get("records") or []:
            try:
                store.seed_record(
                    entry["subject_id"], entry["record_type"], entry["content"], entry["fetched_at"]
                )
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad record entry: {exc}") from exc
        return store

    def credential_ok(self, subject_id: str, credential: str) -> bool:
        return bool(credential) and self._credentials.get(subject_id) == credential

    def lookup(self, subject_id: str, record_type: str) -> tuple[Doc, int] | None:
        return self._records.get((subject_id, record_type))


class RecordServer:
    """Threaded TCP server answering one fetch per connection."""

    def __init__(self, descriptor: SourceDescriptor, store: RecordStore, secret: SecretKey | None = None):
        if descriptor.signing_enabled and secret is None:
            raise ConfigError("signing_enabled requires the source secret key")
        self.descriptor = descriptor
        self.store = store
        self._secret = secret
        self._sock: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._closed = threading.Event()

    @property
    def endpoint(self) -> tuple[str, int]:
        if self._sock is None:
            raise BindFailure("server not started")
        return self._sock.getsockname()[:2]

    def start(self) -> "RecordServer":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self.descriptor.host, self.descriptor.port))
        except OSError as exc:
            sock.close()
            raise BindFailure(f"cannot bind {self.descriptor.host}:{self.descriptor.port}: {exc}") from exc
        sock.listen(16)
        self._sock = sock
        self._thread = threading.Thread(target=self._accept_loop, daemon=True, name="record-server")
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._closed.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_one, args=(conn,), daemon=True).start()

    def _serve_one(self, conn: socket.socket) -> None:
        with conn:
            conn.settimeout(10.0)
            try:
                payload = wire.recv_frame(conn)
                if payload is None:
                    return
                request = wire.decode_frame(payload)
                response = self._answer(request)
            except MalformedFrame as exc:
                try:
                    wire.send_doc(conn, wire.error_doc(wire.ERR_MALFORMED, str(exc)))
                except Exception:
                    pass
                return
            except Exception:
                return
            try:
                wire.send_doc(conn, response)
            except Exception:
                pass

    def _answer(self, request: Doc) -> Doc:
        if not isinstance(request, dict) or request.get("op") != "fetch":
            return wire.error_doc(wire.ERR_MALFORMED, "expected a fetch frame")
        subject_id = request.get("subject_id")
        credential = request.get("credential")
        record_type = request.get("record_type")
        if not all(isinstance(v, str) for v in (subject_id, credential, record_type)):
            return wire.error_doc(wire.ERR_MALFORMED, "fetch fields must be strings")
        # Credential check first: a bad credential answers identically whether
        # or not the subject exists, so the error leaks nothing.
        if not self.store.credential_ok(subject_id, credential):
            return wire.error_doc(wire.ERR_AUTH_DENIED, "bad credential")
        stored = self.store.lookup(subject_id, record_type)
        if stored is None:
            return wire.error_doc(wire.ERR_NOT_FOUND, f"no {record_type} record")
        content, fetched_at = stored
        record = DataRecord(
            source_id=self.descriptor.source_id,
            subject_id=subject_id,
            content=content,
            content_type=record_type,
            fetched_at=fetched_at,
        )
        response = {"op": "record", "record": record.to_doc()}
        if self.descriptor.signing_enabled:
            assert self._secret is not None
            signature = sign(self._secret, DOMAIN_SOURCE_RECORD + record_digest(record).value)
            response["source_signature"] = signature.hex()
        return response

    def shutdown(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        if self._sock is not None:
            # shutdown() wakes the thread blocked in accept(); a bare close()
            # would leave the kernel socket listening until that call returned.
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def serve(descriptor: SourceDescriptor, store: RecordStore, secret: SecretKey | None = None) -> RecordServer:
    """Start a record server; the returned handle owns the listening port."""
    return RecordServer(descriptor, store, secret).start()


def fetch(host: str, port: int, request: FetchRequest, timeout: float = 5.0) -> FetchResponse:
    """One authenticated fetch against a running source."""
    sock = wire.connect(host, port, timeout=timeout)
    with sock:
        wire.send_doc(sock, request.to_doc())
        response = wire.recv_doc(sock)
    wire.raise_for_error(response)
    return FetchResponse.from_doc(response)
